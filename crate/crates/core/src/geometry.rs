//! Dyadic grids, intervals, tiles and trees in the time-frequency plane.
//!
//! Intervals are stored as integer `(scale, index)` pairs relative to a grid,
//! so every order and containment predicate is exact. Real endpoints are only
//! produced on request through [`DyadicGrid`].

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("intervals or tiles belong to different grids")]
    GridMismatch,
    #[error("intervals must lie on the same axis")]
    AxisMismatch,
    #[error("tree has no tiles")]
    EmptyTree,
    #[error("tile area is not one: time scale {time_scale}, frequency scale {freq_scale}")]
    AreaNotOne { time_scale: i32, freq_scale: i32 },
    #[error("tile {tile} is not below the top {top} in the {kind:?} order")]
    NotBelowTop { tile: Tile, top: Tile, kind: TreeKind },
    #[error("tiles {0} and {1} share a frequency interval but their offset is not a multiple of 20 lengths")]
    SparsityViolation(Tile, Tile),
    #[error("tile {0} lies outside the universe")]
    OutsideUniverse(Tile),
    #[error("time intervals have no common dyadic ancestor below the top scale")]
    NoCommonAncestor,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid universe: {0}")]
    InvalidUniverse(String),
}

/// Fingerprint of a grid's parameters; tiles from different grids never compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct GridKey(pub u64);

/// Translated and dilated dyadic grid.
///
/// Time intervals are `t + [n 2^k r, (n+1) 2^k r)`, frequency intervals at
/// scale `j` are `t_freq + [m 2^j / r, (m+1) 2^j / r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicGrid {
    pub t: f64,
    pub r: f64,
    #[serde(default)]
    pub t_freq: f64,
}

impl Default for DyadicGrid {
    fn default() -> Self {
        DyadicGrid { t: 0.0, r: 0.5, t_freq: 0.0 }
    }
}

fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb)
}

impl DyadicGrid {
    pub fn new(t: f64, r: f64, t_freq: f64) -> Result<Self, GeometryError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(GeometryError::InvalidGrid(format!("r must be positive and finite, got {r}")));
        }
        if !t.is_finite() || !t_freq.is_finite() {
            return Err(GeometryError::InvalidGrid("translations must be finite".into()));
        }
        Ok(DyadicGrid { t, r, t_freq })
    }

    pub fn key(&self) -> GridKey {
        let h = mix(mix(mix(0x5eed, self.t.to_bits()), self.r.to_bits()), self.t_freq.to_bits());
        GridKey(h)
    }

    pub fn time(&self, scale: i32, index: i64) -> DyadicInterval {
        DyadicInterval { grid: self.key(), axis: Axis::Time, scale, index }
    }

    pub fn freq(&self, scale: i32, index: i64) -> DyadicInterval {
        DyadicInterval { grid: self.key(), axis: Axis::Frequency, scale, index }
    }

    /// Tile with time interval `(k, n)` and frequency interval `(-k, m)`.
    pub fn tile(&self, k: i32, n: i64, m: i64) -> Tile {
        Tile { time: self.time(k, n), freq: self.freq(-k, m) }
    }

    pub fn length(&self, iv: &DyadicInterval) -> f64 {
        match iv.axis {
            Axis::Time => (iv.scale as f64).exp2() * self.r,
            Axis::Frequency => (iv.scale as f64).exp2() / self.r,
        }
    }

    pub fn left(&self, iv: &DyadicInterval) -> f64 {
        let origin = match iv.axis {
            Axis::Time => self.t,
            Axis::Frequency => self.t_freq,
        };
        origin + iv.index as f64 * self.length(iv)
    }

    pub fn right(&self, iv: &DyadicInterval) -> f64 {
        self.left(iv) + self.length(iv)
    }

    pub fn center(&self, iv: &DyadicInterval) -> f64 {
        self.left(iv) + 0.5 * self.length(iv)
    }

    /// Index of the interval at `scale` on `axis` containing the real point `x`.
    pub fn locate(&self, axis: Axis, scale: i32, x: f64) -> i64 {
        let probe = DyadicInterval { grid: self.key(), axis, scale, index: 0 };
        let origin = self.left(&probe);
        ((x - origin) / self.length(&probe)).floor() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    Time,
    Frequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DyadicInterval {
    pub grid: GridKey,
    pub axis: Axis,
    pub scale: i32,
    pub index: i64,
}

impl PartialOrd for DyadicInterval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DyadicInterval {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.scale, self.index, self.axis, self.grid).cmp(&(other.scale, other.index, other.axis, other.grid))
    }
}

impl DyadicInterval {
    fn compatible(&self, other: &DyadicInterval) -> Result<(), GeometryError> {
        if self.grid != other.grid {
            return Err(GeometryError::GridMismatch);
        }
        if self.axis != other.axis {
            return Err(GeometryError::AxisMismatch);
        }
        Ok(())
    }

    /// Ancestor at a coarser (or equal) scale.
    pub fn ancestor(&self, scale: i32) -> DyadicInterval {
        debug_assert!(scale >= self.scale);
        let shift = (scale - self.scale) as u32;
        let index = if shift >= 63 { if self.index < 0 { -1 } else { 0 } } else { self.index >> shift };
        DyadicInterval { scale, index, ..*self }
    }

    pub fn parent(&self) -> DyadicInterval {
        self.ancestor(self.scale + 1)
    }

    pub fn children(&self) -> [DyadicInterval; 2] {
        let lo = DyadicInterval { scale: self.scale - 1, index: 2 * self.index, ..*self };
        [lo, DyadicInterval { index: lo.index + 1, ..lo }]
    }

    /// Descendants at a finer scale, as an index range `[lo, hi)`.
    pub fn descendant_range(&self, scale: i32) -> (i64, i64) {
        debug_assert!(scale <= self.scale);
        let shift = (self.scale - scale) as u32;
        (self.index << shift, (self.index + 1) << shift)
    }

    /// `self ⊆ other`.
    pub fn subset_of(&self, other: &DyadicInterval) -> Result<bool, GeometryError> {
        self.compatible(other)?;
        Ok(self.subset_unchecked(other))
    }

    pub(crate) fn subset_unchecked(&self, other: &DyadicInterval) -> bool {
        self.scale <= other.scale && self.ancestor(other.scale).index == other.index
    }

    pub fn intersects(&self, other: &DyadicInterval) -> Result<bool, GeometryError> {
        self.compatible(other)?;
        Ok(self.intersects_unchecked(other))
    }

    pub(crate) fn intersects_unchecked(&self, other: &DyadicInterval) -> bool {
        self.subset_unchecked(other) || other.subset_unchecked(self)
    }

    /// Lower half (`d`, index `2m`) or upper half (`u`, index `2m+1`).
    pub fn half(&self, half: Half) -> DyadicInterval {
        let [lo, hi] = self.children();
        match half {
            Half::Down => lo,
            Half::Up => hi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Half {
    Down,
    Up,
}

/// Dyadic rectangle of area one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tile {
    pub time: DyadicInterval,
    pub freq: DyadicInterval,
}

impl std::fmt::Display for Tile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[k={}, n={}; kW={}, m={}]", self.time.scale, self.time.index, self.freq.scale, self.freq.index)
    }
}

/// Lexicographic in `(k_I, n_I, k_ω, n_ω)`; the deterministic iteration order.
impl Ord for Tile {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time.scale, self.time.index, self.freq.scale, self.freq.index, self.time.grid).cmp(&(
            other.time.scale,
            other.time.index,
            other.freq.scale,
            other.freq.index,
            other.time.grid,
        ))
    }
}

impl PartialOrd for Tile {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Tile {
    pub fn new(time: DyadicInterval, freq: DyadicInterval) -> Result<Tile, GeometryError> {
        if time.grid != freq.grid {
            return Err(GeometryError::GridMismatch);
        }
        if time.axis != Axis::Time || freq.axis != Axis::Frequency {
            return Err(GeometryError::AxisMismatch);
        }
        if time.scale + freq.scale != 0 {
            return Err(GeometryError::AreaNotOne { time_scale: time.scale, freq_scale: freq.scale });
        }
        Ok(Tile { time, freq })
    }

    pub fn grid(&self) -> GridKey {
        self.time.grid
    }

    pub fn scale(&self) -> i32 {
        self.time.scale
    }

    pub fn half(&self, half: Half) -> HalfTile {
        HalfTile { tile: *self, half }
    }

    pub fn down(&self) -> HalfTile {
        self.half(Half::Down)
    }

    pub fn up(&self) -> HalfTile {
        self.half(Half::Up)
    }

    fn same_grid(&self, other: &Tile) -> Result<(), GeometryError> {
        if self.grid() == other.grid() {
            Ok(())
        } else {
            Err(GeometryError::GridMismatch)
        }
    }

    /// `I ⊆ I'` and `ω ⊇ ω'`.
    pub(crate) fn le_unchecked(&self, other: &Tile) -> bool {
        self.time.subset_unchecked(&other.time) && other.freq.subset_unchecked(&self.freq)
    }

    pub(crate) fn le_half_unchecked(&self, other: &Tile, half: Half) -> bool {
        self.time.subset_unchecked(&other.time) && other.freq.half(half).subset_unchecked(&self.freq.half(half))
    }

    /// Whether the two rectangles overlap.
    pub fn intersects(&self, other: &Tile) -> bool {
        self.time.intersects_unchecked(&other.time) && self.freq.intersects_unchecked(&other.freq)
    }
}

/// One of the two halves `I × ω_d`, `I × ω_u` of a tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HalfTile {
    pub tile: Tile,
    pub half: Half,
}

impl HalfTile {
    pub fn freq(&self) -> DyadicInterval {
        self.tile.freq.half(self.half)
    }

    pub fn time(&self) -> DyadicInterval {
        self.tile.time
    }

    pub fn intersects(&self, other: &HalfTile) -> bool {
        self.time().intersects_unchecked(&other.time()) && self.freq().intersects_unchecked(&other.freq())
    }
}

/// `I ⊆ I'` and `ω ⊇ ω'` for the half-tile rectangles.
pub fn half_le(h: &HalfTile, h2: &HalfTile) -> Result<bool, GeometryError> {
    h.tile.same_grid(&h2.tile)?;
    Ok(h.time().subset_unchecked(&h2.time()) && h2.freq().subset_unchecked(&h.freq()))
}

pub fn tile_le(p: &Tile, q: &Tile) -> Result<bool, GeometryError> {
    p.same_grid(q)?;
    Ok(p.le_unchecked(q))
}

pub fn tile_le_d(p: &Tile, q: &Tile) -> Result<bool, GeometryError> {
    half_le(&p.down(), &q.down())
}

pub fn tile_le_u(p: &Tile, q: &Tile) -> Result<bool, GeometryError> {
    half_le(&p.up(), &q.up())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    General,
    Up,
    Down,
}

impl TreeKind {
    pub fn admits(&self, p: &Tile, top: &Tile) -> bool {
        match self {
            TreeKind::General => p.le_unchecked(top),
            TreeKind::Up => p.le_half_unchecked(top, Half::Up),
            TreeKind::Down => p.le_half_unchecked(top, Half::Down),
        }
    }
}

/// Finite set of tiles below a common top. The kind is stored and validated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tree {
    tiles: Vec<Tile>,
    top: Tile,
    kind: TreeKind,
}

impl Tree {
    pub fn new(tiles: impl IntoIterator<Item = Tile>, top: Tile, kind: TreeKind) -> Result<Tree, GeometryError> {
        let set: BTreeSet<Tile> = tiles.into_iter().collect();
        for p in &set {
            p.same_grid(&top)?;
            if !kind.admits(p, &top) {
                return Err(GeometryError::NotBelowTop { tile: *p, top, kind });
            }
        }
        Ok(Tree { tiles: set.into_iter().collect(), top, kind })
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn top(&self) -> &Tile {
        &self.top
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Members `P` with `P ≤_u top`.
    pub fn up_part(&self) -> Vec<Tile> {
        self.tiles.iter().copied().filter(|p| p.le_half_unchecked(&self.top, Half::Up)).collect()
    }

    pub fn minimal_top_interval(&self) -> Result<DyadicInterval, GeometryError> {
        minimal_top_interval(self)
    }
}

/// Smallest dyadic interval containing every `I_P` over which an admissible top
/// frequency exists for the tree's kind.
pub fn minimal_top_interval(tree: &Tree) -> Result<DyadicInterval, GeometryError> {
    minimal_top_for(&tree.tiles, tree.kind, tree.top.time.scale)
}

pub(crate) fn minimal_top_for(tiles: &[Tile], kind: TreeKind, max_scale: i32) -> Result<DyadicInterval, GeometryError> {
    let first = tiles.first().ok_or(GeometryError::EmptyTree)?;
    let mut hull = first.time;
    for p in &tiles[1..] {
        if hull.scale < p.time.scale {
            hull = hull.ancestor(p.time.scale);
        }
        while !p.time.subset_unchecked(&hull) {
            if hull.scale >= max_scale {
                return Err(GeometryError::NoCommonAncestor);
            }
            hull = hull.parent();
        }
    }
    // Intersection of the relevant frequency intervals; a chain for valid trees.
    let band = |p: &Tile| match kind {
        TreeKind::General => p.freq,
        TreeKind::Up => p.freq.half(Half::Up),
        TreeKind::Down => p.freq.half(Half::Down),
    };
    let mut common = band(first);
    for p in &tiles[1..] {
        let w = band(p);
        if w.subset_unchecked(&common) {
            common = w;
        } else if !common.subset_unchecked(&w) {
            return Err(GeometryError::NotBelowTop { tile: *p, top: *first, kind });
        }
    }
    // A top at time scale k has frequency scale -k; its half sits at -k-1.
    let needed = match kind {
        TreeKind::General => -common.scale,
        TreeKind::Up | TreeKind::Down => {
            let parity_ok = (common.index.rem_euclid(2) == 1) == (kind == TreeKind::Up);
            if parity_ok {
                -common.scale - 1
            } else {
                -common.scale
            }
        }
    };
    Ok(if needed > hull.scale { hull.ancestor(needed) } else { hull })
}

/// A quadruple breaking the disjointness property.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub tree: usize,
    pub tile: Tile,
    pub other_tree: usize,
    pub other_tile: Tile,
}

/// If `P ∈ T`, `P' ∈ T'` with `ω_P ⊆ ω_{P'_d}` then `I_{P'} ∩ I_T = ∅`.
pub fn check_disjointness_property(trees: &[Tree]) -> Result<(), Violation> {
    let tops: Vec<Option<DyadicInterval>> = trees.iter().map(|t| minimal_top_interval(t).ok()).collect();
    for (ti, tree) in trees.iter().enumerate() {
        let Some(top_interval) = tops[ti] else { continue };
        for p in tree.tiles() {
            for (tj, other) in trees.iter().enumerate() {
                for q in other.tiles() {
                    if p.freq.subset_unchecked(&q.freq.half(Half::Down))
                        && q.time.intersects_unchecked(&top_interval)
                    {
                        return Err(Violation { tree: ti, tile: *p, other_tree: tj, other_tile: *q });
                    }
                }
            }
        }
    }
    Ok(())
}

/// First pair of distinct tiles whose down-halves overlap, if any.
pub fn find_down_half_overlap(tiles: &[Tile]) -> Option<(Tile, Tile)> {
    for (i, p) in tiles.iter().enumerate() {
        for q in &tiles[i + 1..] {
            if p != q && p.down().intersects(&q.down()) {
                return Some((*p, *q));
            }
        }
    }
    None
}

pub fn down_halves_disjoint(collection: &TileCollection) -> bool {
    find_down_half_overlap(collection.tiles()).is_none()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("subtree under maximal tile {0} is not an up-tree")]
    NotUpTree(Tile),
    #[error("maximal tiles {0} and {1} have overlapping time intervals")]
    OverlappingSupports(Tile, Tile),
    #[error("tiles are not partitioned by the maximal tiles")]
    NotPartition,
}

/// Splits a tree into up-trees under its maximal tiles.
pub fn split_into_up_trees(tree: &Tree) -> Result<Vec<Tree>, SplitError> {
    let tiles = tree.tiles();
    let maximal: Vec<Tile> = tiles
        .iter()
        .copied()
        .filter(|p| !tiles.iter().any(|q| q != p && p.le_unchecked(q)))
        .collect();
    let mut assigned = vec![false; tiles.len()];
    let mut out = Vec::with_capacity(maximal.len());
    for top in &maximal {
        let mut members = Vec::new();
        for (i, p) in tiles.iter().enumerate() {
            if p.le_unchecked(top) {
                if assigned[i] {
                    return Err(SplitError::NotPartition);
                }
                assigned[i] = true;
                members.push(*p);
            }
        }
        if members.iter().any(|p| !p.le_half_unchecked(top, Half::Up)) {
            return Err(SplitError::NotUpTree(*top));
        }
        out.push(Tree { tiles: members, top: *top, kind: TreeKind::Up });
    }
    if assigned.iter().any(|a| !a) {
        return Err(SplitError::NotPartition);
    }
    for (i, a) in maximal.iter().enumerate() {
        for b in &maximal[i + 1..] {
            if a.time.intersects_unchecked(&b.time) {
                return Err(SplitError::OverlappingSupports(*a, *b));
            }
        }
    }
    Ok(out)
}

/// Among `P' ∈ ℙ` with `ω_{P'_d} ⊇ ω_P`, the `I_{P'}` are pairwise disjoint and avoid `I_T`.
pub fn disjoint_time_ancestors(p: &Tile, tiles: &[Tile], tree: &Tree) -> bool {
    let Ok(top_interval) = minimal_top_interval(tree) else { return false };
    let qualifying: Vec<&Tile> = tiles.iter().filter(|q| p.freq.subset_unchecked(&q.freq.half(Half::Down))).collect();
    for (i, a) in qualifying.iter().enumerate() {
        if a.time.intersects_unchecked(&top_interval) {
            return false;
        }
        for b in &qualifying[i + 1..] {
            if a.time.intersects_unchecked(&b.time) {
                return false;
            }
        }
    }
    true
}

/// Bounded region of the phase plane in which suprema are enumerated.
///
/// Time scales run over `[k_min, k_max]`; the time window is the index range
/// `[time_lo, time_hi)` at scale `k_max` and the frequency window is the index
/// range `[freq_lo, freq_hi)` at frequency scale `-k_min`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Universe {
    pub k_min: i32,
    pub k_max: i32,
    pub time_lo: i64,
    pub time_hi: i64,
    pub freq_lo: i64,
    pub freq_hi: i64,
}

impl Universe {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.k_min > self.k_max {
            return Err(GeometryError::InvalidUniverse(format!("k_min {} > k_max {}", self.k_min, self.k_max)));
        }
        if self.time_lo >= self.time_hi || self.freq_lo >= self.freq_hi {
            return Err(GeometryError::InvalidUniverse("empty time or frequency window".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Tile) -> bool {
        let k = p.scale();
        if k < self.k_min || k > self.k_max {
            return false;
        }
        let n = p.time.ancestor(self.k_max).index;
        let m = p.freq.ancestor(-self.k_min).index;
        (self.time_lo..self.time_hi).contains(&n) && (self.freq_lo..self.freq_hi).contains(&m)
    }

    /// Universe tiles `P' ≥ P`, in tile order.
    pub fn dominating(&self, p: &Tile) -> Vec<Tile> {
        let mut out = Vec::new();
        for k in p.scale()..=self.k_max {
            let time = p.time.ancestor(k);
            let (lo, hi) = p.freq.descendant_range(-k);
            for m in lo..hi {
                let q = Tile { time, freq: DyadicInterval { scale: -k, index: m, ..p.freq } };
                if self.contains(&q) {
                    out.push(q);
                }
            }
        }
        out
    }

    /// Every tile of the universe, in tile order.
    pub fn all_tiles(&self, grid: &DyadicGrid) -> Vec<Tile> {
        let mut out = Vec::new();
        for k in self.k_min..=self.k_max {
            let (t0, t1) = (self.time_lo << (self.k_max - k), self.time_hi << (self.k_max - k));
            let (f0, f1) = (self.freq_lo << (k - self.k_min), self.freq_hi << (k - self.k_min));
            for n in t0..t1 {
                for m in f0..f1 {
                    out.push(grid.tile(k, n, m));
                }
            }
        }
        out.sort();
        out
    }

    /// Same frequency window and scales, time window doubled to the right.
    pub fn doubled(&self) -> Universe {
        Universe { time_hi: self.time_hi + (self.time_hi - self.time_lo), ..*self }
    }
}

/// Finite tile set with its grid and universe; the 20-sparsity assumption is enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct TileCollection {
    grid: DyadicGrid,
    universe: Universe,
    tiles: Vec<Tile>,
}

impl TileCollection {
    pub fn new(grid: DyadicGrid, universe: Universe, tiles: impl IntoIterator<Item = Tile>) -> Result<Self, GeometryError> {
        universe.validate()?;
        let key = grid.key();
        let set: BTreeSet<Tile> = tiles.into_iter().collect();
        let tiles: Vec<Tile> = set.into_iter().collect();
        for p in &tiles {
            if p.grid() != key {
                return Err(GeometryError::GridMismatch);
            }
            if !universe.contains(p) {
                return Err(GeometryError::OutsideUniverse(*p));
            }
        }
        if let Some((a, b)) = find_sparsity_violation(&tiles) {
            return Err(GeometryError::SparsityViolation(a, b));
        }
        Ok(TileCollection { grid, universe, tiles })
    }

    pub fn empty(grid: DyadicGrid, universe: Universe) -> Self {
        TileCollection { grid, universe, tiles: Vec::new() }
    }

    pub fn grid(&self) -> &DyadicGrid {
        &self.grid
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Sub-collection with the same grid and universe; sparsity is inherited.
    pub fn subset(&self, tiles: impl IntoIterator<Item = Tile>) -> TileCollection {
        let set: BTreeSet<Tile> = tiles.into_iter().collect();
        TileCollection { grid: self.grid, universe: self.universe, tiles: set.into_iter().collect() }
    }
}

/// Two distinct tiles with equal `ω` whose time offset is not `20 n |I|`.
pub fn find_sparsity_violation(tiles: &[Tile]) -> Option<(Tile, Tile)> {
    // Neighbour checks suffice: congruence mod 20 is transitive.
    let mut by_freq: Vec<&Tile> = tiles.iter().collect();
    by_freq.sort_by_key(|p| (p.freq.scale, p.freq.index, p.time.index));
    for w in by_freq.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.freq == b.freq && a.time != b.time && (b.time.index - a.time.index).rem_euclid(20) != 0 {
            return Some((*a, *b));
        }
    }
    None
}

/// JSON form: `{grid: {t, r, t_freq}, tiles: [{kI, nI, kW, nW}], universe: {...}}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollectionFile {
    pub grid: DyadicGrid,
    pub tiles: Vec<TileRecord>,
    pub universe: Universe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRecord {
    #[serde(rename = "kI")]
    pub k_time: i32,
    #[serde(rename = "nI")]
    pub n_time: i64,
    #[serde(rename = "kW")]
    pub k_freq: i32,
    #[serde(rename = "nW")]
    pub n_freq: i64,
}

impl From<&Tile> for TileRecord {
    fn from(p: &Tile) -> Self {
        TileRecord { k_time: p.time.scale, n_time: p.time.index, k_freq: p.freq.scale, n_freq: p.freq.index }
    }
}

impl TileRecord {
    pub fn to_tile(&self, grid: &DyadicGrid) -> Result<Tile, GeometryError> {
        Tile::new(grid.time(self.k_time, self.n_time), grid.freq(self.k_freq, self.n_freq))
    }
}

impl From<&TileCollection> for CollectionFile {
    fn from(c: &TileCollection) -> Self {
        CollectionFile { grid: c.grid, tiles: c.tiles.iter().map(TileRecord::from).collect(), universe: c.universe }
    }
}

impl TryFrom<CollectionFile> for TileCollection {
    type Error = GeometryError;

    fn try_from(f: CollectionFile) -> Result<Self, Self::Error> {
        let grid = DyadicGrid::new(f.grid.t, f.grid.r, f.grid.t_freq)?;
        let tiles = f.tiles.iter().map(|rec| rec.to_tile(&grid)).collect::<Result<Vec<_>, _>>()?;
        TileCollection::new(grid, f.universe, tiles)
    }
}
