//! Density, energy and the tree selections built on them.
//!
//! Suprema over "all tiles `P' ≥ P`" run over the tiles of a bounded
//! [`Universe`]; suprema over subtrees run over complete trees
//! `{P ∈ ℙ : P ≤ top}` for every candidate top.

use crate::geometry::{
    check_disjointness_property, DyadicGrid, DyadicInterval, GeometryError, Half, Tile, TileRecord, Tree, TreeKind,
    Universe, Violation,
};
use crate::operators::{FrequencyChoice, MeasurableSet};
use crate::sampled::{lp_of_norms, SampledFunction, Window};
use crate::values::dual_pair;
use crate::wavelet::{weight_integral, PacketBank, WaveletError};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Pointwise slack for the amplitude preconditions `|f| ≤ 1_F`, `|g| ≤ 1_E`.
pub const AMPLITUDE_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("expected {expected} samples, got {got}")]
    Length { expected: usize, got: usize },
    #[error("energy exponent q must lie in (1, ∞), got {0}")]
    Exponent(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("amplitude precondition violated: {0}")]
    Amplitude(String),
    #[error("decomposition did not terminate after {iterations} splits (limit {limit})")]
    NonTermination { iterations: usize, limit: usize },
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `v_I(x) = |I|^{-1} (1 + |x - c(I)|/|I|)^{-10}`.
pub fn weight_v(grid: &DyadicGrid, interval: &DyadicInterval, x: f64) -> f64 {
    let len = grid.length(interval);
    let u = (x - grid.center(interval)).abs() / len;
    (1.0 + u).powi(-10) / len
}

/// Order in which selected trees are taken: lowest `c(ω_T)`, then leftmost
/// `I_T`, then shortest `I_T`.
fn selection_order(grid: &DyadicGrid, a: &Tile, b: &Tile) -> Ordering {
    let key = |t: &Tile| (grid.center(&t.freq), grid.left(&t.time), grid.length(&t.time));
    let (ka, kb) = (key(a), key(b));
    ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2)).then(a.cmp(b))
}

/// The set `E` and the frequency choice `N`, with per-tile caches.
#[derive(Debug)]
pub struct DensityContext {
    grid: DyadicGrid,
    universe: Universe,
    window: Window,
    set: MeasurableSet,
    choice: FrequencyChoice,
    /// `(N(x_j), j)` for `j ∈ E`, sorted by frequency.
    cells: Vec<(f64, usize)>,
    masses: Mutex<HashMap<Tile, f64>>,
    tile_density: Mutex<HashMap<Tile, f64>>,
}

impl DensityContext {
    pub fn new(
        grid: DyadicGrid,
        universe: Universe,
        window: Window,
        set: MeasurableSet,
        choice: FrequencyChoice,
    ) -> Result<Self, DecompositionError> {
        universe.validate()?;
        for got in [set.len(), choice.len()] {
            if got != window.len() {
                return Err(DecompositionError::Length { expected: window.len(), got });
            }
        }
        let mut cells: Vec<(f64, usize)> = set.iter().map(|j| (choice.values()[j], j)).collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(DensityContext {
            grid,
            universe,
            window,
            set,
            choice,
            cells,
            masses: Mutex::new(HashMap::new()),
            tile_density: Mutex::new(HashMap::new()),
        })
    }

    pub fn grid(&self) -> &DyadicGrid {
        &self.grid
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn set(&self) -> &MeasurableSet {
        &self.set
    }

    pub fn choice(&self) -> &FrequencyChoice {
        &self.choice
    }

    /// `|E|`.
    pub fn measure(&self) -> f64 {
        self.set.measure(&self.window)
    }

    /// Cells of `E` with `N(x_j) ∈ band`, in frequency order.
    pub fn cells_in_band(&self, band: &DyadicInterval) -> &[(f64, usize)] {
        let at = |x: f64| self.grid.locate(band.axis, band.scale, x);
        let lo = self.cells.partition_point(|c| at(c.0) < band.index);
        let hi = self.cells.partition_point(|c| at(c.0) <= band.index);
        &self.cells[lo..hi]
    }

    /// `∫_{E_P} v_{I_P}`, integrating `v` exactly over each sample cell of `E_P`.
    pub fn mass(&self, tile: &Tile) -> f64 {
        if let Some(m) = self.masses.lock().expect("mass cache poisoned").get(tile) {
            return *m;
        }
        let (h, c, len) = (self.window.step(), self.grid.center(&tile.time), self.grid.length(&tile.time));
        let m = self
            .cells_in_band(&tile.freq)
            .iter()
            .map(|&(_, j)| {
                let x = self.window.x(j);
                weight_integral(c, len, x, x + h)
            })
            .sum::<f64>();
        self.masses.lock().expect("mass cache poisoned").insert(*tile, m);
        m
    }

    /// `sup_{P' ≥ P} ∫_{E_{P'}} v_{I_{P'}}` over universe tiles.
    pub fn tile_density(&self, tile: &Tile) -> f64 {
        if let Some(d) = self.tile_density.lock().expect("density cache poisoned").get(tile) {
            return *d;
        }
        let d = self.universe.dominating(tile).iter().map(|q| self.mass(q)).fold(0.0, f64::max);
        self.tile_density.lock().expect("density cache poisoned").insert(*tile, d);
        d
    }

    pub fn density(&self, tiles: &[Tile]) -> f64 {
        tiles.iter().map(|p| self.tile_density(p)).fold(0.0, f64::max)
    }
}

/// The function `f`, the exponent `q`, and caches of coefficients and tile-sum norms.
#[derive(Debug)]
pub struct EnergyContext {
    f: SampledFunction,
    q: f64,
    bank: Arc<PacketBank>,
    universe: Universe,
    spectrum: Vec<Complex64>,
    coefficients: Mutex<HashMap<Tile, Arc<Vec<Complex64>>>>,
    integrals: Mutex<HashMap<Vec<Tile>, f64>>,
}

impl EnergyContext {
    pub fn new(f: SampledFunction, q: f64, bank: Arc<PacketBank>, universe: Universe) -> Result<Self, DecompositionError> {
        if !(q > 1.0 && q.is_finite()) {
            return Err(DecompositionError::Exponent(q));
        }
        universe.validate()?;
        f.window().check_same(bank.window()).map_err(WaveletError::from)?;
        let spectrum = f.spectrum();
        Ok(EnergyContext {
            f,
            q,
            bank,
            universe,
            spectrum,
            coefficients: Mutex::new(HashMap::new()),
            integrals: Mutex::new(HashMap::new()),
        })
    }

    pub fn function(&self) -> &SampledFunction {
        &self.f
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn bank(&self) -> &Arc<PacketBank> {
        &self.bank
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    /// Measure of the support of `f`, standing in for `|F|`.
    pub fn support_measure(&self) -> f64 {
        let h = self.f.window().step();
        h * self.f.pointwise_norms().iter().filter(|&&v| v > 0.0).count() as f64
    }

    /// `⟨f, φ_P⟩`, one entry per component.
    pub fn coefficient(&self, tile: &Tile) -> Result<Arc<Vec<Complex64>>, DecompositionError> {
        if let Some(c) = self.coefficients.lock().expect("coefficient cache poisoned").get(tile) {
            return Ok(Arc::clone(c));
        }
        let packet = self.bank.packet(tile)?;
        let c = Arc::new(packet.coefficient(&self.spectrum, self.f.components()));
        let mut cache = self.coefficients.lock().expect("coefficient cache poisoned");
        Ok(Arc::clone(cache.entry(*tile).or_insert(c)))
    }

    /// `Σ_P ⟨f, φ_P⟩ φ_P`.
    pub fn tile_sum(&self, tiles: &[Tile]) -> Result<SampledFunction, DecompositionError> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.spectrum.len()];
        for p in tiles {
            let coeff = self.coefficient(p)?;
            self.bank.packet(p)?.accumulate(&coeff, &mut acc);
        }
        Ok(SampledFunction::from_spectrum(*self.f.window(), self.f.kind(), acc))
    }

    fn compute_integral(&self, tiles: &[Tile]) -> Result<f64, DecompositionError> {
        let sum = self.tile_sum(tiles)?;
        Ok(lp_of_norms(&sum.pointwise_norms(), self.q, sum.window().step()).powf(self.q))
    }

    /// `∫ |Σ_{P} ⟨f, φ_P⟩ φ_P|^q` over a tile set.
    pub fn sum_integral(&self, tiles: &[Tile]) -> Result<f64, DecompositionError> {
        let mut key = tiles.to_vec();
        key.sort();
        key.dedup();
        if key.is_empty() {
            return Ok(0.0);
        }
        if let Some(v) = self.integrals.lock().expect("integral cache poisoned").get(&key) {
            return Ok(*v);
        }
        let v = self.compute_integral(&key)?;
        self.integrals.lock().expect("integral cache poisoned").insert(key, v);
        Ok(v)
    }

    /// Fills the integral cache for many tile sets in parallel.
    fn prefetch(&self, sets: &[Vec<Tile>]) -> Result<(), DecompositionError> {
        let missing: Vec<&Vec<Tile>> = {
            let cache = self.integrals.lock().expect("integral cache poisoned");
            let mut seen = BTreeSet::new();
            sets.iter().filter(|s| !s.is_empty() && !cache.contains_key(*s) && seen.insert(*s)).collect()
        };
        let values: Vec<Result<f64, DecompositionError>> =
            missing.par_iter().map(|s| self.compute_integral(s)).collect();
        let mut cache = self.integrals.lock().expect("integral cache poisoned");
        for (s, v) in missing.into_iter().zip(values) {
            cache.insert(s.clone(), v?);
        }
        Ok(())
    }

    fn delta_from_integral(&self, integral: f64, top: &Tile) -> f64 {
        let len = self.bank.grid().length(&top.time);
        (integral / len).powf(1.0 / self.q)
    }

    /// `Δ` of the tiles below `top`, using only the members `P ≤_u top`.
    pub fn delta(&self, tiles: &[Tile], top: &Tile) -> Result<f64, DecompositionError> {
        let up = up_members(tiles, top);
        Ok(self.delta_from_integral(self.sum_integral(&up)?, top))
    }

    /// `Δ(T)`; zero when the up-part is empty.
    pub fn tree_energy(&self, tree: &Tree) -> Result<f64, DecompositionError> {
        self.delta(tree.tiles(), tree.top())
    }

    /// `Δ` of every complete tree of `tiles`, keyed by top.
    pub fn complete_tree_deltas(&self, tiles: &[Tile]) -> Result<BTreeMap<Tile, f64>, DecompositionError> {
        let trees = complete_trees(&self.universe, tiles);
        let ups: Vec<Vec<Tile>> = trees.iter().map(|(top, members)| up_members(members, top)).collect();
        self.prefetch(&ups)?;
        let mut out = BTreeMap::new();
        for ((top, _), up) in trees.iter().zip(&ups) {
            out.insert(*top, self.delta_from_integral(self.sum_integral(up)?, top));
        }
        Ok(out)
    }

    /// `sup Δ` over complete trees.
    pub fn energy(&self, tiles: &[Tile]) -> Result<f64, DecompositionError> {
        Ok(self.complete_tree_deltas(tiles)?.values().fold(0.0, |m, &d| m.max(d)))
    }

    /// `sup Δ` over every subset of every complete tree; exponential, for tiny inputs.
    pub fn energy_exhaustive(&self, tiles: &[Tile]) -> Result<f64, DecompositionError> {
        let mut best = 0.0f64;
        for (top, members) in complete_trees(&self.universe, tiles) {
            let up = up_members(&members, &top);
            assert!(up.len() <= 16, "exhaustive energy is limited to 16 up-tiles per tree");
            for mask in 1u32..(1 << up.len()) {
                let subset: Vec<Tile> = (0..up.len()).filter(|i| mask >> i & 1 == 1).map(|i| up[i]).collect();
                best = best.max(self.delta_from_integral(self.sum_integral(&subset)?, &top));
            }
        }
        Ok(best)
    }
}

fn up_members(tiles: &[Tile], top: &Tile) -> Vec<Tile> {
    tiles.iter().copied().filter(|p| p.le_half_unchecked(top, Half::Up)).collect()
}

/// Candidate tops (members and the universe tiles above them) with their complete trees.
pub fn complete_trees(universe: &Universe, tiles: &[Tile]) -> BTreeMap<Tile, Vec<Tile>> {
    let mut out: BTreeMap<Tile, Vec<Tile>> = BTreeMap::new();
    let mut sorted = tiles.to_vec();
    sorted.sort();
    sorted.dedup();
    for p in &sorted {
        out.entry(*p).or_default();
        for top in universe.dominating(p) {
            out.entry(top).or_default();
        }
    }
    for (top, members) in out.iter_mut() {
        members.extend(sorted.iter().copied().filter(|p| p.le_unchecked(top)));
    }
    out
}

fn tree_len(grid: &DyadicGrid, tree: &Tree) -> f64 {
    grid.length(&tree.top().time)
}

fn check_amplitude(norms: &[f64], support: Option<&MeasurableSet>, what: &str) -> Result<(), DecompositionError> {
    for (j, &v) in norms.iter().enumerate() {
        if v > 1.0 + AMPLITUDE_SLACK {
            return Err(DecompositionError::Amplitude(format!("|{what}| = {v} > 1 at sample {j}")));
        }
        if let Some(s) = support {
            if v > 0.0 && !s.contains(j) {
                return Err(DecompositionError::Amplitude(format!("{what} is nonzero off its set at sample {j}")));
            }
        }
    }
    Ok(())
}

/// `|⟨f, φ_P⟩ ⟨φ_P, g 1_{N(·) ∈ ω_{P_u}}⟩|` for each tile, in input order.
///
/// `g` takes values in the dual of `f`'s value space and is read on `E` only.
/// The restricted `g` is transformed once per distinct band `ω_{P_u}`.
pub fn pairing_terms(
    tiles: &[Tile],
    g: &SampledFunction,
    dctx: &DensityContext,
    ectx: &EnergyContext,
) -> Result<Vec<f64>, DecompositionError> {
    let w = *dctx.window();
    w.check_same(g.window()).map_err(WaveletError::from)?;
    let mut by_band: BTreeMap<DyadicInterval, Vec<usize>> = BTreeMap::new();
    for (i, p) in tiles.iter().enumerate() {
        by_band.entry(p.freq.half(Half::Up)).or_default().push(i);
    }
    let mut out = vec![0.0; tiles.len()];
    for (band, members) in by_band {
        let mut weights = vec![0.0; w.len()];
        for &(_, j) in dctx.cells_in_band(&band) {
            weights[j] = 1.0;
        }
        let spectrum = g.mask(&weights).spectrum();
        for i in members {
            let a = ectx.coefficient(&tiles[i])?;
            let b = ectx.bank().packet(&tiles[i])?.coefficient(&spectrum, g.components());
            out[i] = dual_pair(&a, &b).norm();
        }
    }
    Ok(out)
}

/// `(Σ_{P∈T} |⟨f, φ_P⟩⟨φ_P, g 1_{N(·)∈ω_{P_u}}⟩|, density(T) energy(T) |I_T|)`.
pub fn tree_lemma_check(
    tree: &Tree,
    g: &SampledFunction,
    dctx: &DensityContext,
    ectx: &EnergyContext,
) -> Result<(f64, f64), DecompositionError> {
    check_amplitude(&ectx.function().pointwise_norms(), None, "f")?;
    check_amplitude(&g.pointwise_norms(), Some(dctx.set()), "g")?;
    let lhs: f64 = pairing_terms(tree.tiles(), g, dctx, ectx)?.iter().sum();
    let rhs = dctx.density(tree.tiles()) * ectx.energy(tree.tiles())? * tree_len(dctx.grid(), tree);
    Ok((lhs, rhs))
}

/// Result of a density or energy split.
#[derive(Clone, Debug)]
pub struct Split {
    /// Tiles left over; their functional is at most half the original.
    pub rest: Vec<Tile>,
    pub trees: Vec<Tree>,
    pub before: f64,
    /// Recomputed on `rest`.
    pub after: f64,
    /// `Σ_j |I_{T_j}|`.
    pub total_len: f64,
    /// `Σ_j |I_{T_j}|` divided by the bound's main term.
    pub constant: f64,
}

impl Split {
    pub fn halved(&self) -> bool {
        self.after <= self.before / 2.0
    }

    /// Whether the trees and the remainder partition `tiles` exactly.
    pub fn partitions(&self, tiles: &[Tile]) -> bool {
        let mut all: Vec<Tile> = self.rest.clone();
        for t in &self.trees {
            all.extend_from_slice(t.tiles());
        }
        all.sort();
        let mut want = tiles.to_vec();
        want.sort();
        want.dedup();
        all == want
    }

    /// Up-parts of the selected trees, each under its own top.
    pub fn up_trees(&self) -> Vec<Tree> {
        self.trees
            .iter()
            .map(|t| Tree::new(t.up_part(), *t.top(), TreeKind::Up).expect("up-part lies below the top"))
            .collect()
    }

    pub fn check_up_trees(&self) -> Result<(), Violation> {
        check_disjointness_property(&self.up_trees())
    }
}

fn sorted_unique(tiles: &[Tile]) -> Vec<Tile> {
    let mut v = tiles.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Removes the trees under maximal tiles `P'` with `∫_{E_{P'}} v_{I_{P'}} > density(ℙ)/2`.
pub fn density_split(tiles: &[Tile], ctx: &DensityContext) -> Split {
    let tiles = sorted_unique(tiles);
    let before = ctx.density(&tiles);
    let threshold = before / 2.0;
    let mut heavy: BTreeSet<Tile> = BTreeSet::new();
    if before > 0.0 {
        for p in &tiles {
            heavy.extend(ctx.universe().dominating(p).into_iter().filter(|q| ctx.mass(q) > threshold));
        }
    }
    let mut tops: Vec<Tile> =
        heavy.iter().copied().filter(|q| !heavy.iter().any(|r| r != q && q.le_unchecked(r))).collect();
    tops.sort_by(|a, b| selection_order(ctx.grid(), a, b));
    let mut rest = Vec::new();
    let mut groups: Vec<Vec<Tile>> = vec![Vec::new(); tops.len()];
    for p in &tiles {
        match tops.iter().position(|t| p.le_unchecked(t)) {
            Some(i) => groups[i].push(*p),
            None => rest.push(*p),
        }
    }
    let trees: Vec<Tree> = tops
        .iter()
        .zip(groups)
        .filter(|(_, g)| !g.is_empty())
        .map(|(top, g)| Tree::new(g, *top, TreeKind::General).expect("members lie below their top"))
        .collect();
    let after = ctx.density(&rest);
    let total_len: f64 = trees.iter().map(|t| tree_len(ctx.grid(), t)).sum();
    let e = ctx.measure();
    let constant = if e > 0.0 && total_len > 0.0 { total_len * before / e } else { 0.0 };
    Split { rest, trees, before, after, total_len, constant }
}

/// Repeatedly removes the complete tree with `Δ > energy(ℙ)/2` that comes first
/// in selection order, until none is left.
pub fn energy_split(tiles: &[Tile], ctx: &EnergyContext, alpha: f64) -> Result<Split, DecompositionError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DecompositionError::Alpha(alpha));
    }
    let grid = *ctx.bank().grid();
    let mut rest = sorted_unique(tiles);
    let before = ctx.energy(&rest)?;
    let threshold = before / 2.0;
    let mut trees = Vec::new();
    if before > 0.0 {
        loop {
            let deltas = ctx.complete_tree_deltas(&rest)?;
            let chosen = deltas
                .iter()
                .filter(|(_, &d)| d > threshold)
                .map(|(t, _)| *t)
                .min_by(|a, b| selection_order(&grid, a, b));
            let Some(top) = chosen else { break };
            let (members, kept): (Vec<Tile>, Vec<Tile>) = rest.iter().partition(|p| p.le_unchecked(&top));
            rest = kept;
            trees.push(Tree::new(members, top, TreeKind::General)?);
        }
    }
    let after = ctx.energy(&rest)?;
    let total_len: f64 = trees.iter().map(|t| tree_len(&grid, t)).sum();
    let f = ctx.support_measure();
    let constant = if f > 0.0 && total_len > 0.0 { total_len * before.powf(ctx.q() / alpha) / f } else { 0.0 };
    Ok(Split { rest, trees, before, after, total_len, constant })
}

/// Per-tree record of a decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub n: i32,
    pub j: usize,
    pub top: TileRecord,
    pub tiles: usize,
    pub len: f64,
    pub density: f64,
    pub energy: f64,
    /// Placed below the level at which it was selected.
    pub demoted: bool,
}

/// Trees `T_{n,j}` by level, plus the residual with zero density and energy.
#[derive(Clone, Debug)]
pub struct TileDecomposition {
    pub levels: BTreeMap<i32, Vec<Tree>>,
    pub residual: Vec<Tile>,
    pub summaries: Vec<TreeSummary>,
    pub e_measure: f64,
    pub f_measure: f64,
    pub q: f64,
    pub alpha: f64,
    pub splits: usize,
}

/// `|E| 2^{-n}`.
pub fn density_threshold(e_measure: f64, n: i32) -> f64 {
    e_measure * (-(n as f64)).exp2()
}

/// `|F|^{α/q} 2^{-nα/q}`.
pub fn energy_threshold(f_measure: f64, n: i32, q: f64, alpha: f64) -> f64 {
    (f_measure * (-(n as f64)).exp2()).powf(alpha / q)
}

/// Largest `n` with `value ≤ threshold(n)` for a threshold decreasing in `n`; `None` if `value = 0`.
fn largest_level(value: f64, threshold: impl Fn(i32) -> f64, guess: f64) -> Option<i32> {
    if value <= 0.0 {
        return None;
    }
    let mut n = guess.floor().clamp(-2000.0, 2000.0) as i32;
    while threshold(n) < value && n > -2100 {
        n -= 1;
    }
    while threshold(n + 1) >= value && n < 2100 {
        n += 1;
    }
    Some(n)
}

impl TileDecomposition {
    fn level_for(&self, density: f64, energy: f64) -> Option<i32> {
        let (e, f, q, a) = (self.e_measure, self.f_measure, self.q, self.alpha);
        let nd = largest_level(density, |n| density_threshold(e, n), (e / density).log2());
        let ne = largest_level(energy, |n| energy_threshold(f, n, q, a), (f / energy.powf(q / a)).log2());
        match (nd, ne) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }

    /// `Σ_j |I_{T_{n,j}}|` per level.
    pub fn tallies(&self) -> BTreeMap<i32, f64> {
        let mut out = BTreeMap::new();
        for s in &self.summaries {
            *out.entry(s.n).or_insert(0.0) += s.len;
        }
        out
    }

    /// `Σ_j |I_{T_{n,j}}| / 2^n` per level.
    pub fn constants(&self) -> BTreeMap<i32, f64> {
        self.tallies().into_iter().map(|(n, t)| (n, t * (-(n as f64)).exp2())).collect()
    }

    pub fn tree_count(&self) -> usize {
        self.levels.values().map(Vec::len).sum()
    }

    /// Whether trees and residual partition `tiles` exactly.
    pub fn partitions(&self, tiles: &[Tile]) -> bool {
        let mut all = self.residual.clone();
        for t in self.levels.values().flatten() {
            all.extend_from_slice(t.tiles());
        }
        all.sort();
        let before = all.len();
        all.dedup();
        before == all.len() && all == sorted_unique(tiles)
    }

    /// Whether every recorded tree satisfies both level bounds.
    pub fn bounds_hold(&self) -> bool {
        self.summaries.iter().all(|s| {
            s.density <= density_threshold(self.e_measure, s.n)
                && s.energy <= energy_threshold(self.f_measure, s.n, self.q, self.alpha)
        })
    }

    pub fn to_file(&self) -> DecompositionFile {
        let tallies = self.tallies();
        let constants = self.constants();
        DecompositionFile {
            e_measure: self.e_measure,
            f_measure: self.f_measure,
            q: self.q,
            alpha: self.alpha,
            splits: self.splits,
            levels: tallies
                .iter()
                .map(|(&n, &tally)| LevelRecord {
                    n,
                    tally,
                    constant: constants[&n],
                    trees: self.summaries.iter().filter(|s| s.n == n).cloned().collect(),
                })
                .collect(),
            residual: self.residual.iter().map(TileRecord::from).collect(),
        }
    }

    /// `n,j,len,density,energy` per tree.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "n,j,len,density,energy")?;
        for s in &self.summaries {
            writeln!(w, "{},{},{:e},{:e},{:e}", s.n, s.j, s.len, s.density, s.energy)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub n: i32,
    pub tally: f64,
    pub constant: f64,
    pub trees: Vec<TreeSummary>,
}

/// JSON form of a [`TileDecomposition`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFile {
    pub e_measure: f64,
    pub f_measure: f64,
    pub q: f64,
    pub alpha: f64,
    pub splits: usize,
    pub levels: Vec<LevelRecord>,
    pub residual: Vec<TileRecord>,
}

/// Alternates density and energy splits, filing each tree at the level whose
/// bounds it satisfies on recomputation.
///
/// At each step the current level is the largest `n` with
/// `density ≤ |E| 2^{-n}` and `energy ≤ |F|^{α/q} 2^{-nα/q}`; whichever
/// functional exceeds its level-`(n+1)` bound is split. A tree whose own
/// energy exceeds the level-`n` bound is moved down to the largest level it
/// satisfies.
pub fn full_decomposition(
    tiles: &[Tile],
    dctx: &DensityContext,
    ectx: &EnergyContext,
    alpha: f64,
) -> Result<TileDecomposition, DecompositionError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DecompositionError::Alpha(alpha));
    }
    let mut out = TileDecomposition {
        levels: BTreeMap::new(),
        residual: Vec::new(),
        summaries: Vec::new(),
        e_measure: dctx.measure(),
        f_measure: ectx.support_measure(),
        q: ectx.q(),
        alpha,
        splits: 0,
    };
    let mut current = sorted_unique(tiles);
    let u = dctx.universe();
    let limit = current.len() + (u.k_max - u.k_min + 1) as usize;
    loop {
        let d = dctx.density(&current);
        let e = ectx.energy(&current)?;
        let Some(n) = out.level_for(d, e) else { break };
        if out.splits >= limit {
            return Err(DecompositionError::NonTermination { iterations: out.splits, limit });
        }
        let split = if d > density_threshold(out.e_measure, n + 1) {
            density_split(&current, dctx)
        } else {
            energy_split(&current, ectx, alpha)?
        };
        out.splits += 1;
        for tree in split.trees {
            let td = dctx.density(tree.tiles());
            let te = ectx.energy(tree.tiles())?;
            let level = out.level_for(td, te).map_or(n, |m| m.min(n));
            let bucket = out.levels.entry(level).or_default();
            out.summaries.push(TreeSummary {
                n: level,
                j: bucket.len(),
                top: TileRecord::from(tree.top()),
                tiles: tree.len(),
                len: tree_len(dctx.grid(), &tree),
                density: td,
                energy: te,
                demoted: level < n,
            });
            bucket.push(tree);
        }
        current = split.rest;
    }
    out.residual = current;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::values::ValueKind;
    use crate::wavelet::{pair, MotherWavelet};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn bank() -> Arc<PacketBank> {
        static BANK: OnceLock<Arc<PacketBank>> = OnceLock::new();
        BANK.get_or_init(|| {
            let mother = Arc::new(MotherWavelet::build(16384, 512.0).unwrap());
            Arc::new(PacketBank::new(mother, DyadicGrid::default()))
        })
        .clone()
    }

    fn universe() -> Universe {
        Universe { k_min: 0, k_max: 2, time_lo: -8, time_hi: 8, freq_lo: 0, freq_hi: 2 }
    }

    /// Deterministic sparse collection drawn from the test universe.
    fn collection(seed: u64, count: usize) -> Vec<Tile> {
        let g = DyadicGrid::default();
        let all = universe().all_tiles(&g);
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut picked: Vec<Tile> = Vec::new();
        for _ in 0..count * 8 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let p = all[(state >> 33) as usize % all.len()];
            let clash = picked.iter().any(|q| {
                q.freq == p.freq && q.time != p.time && (q.time.index - p.time.index).rem_euclid(20) != 0
            });
            if !clash && !picked.contains(&p) {
                picked.push(p);
            }
            if picked.len() == count {
                break;
            }
        }
        picked.sort();
        picked
    }

    fn test_f(scale: f64) -> SampledFunction {
        let w = *bank().window();
        SampledFunction::scalar_from_fn(w, |x| {
            if (-12.0..10.0).contains(&x) {
                Complex64::from_polar(scale, 2.0 * std::f64::consts::PI * (1.3 * x + 0.05 * x * x))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    fn dctx(set: MeasurableSet, n_of: impl Fn(f64) -> f64) -> DensityContext {
        let w = *bank().window();
        let choice = FrequencyChoice::new(w.xs().into_iter().map(n_of).collect()).unwrap();
        DensityContext::new(DyadicGrid::default(), universe(), w, set, choice).unwrap()
    }

    fn default_dctx() -> DensityContext {
        let w = *bank().window();
        dctx(MeasurableSet::interval(&w, -10.0, 14.0), |x| 2.0 + 1.9 * (0.37 * x).sin())
    }

    fn ectx(f: SampledFunction) -> EnergyContext {
        EnergyContext::new(f, 2.0, bank(), universe()).unwrap()
    }

    #[test]
    fn weight_at_center_and_one_length_away() {
        let g = DyadicGrid::default();
        let iv = g.time(2, 3);
        let (c, len) = (g.center(&iv), g.length(&iv));
        assert_eq!(weight_v(&g, &iv, c), 1.0 / len);
        assert!((weight_v(&g, &iv, c + len) - (1.0 / len) * 2f64.powi(-10)).abs() < 1e-15);
    }

    #[test]
    fn weight_quadrature_matches_improper_integral() {
        let g = DyadicGrid::default();
        let w = *bank().window();
        let whole = 2.0 / 9.0;
        let full = dctx(MeasurableSet::full(w.len()), |_| 0.1);
        for p in [g.tile(0, 0, 0), g.tile(2, -3, 0), g.tile(4, 1, 0)] {
            let cells = full.mass(&p);
            assert!((cells - whole).abs() / whole < 0.02, "{cells}");
        }
        // Plain midpoint sums are accurate once v is resolved by the grid.
        let iv = g.time(4, 1);
        let h = w.step();
        let mid: f64 = (0..w.len()).map(|j| weight_v(&g, &iv, w.x(j) + h / 2.0)).sum::<f64>() * h;
        assert!((mid - whole).abs() / whole < 0.02, "{mid}");
    }

    #[test]
    fn density_of_empty_set_is_zero() {
        let w = *bank().window();
        let ctx = dctx(MeasurableSet::empty(w.len()), |_| 1.0);
        assert_eq!(ctx.density(&collection(1, 20)), 0.0);
    }

    #[test]
    fn single_tile_density_matches_closed_form() {
        let g = DyadicGrid::default();
        let p = g.tile(0, 3, 1);
        let w = *bank().window();
        let n = g.center(&p.freq);
        let set = MeasurableSet::interval(&w, g.left(&p.time), g.right(&p.time));
        let u = Universe { k_min: 0, k_max: 0, time_lo: -8, time_hi: 8, freq_lo: 0, freq_hi: 4 };
        let choice = FrequencyChoice::constant(&w, n);
        let ctx = DensityContext::new(g, u, w, set, choice).unwrap();
        let exact = weight_integral(g.center(&p.time), g.length(&p.time), g.left(&p.time), g.right(&p.time));
        let got = ctx.density(&[p]);
        assert!((got - exact).abs() / exact < 0.01, "{got} vs {exact}");
    }

    #[test]
    fn tree_energy_of_zero_function_vanishes() {
        let ctx = ectx(test_f(0.0));
        let tiles = collection(2, 12);
        assert_eq!(ctx.energy(&tiles).unwrap(), 0.0);
    }

    #[test]
    fn energy_of_empty_collection_is_zero() {
        assert_eq!(ectx(test_f(1.0)).energy(&[]).unwrap(), 0.0);
    }

    #[test]
    fn energy_is_homogeneous() {
        let tiles = collection(3, 15);
        let a = ectx(test_f(1.0)).energy(&tiles).unwrap();
        let b = ectx(test_f(0.25)).energy(&tiles).unwrap();
        assert!(a > 0.0);
        assert!((b - 0.25 * a).abs() < 1e-12 * a);
    }

    #[test]
    fn single_up_tile_delta_matches_direct_quadrature() {
        let g = DyadicGrid::default();
        let p = g.tile(0, 2, 0);
        let top = g.tile(1, 1, 1);
        assert!(p.le_half_unchecked(&top, Half::Up));
        let f = test_f(1.0);
        let ctx = ectx(f.clone());
        let got = ctx.delta(&[p], &top).unwrap();
        let packet = bank().packet(&p).unwrap();
        let a = pair(&f, &packet).unwrap()[0].norm();
        let h = f.window().step();
        let integral: f64 = packet.time_samples().iter().map(|z| (a * z.norm()).powi(2)).sum::<f64>() * h;
        let want = (integral / g.length(&top.time)).sqrt();
        assert!((got - want).abs() / want < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn down_tiles_do_not_contribute() {
        let g = DyadicGrid::default();
        let top = g.tile(1, 1, 0);
        let down = g.tile(0, 2, 0);
        assert!(down.le_unchecked(&top) && !down.le_half_unchecked(&top, Half::Up));
        assert_eq!(ectx(test_f(1.0)).delta(&[down], &top).unwrap(), 0.0);
    }

    #[test]
    fn exhaustive_energy_dominates_complete_trees() {
        let tiles = collection(4, 8);
        let ctx = ectx(test_f(1.0));
        assert!(ctx.energy_exhaustive(&tiles).unwrap() >= ctx.energy(&tiles).unwrap());
    }

    #[test]
    fn tree_lemma_sides_vanish_on_trivial_inputs() {
        let g = DyadicGrid::default();
        let top = g.tile(2, 0, 0);
        let tree = Tree::new([g.tile(0, 1, 0), g.tile(1, 0, 0), top], top, TreeKind::General).unwrap();
        let w = *bank().window();
        let d = default_dctx();
        let gfun = SampledFunction::from_components(w, ValueKind::Scalar, d.set().indicator().into_iter().map(Complex64::from).collect()).unwrap();
        let (lhs, _) = tree_lemma_check(&tree, &gfun, &d, &ectx(test_f(0.0))).unwrap();
        assert_eq!(lhs, 0.0);
        let empty = dctx(MeasurableSet::empty(w.len()), |_| 1.0);
        let zero = SampledFunction::zeros(w, ValueKind::Scalar);
        let (lhs, rhs) = tree_lemma_check(&tree, &zero, &empty, &ectx(test_f(1.0))).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    #[test]
    fn tree_lemma_rejects_large_g() {
        let g = DyadicGrid::default();
        let top = g.tile(1, 0, 0);
        let tree = Tree::new([top], top, TreeKind::General).unwrap();
        let w = *bank().window();
        let d = default_dctx();
        let big = SampledFunction::scalar_from_fn(w, |_| Complex64::new(2.0, 0.0));
        assert!(matches!(
            tree_lemma_check(&tree, &big, &d, &ectx(test_f(1.0))),
            Err(DecompositionError::Amplitude(_))
        ));
    }

    #[test]
    fn density_split_with_empty_set_keeps_everything() {
        let w = *bank().window();
        let ctx = dctx(MeasurableSet::empty(w.len()), |_| 1.0);
        let tiles = collection(5, 20);
        let s = density_split(&tiles, &ctx);
        assert!(s.trees.is_empty());
        assert_eq!(s.rest, tiles);
    }

    #[test]
    fn density_split_halves_and_partitions() {
        let ctx = default_dctx();
        for seed in 0..10 {
            let tiles = collection(seed, 25);
            let s = density_split(&tiles, &ctx);
            assert!(s.before > 0.0);
            assert!(s.halved(), "{} -> {}", s.before, s.after);
            assert!(s.partitions(&tiles));
            assert!(!s.trees.is_empty());
        }
    }

    #[test]
    fn energy_split_of_zero_function_selects_nothing() {
        let tiles = collection(6, 20);
        let s = energy_split(&tiles, &ectx(test_f(0.0)), 0.9).unwrap();
        assert!(s.trees.is_empty());
        assert_eq!(s.rest, tiles);
    }

    #[test]
    fn energy_split_halves_partitions_and_keeps_disjointness() {
        let ctx = ectx(test_f(1.0));
        for seed in 0..6 {
            let tiles = collection(seed, 25);
            let s = energy_split(&tiles, &ctx, 0.9).unwrap();
            assert!(s.halved(), "{} -> {}", s.before, s.after);
            assert!(s.partitions(&tiles));
            s.check_up_trees().unwrap();
        }
    }

    #[test]
    fn energy_split_rejects_bad_alpha() {
        assert!(matches!(energy_split(&[], &ectx(test_f(1.0)), 1.5), Err(DecompositionError::Alpha(_))));
    }

    #[test]
    fn empty_decomposition() {
        let d = full_decomposition(&[], &default_dctx(), &ectx(test_f(1.0)), 0.9).unwrap();
        assert_eq!(d.tree_count(), 0);
        assert!(d.residual.is_empty());
    }

    #[test]
    fn decomposition_conserves_tiles_and_meets_bounds() {
        let dc = default_dctx();
        let ec = ectx(test_f(1.0));
        for seed in 0..5 {
            let tiles = collection(seed + 20, 25);
            let d = full_decomposition(&tiles, &dc, &ec, 0.9).unwrap();
            assert!(d.partitions(&tiles));
            assert!(d.bounds_hold());
            assert_eq!(dc.density(&d.residual), 0.0);
            assert_eq!(ec.energy(&d.residual).unwrap(), 0.0);
        }
    }

    #[test]
    fn decomposition_file_round_trips() {
        let tiles = collection(30, 15);
        let d = full_decomposition(&tiles, &default_dctx(), &ectx(test_f(1.0)), 0.9).unwrap();
        let file = d.to_file();
        let text = serde_json::to_string(&file).unwrap();
        let back: DecompositionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        let mut csv = Vec::new();
        d.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), d.tree_count() + 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn density_is_monotone(seed in 0u64..1000, a in 1usize..20, b in 0usize..20) {
            let ctx = default_dctx();
            let big = collection(seed, a + b);
            let small: Vec<Tile> = big.iter().copied().take(a).collect();
            prop_assert!(ctx.density(&small) <= ctx.density(&big));
        }
    }
}
