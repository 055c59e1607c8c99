//! Seeded tile ensembles and the ratio experiments measured on them.

use crate::decomposition::{pairing_terms, DecompositionError, DensityContext, EnergyContext};
use crate::geometry::{
    check_disjointness_property, find_sparsity_violation, minimal_top_interval, split_into_up_trees, DyadicGrid, DyadicInterval,
    GeometryError, Half, SplitError, Tile, Tree, TreeKind, Universe,
};
use crate::operators::{self, maximal_average, FrequencyChoice, MeasurableSet, OperatorError};
use crate::sampled::{SampledFunction, Window};
use crate::values::{conjugate_exponent, ValueError, ValueKind};
use crate::wavelet::{PacketBank, WaveletError};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::Arc;
use thiserror::Error;

/// Allowed growth of a maximal ratio per doubling of the universe.
pub const STABILITY_DRIFT: f64 = 0.25;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("only {placed} of {requested} tree tops fit in the universe")]
    Capacity { placed: usize, requested: usize },
    #[error("invalid ensemble spec: {0}")]
    InvalidSpec(String),
    #[error("experiment needs a Hilbert-valued function, got {0:?}")]
    WrongKind(ValueKind),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("lambda must be positive, got {0}")]
    Lambda(f64),
    #[error("set sizes do not fit the case: {0}")]
    Sets(String),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Split(#[from] SplitError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub seed: u64,
    pub trees: usize,
    pub tiles_per_tree: usize,
    pub universe: Universe,
    pub kind: ValueKind,
    pub q: f64,
    pub alpha: f64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), LabError> {
        self.universe.validate()?;
        self.kind.validate()?;
        if self.trees == 0 || self.tiles_per_tree == 0 {
            return Err(LabError::InvalidSpec("tree count and tiles per tree must be positive".into()));
        }
        if !(self.q > 1.0 && self.q.is_finite()) {
            return Err(LabError::InvalidSpec(format!("q must lie in (1, ∞), got {}", self.q)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LabError::InvalidSpec(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Up-trees satisfying the disjointness property, with the generation log.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub trees: Vec<Tree>,
    /// Tiles drawn before eviction.
    pub drawn: usize,
    pub evicted: usize,
    /// Trees that lost every tile to eviction.
    pub emptied: usize,
}

impl Ensemble {
    /// Union of all trees, sorted.
    pub fn tiles(&self) -> Vec<Tile> {
        let set: BTreeSet<Tile> = self.trees.iter().flat_map(|t| t.tiles().iter().copied()).collect();
        set.into_iter().collect()
    }

    /// `Σ_T |I_T|` with `I_T` the minimal top interval.
    pub fn total_len(&self, grid: &DyadicGrid) -> f64 {
        self.trees.iter().map(|t| tree_support(grid, t)).sum()
    }
}

fn tree_support(grid: &DyadicGrid, tree: &Tree) -> f64 {
    let iv = minimal_top_interval(tree).unwrap_or(tree.top().time);
    grid.length(&iv)
}

fn time_range(u: &Universe, k: i32) -> (i64, i64) {
    (u.time_lo << (u.k_max - k), u.time_hi << (u.k_max - k))
}

fn freq_range(u: &Universe, k: i32) -> (i64, i64) {
    (u.freq_lo << (k - u.k_min), u.freq_hi << (k - u.k_min))
}

/// Draws tops with disjoint supports within each frequency stratum, fills
/// their up-trees at random, then evicts tiles in a fixed order until the
/// family is 20-sparse and has the disjointness property.
pub fn random_disjprop_collection(spec: &EnsembleSpec, grid: &DyadicGrid) -> Result<Ensemble, LabError> {
    spec.validate()?;
    let u = spec.universe;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let low = (u.k_min + 1).min(u.k_max);
    let mut tops: Vec<Tile> = Vec::new();
    for _ in 0..64 * spec.trees {
        if tops.len() == spec.trees {
            break;
        }
        let k = rng.gen_range(low..=u.k_max);
        let (t0, t1) = time_range(&u, k);
        let (f0, f1) = freq_range(&u, k);
        let top = grid.tile(k, rng.gen_range(t0..t1), rng.gen_range(f0..f1));
        let clash = tops.iter().any(|t| {
            let nested = t.freq.subset_unchecked(&top.freq) || top.freq.subset_unchecked(&t.freq);
            nested && t.time.intersects_unchecked(&top.time)
        });
        if !clash {
            tops.push(top);
        }
    }
    if tops.len() < spec.trees {
        return Err(LabError::Capacity { placed: tops.len(), requested: spec.trees });
    }

    let mut used: BTreeSet<Tile> = BTreeSet::new();
    let mut members: Vec<Vec<Tile>> = Vec::with_capacity(tops.len());
    for top in &tops {
        let mut candidates = Vec::new();
        for k in u.k_min..=top.scale() {
            let freq = top.freq.ancestor(-k);
            let (lo, hi) = top.time.descendant_range(k);
            for n in lo..hi {
                let p = Tile { time: grid.time(k, n), freq };
                if p.le_half_unchecked(top, Half::Up) && u.contains(&p) && !used.contains(&p) {
                    candidates.push(p);
                }
            }
        }
        candidates.shuffle(&mut rng);
        candidates.truncate(spec.tiles_per_tree);
        candidates.sort();
        used.extend(candidates.iter().copied());
        members.push(candidates);
    }
    let drawn: usize = members.iter().map(Vec::len).sum();
    let mut evicted = 0;

    // Sparsity: keep the first tile of each residue class per frequency interval.
    let mut kept: BTreeMap<_, i64> = BTreeMap::new();
    for tree in members.iter_mut() {
        tree.retain(|p| {
            let key = (p.freq.scale, p.freq.index);
            match kept.get(&key) {
                Some(&n) if (p.time.index - n).rem_euclid(20) != 0 => {
                    evicted += 1;
                    false
                }
                Some(_) => true,
                None => {
                    kept.insert(key, p.time.index);
                    true
                }
            }
        });
    }
    debug_assert!(find_sparsity_violation(&members.concat()).is_none());

    loop {
        let trees: Vec<Tree> = tops
            .iter()
            .zip(&members)
            .map(|(top, m)| Tree::new(m.iter().copied(), *top, TreeKind::Up))
            .collect::<Result<_, _>>()?;
        let Err(v) = check_disjointness_property(&trees) else { break };
        let (ti, tile) = if members[v.other_tree].len() > 1 || members[v.tree].len() <= 1 {
            (v.other_tree, v.other_tile)
        } else {
            (v.tree, v.tile)
        };
        members[ti].retain(|p| *p != tile);
        evicted += 1;
    }
    let emptied = members.iter().filter(|m| m.is_empty()).count();
    let trees = tops
        .iter()
        .zip(members)
        .filter(|(_, m)| !m.is_empty())
        .map(|(top, m)| Tree::new(m, *top, TreeKind::Up))
        .collect::<Result<_, _>>()?;
    Ok(Ensemble { trees, drawn, evicted, emptied })
}

/// Real time span `[lo, hi)` of a universe.
pub fn time_span(grid: &DyadicGrid, u: &Universe) -> (f64, f64) {
    (grid.left(&grid.time(u.k_max, u.time_lo)), grid.left(&grid.time(u.k_max, u.time_hi)))
}

/// Real frequency span `[lo, hi)` of a universe.
pub fn freq_span(grid: &DyadicGrid, u: &Universe) -> (f64, f64) {
    (grid.left(&grid.freq(-u.k_min, u.freq_lo)), grid.left(&grid.freq(-u.k_min, u.freq_hi)))
}

/// Union of `pieces` cell-aligned intervals of total length `fraction · (hi - lo)`.
pub fn random_set(rng: &mut impl Rng, window: &Window, span: (f64, f64), fraction: f64, pieces: usize) -> MeasurableSet {
    let h = window.step();
    let first = window.cell(span.0).unwrap_or(0);
    let cells = ((span.1 - span.0) / h).round() as usize;
    let piece = ((fraction * cells as f64 / pieces.max(1) as f64).round() as usize).clamp(1, cells);
    let mut set = MeasurableSet::empty(window.len());
    for _ in 0..pieces {
        let start = first + rng.gen_range(0..=cells - piece);
        for j in start..start + piece {
            set.insert(j);
        }
    }
    set
}

fn clip(f: &mut SampledFunction, support: &MeasurableSet) {
    let norms = f.pointwise_norms();
    let weights: Vec<f64> = norms
        .iter()
        .enumerate()
        .map(|(j, &v)| if !support.contains(j) { 0.0 } else if v > 1.0 { 1.0 / v } else { 1.0 })
        .collect();
    *f = f.mask(&weights);
}

/// Band-limited random `f` shaped to `|f| ≤ 1_F`.
///
/// Two rounds of clipping to `F` and projecting back onto the band are
/// followed by a final clip; the returned residual is the largest excess
/// `|f| - 1_F` before that final clip.
pub fn random_function(
    rng: &mut impl Rng,
    window: &Window,
    kind: ValueKind,
    band: (f64, f64),
    support: &MeasurableSet,
    terms: usize,
) -> Result<(SampledFunction, f64), LabError> {
    let n = window.len();
    let comps = kind.components();
    let dxi = window.freq_step();
    let (k0, k1) = ((band.0 / dxi).ceil() as i64, (band.1 / dxi).floor() as i64);
    if k1 <= k0 {
        return Err(LabError::Degenerate(format!("empty band [{}, {}]", band.0, band.1)));
    }
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n * comps];
    for _ in 0..terms {
        let k = crate::fourier::bin(rng.gen_range(k0..k1), n);
        for c in 0..comps {
            spectrum[c * n + k] += Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    let mut f = SampledFunction::from_spectrum(*window, kind, spectrum);
    let peak = support.iter().map(|j| kind.norm(&f.value_at(j))).fold(0.0, f64::max);
    if peak > 0.0 {
        f = f.scaled(Complex64::new(1.0 / peak, 0.0));
    }
    for _ in 0..2 {
        clip(&mut f, support);
        f = operators::partial_sum(&f, band.0, band.1)?;
    }
    let residual = f
        .pointwise_norms()
        .iter()
        .enumerate()
        .map(|(j, &v)| v - if support.contains(j) { 1.0 } else { 0.0 })
        .fold(0.0, f64::max);
    clip(&mut f, support);
    Ok((f, residual))
}

/// Random `g` of unit dual norm on `E` and zero elsewhere.
pub fn random_dual(rng: &mut impl Rng, window: &Window, kind: ValueKind, set: &MeasurableSet) -> SampledFunction {
    let dual = kind.dual();
    let mut g = SampledFunction::zeros(*window, dual);
    let mut v = vec![Complex64::new(0.0, 0.0); dual.components()];
    for j in set.iter() {
        loop {
            v.iter_mut().for_each(|z| *z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let norm = dual.norm(&v);
            if norm > 1e-6 {
                v.iter_mut().for_each(|z| *z /= norm);
                break;
            }
        }
        g.set_value(j, &v);
    }
    g
}

/// Piecewise-constant random `N` with values in `band`, constant on blocks of cells.
pub fn random_choice(rng: &mut impl Rng, window: &Window, band: (f64, f64), block: usize) -> FrequencyChoice {
    let block = block.max(1);
    let mut values = Vec::with_capacity(window.len());
    let mut current = band.0;
    for j in 0..window.len() {
        if j % block == 0 {
            current = rng.gen_range(band.0..band.1);
        }
        values.push(current);
    }
    FrequencyChoice::new(values).expect("finite frequencies")
}

fn is_hilbert(kind: ValueKind) -> bool {
    match kind {
        ValueKind::Scalar | ValueKind::Hilbert { .. } => true,
        ValueKind::Schatten { p, .. } => p == 2.0,
    }
}

fn require_hilbert(ctx: &EnergyContext) -> Result<(), LabError> {
    let kind = ctx.function().kind();
    if is_hilbert(kind) {
        Ok(())
    } else {
        Err(LabError::WrongKind(kind))
    }
}

fn coefficient_norm(ctx: &EnergyContext, p: &Tile) -> Result<f64, LabError> {
    let a = ctx.coefficient(p)?;
    Ok(ctx.function().kind().norm(&a))
}

/// `|⟨f, φ_P⟩| / |I_P|^{1/2}` per tile.
fn normalized_coefficients(ctx: &EnergyContext, tiles: &[Tile]) -> Result<Vec<f64>, LabError> {
    let grid = *ctx.bank().grid();
    tiles.iter().map(|p| Ok(coefficient_norm(ctx, p)? / grid.length(&p.time).sqrt())).collect()
}

/// One measured inequality: `lhs ≤ C · rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub lhs: f64,
    pub rhs: f64,
}

impl Measurement {
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

/// `(Σ_P |⟨f,φ_P⟩|²)^{1/2}` against `‖f‖₂ + A^{1/3} ‖f‖₂^{2/3}`,
/// `A = sup_P |⟨f,φ_P⟩|/|I_P|^{1/2} · (Σ_T |I_T|)^{1/2}`.
pub fn hilbert_basic_ratio(ctx: &EnergyContext, ensemble: &Ensemble) -> Result<Measurement, LabError> {
    require_hilbert(ctx)?;
    let grid = *ctx.bank().grid();
    let tiles = ensemble.tiles();
    let mut sum = 0.0;
    for p in &tiles {
        sum += coefficient_norm(ctx, p)?.powi(2);
    }
    let sup = normalized_coefficients(ctx, &tiles)?.into_iter().fold(0.0, f64::max);
    let a = sup * ensemble.total_len(&grid).sqrt();
    let l2 = ctx.function().lp_norm(2.0);
    Ok(Measurement { lhs: sum.sqrt(), rhs: l2 + a.cbrt() * l2.powf(2.0 / 3.0) })
}

/// `λ² Σ_{P : |⟨f,φ_P⟩|/|I_P|^{1/2} > λ} |I_P|` against `‖f‖₂²`.
pub fn weak_type_ratio(ctx: &EnergyContext, tiles: &[Tile], lambda: f64) -> Result<Measurement, LabError> {
    require_hilbert(ctx)?;
    if !(lambda > 0.0) {
        return Err(LabError::Lambda(lambda));
    }
    let grid = *ctx.bank().grid();
    let values = normalized_coefficients(ctx, tiles)?;
    let mass: f64 = tiles.iter().zip(&values).filter(|(_, &v)| v > lambda).map(|(p, _)| grid.length(&p.time)).sum();
    Ok(Measurement { lhs: lambda * lambda * mass, rhs: ctx.function().lp_norm(2.0).powi(2) })
}

/// [`weak_type_ratio`] at `λ = 2^{-i} sup_P |⟨f,φ_P⟩|/|I_P|^{1/2}` for `i < steps`; the worst case.
pub fn weak_type_sweep(ctx: &EnergyContext, tiles: &[Tile], steps: u32) -> Result<Measurement, LabError> {
    require_hilbert(ctx)?;
    let sup = normalized_coefficients(ctx, tiles)?.into_iter().fold(0.0, f64::max);
    let mut worst = Measurement { lhs: 0.0, rhs: ctx.function().lp_norm(2.0).powi(2) };
    if sup == 0.0 {
        return Ok(worst);
    }
    for i in 0..steps {
        let m = weak_type_ratio(ctx, tiles, sup * (-(i as f64)).exp2())?;
        if m.ratio() > worst.ratio() {
            worst = m;
        }
    }
    Ok(worst)
}

fn tree_norms(ctx: &EnergyContext, ensemble: &Ensemble, q: f64) -> Result<f64, LabError> {
    let mut total = 0.0;
    for t in &ensemble.trees {
        total += ctx.tile_sum(t.tiles())?.lp_norm(q).powf(q);
    }
    Ok(total.powf(1.0 / q))
}

/// `(Σ_T ‖Σ_{P∈T} ⟨f,φ_P⟩φ_P‖₂²)^{1/2}` against
/// `‖f‖₂ {1 + log₊(‖f‖_∞ (Σ_T |I_T|)^{1/2} / ‖f‖₂)}^{1/2}`.
pub fn log_tile_type_ratio(ctx: &EnergyContext, ensemble: &Ensemble) -> Result<Measurement, LabError> {
    require_hilbert(ctx)?;
    let f = ctx.function();
    let (l2, sup) = (f.lp_norm(2.0), f.sup_norm());
    if l2 == 0.0 {
        if sup > 0.0 {
            return Err(LabError::Degenerate("‖f‖₂ vanishes for a nonzero f".into()));
        }
        return Ok(Measurement { lhs: 0.0, rhs: 0.0 });
    }
    let lhs = tree_norms(ctx, ensemble, 2.0)?;
    let arg = sup / l2 * ensemble.total_len(ctx.bank().grid()).sqrt();
    Ok(Measurement { lhs, rhs: l2 * (1.0 + arg.ln().max(0.0)).sqrt() })
}

/// The elementary upper bound `‖f‖₂ + (1-α)^{-1/2} (‖f‖_∞ (Σ_T |I_T|)^{1/2})^{1-α} ‖f‖₂^α`
/// for the logarithmic right-hand side.
pub fn log_bound_by_power(f: &SampledFunction, total_len: f64, alpha: f64) -> f64 {
    let l2 = f.lp_norm(2.0);
    l2 + (f.sup_norm() * total_len.sqrt()).powf(1.0 - alpha) * l2.powf(alpha) / (1.0 - alpha).sqrt()
}

/// `(Σ_T ‖Σ_{P∈T} ⟨f,φ_P⟩φ_P‖_q^q)^{1/q}` against
/// `‖f‖_q + (‖f‖_∞ (Σ_T |I_T|)^{1/q})^{1-α} ‖f‖_q^α`.
pub fn fourier_tile_type_ratio(ctx: &EnergyContext, ensemble: &Ensemble, q: f64, alpha: f64) -> Result<Measurement, LabError> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(LabError::InvalidSpec(format!("q must lie in (1, ∞), got {q}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::InvalidSpec(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let f = ctx.function();
    let (lq, sup) = (f.lp_norm(q), f.sup_norm());
    let lhs = tree_norms(ctx, ensemble, q)?;
    let total = ensemble.total_len(ctx.bank().grid());
    Ok(Measurement { lhs, rhs: lq + (sup * total.powf(1.0 / q)).powf(1.0 - alpha) * lq.powf(alpha) })
}

/// `inf_{I_P} Mf` per tile, with `Mf` on the sample grid.
pub fn infimum_of_maximal(grid: &DyadicGrid, f: &SampledFunction, tiles: &[Tile]) -> Vec<f64> {
    let m = operators::hardy_littlewood(f);
    let w = f.window();
    tiles
        .iter()
        .map(|p| {
            let (a, b) = (grid.left(&p.time), grid.right(&p.time));
            let lo = w.cell(a).unwrap_or(0);
            let hi = w.cell(b - w.step() / 2.0).map_or(w.len(), |j| j + 1);
            m[lo..hi.max(lo + 1)].iter().copied().fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `energy(ℙ_λ)` against `λ`, where `ℙ_λ` keeps the tiles with `inf_{I_P} Mf ≤ λ`.
pub fn improved_energy_ratio(ctx: &EnergyContext, tiles: &[Tile], lambda: f64) -> Result<Measurement, LabError> {
    if !(lambda > 0.0) {
        return Err(LabError::Lambda(lambda));
    }
    let infs = infimum_of_maximal(ctx.bank().grid(), ctx.function(), tiles);
    let kept: Vec<Tile> = tiles.iter().zip(&infs).filter(|(_, &m)| m <= lambda).map(|(p, _)| *p).collect();
    Ok(Measurement { lhs: ctx.energy(&kept)?, rhs: lambda })
}

/// Worst `‖B_T f‖_q` against `‖A_T f‖_q` over the up-trees of `ensemble`,
/// with independent random unimodular signs per tile.
pub fn signed_tree_ratio(
    rng: &mut impl Rng,
    bank: &PacketBank,
    f: &SampledFunction,
    ensemble: &Ensemble,
    q: f64,
) -> Result<Measurement, LabError> {
    let mut worst = Measurement { lhs: 0.0, rhs: 0.0 };
    for tree in &ensemble.trees {
        let general = Tree::new(tree.tiles().iter().copied(), *tree.top(), TreeKind::General)?;
        for up in split_into_up_trees(&general)? {
            let signs: Vec<Complex64> = (0..up.len()).map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>())).collect();
            let plain = operators::tree_operator(&up, f, bank)?.lp_norm(q);
            if plain == 0.0 {
                continue;
            }
            let m = Measurement { lhs: operators::signed_tree_operator(&up, f, &signs, bank)?.lp_norm(q), rhs: plain };
            if m.ratio() > worst.ratio() || worst.rhs == 0.0 {
                worst = m;
            }
        }
    }
    Ok(worst)
}

/// `Σ_P |⟨f,φ_P⟩⟨φ_P, g 1_{N∈ω_{P_u}}⟩|` against `|F|^{1/p} |E|^{1/p'}`, and
/// against `|E|(1 + log(|F|/|E|))` when `|E| ≤ |F|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingMeasurement {
    pub lhs: f64,
    pub power_bound: f64,
    pub log_bound: Option<f64>,
}

pub fn restricted_pairing(
    tiles: &[Tile],
    g: &SampledFunction,
    dctx: &DensityContext,
    ectx: &EnergyContext,
    f_measure: f64,
    p: f64,
) -> Result<PairingMeasurement, LabError> {
    let e_measure = dctx.measure();
    if !(f_measure > 0.0 && e_measure > 0.0) {
        return Err(LabError::Sets("F and E must have positive measure".into()));
    }
    let lhs: f64 = pairing_terms(tiles, g, dctx, ectx)?.iter().sum();
    let power_bound = f_measure.powf(1.0 / p) * e_measure.powf(1.0 / conjugate_exponent(p));
    let log_bound = (e_measure <= f_measure).then(|| e_measure * (1.0 + (f_measure / e_measure).ln()));
    Ok(PairingMeasurement { lhs, power_bound, log_bound })
}

/// `Ẽ = E \ G̃` with `G = {M1_F > K|F|/|E|}` and `G̃ = {M1_G > 1/8}`.
#[derive(Clone, Debug)]
pub struct MajorSubset {
    pub e_tilde: MeasurableSet,
    pub g: MeasurableSet,
    pub g_tilde: MeasurableSet,
    /// The constant actually used after any doublings.
    pub k: f64,
    pub doublings: u32,
}

/// Builds the major subset, doubling `K` until `|Ẽ| ≥ |E|/2` (at most 32 times).
pub fn major_subset(window: &Window, e: &MeasurableSet, f: &MeasurableSet, k: f64) -> Result<MajorSubset, LabError> {
    let (em, fm) = (e.measure(window), f.measure(window));
    if !(em > fm && fm > 0.0) {
        return Err(LabError::Sets(format!("need |E| > |F| > 0, got |E| = {em}, |F| = {fm}")));
    }
    let mf = maximal_average(&f.indicator());
    let mut k = k;
    for doublings in 0..=32 {
        let threshold = k * fm / em;
        let g = MeasurableSet::from_predicate(window.len(), |j| mf[j] > threshold);
        let mg = maximal_average(&g.indicator());
        let g_tilde = MeasurableSet::from_predicate(window.len(), |j| mg[j] > 0.125);
        let e_tilde = e.difference(&g_tilde);
        if e_tilde.measure(window) >= em / 2.0 || doublings == 32 {
            return Ok(MajorSubset { e_tilde, g, g_tilde, k, doublings });
        }
        k *= 2.0;
    }
    unreachable!("loop returns on its last iteration")
}

/// Whether the cells of `2 I_P` inside the window all lie in `set`.
pub fn doubled_interval_inside(grid: &DyadicGrid, window: &Window, p: &Tile, set: &MeasurableSet) -> bool {
    let (c, len) = (grid.center(&p.time), grid.length(&p.time));
    let (a, b) = ((c - len).max(-window.half_len()), (c + len).min(window.half_len()));
    let lo = window.cell(a).unwrap_or(0);
    let hi = window.cell(b - window.step() / 2.0).map_or(window.len(), |j| j + 1);
    (lo..hi).all(|j| set.contains(j))
}

/// The pairing over `ℙ` for `g` supported on `Ẽ`, split by whether `2I_P ⊆ G̃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoCaseMeasurement {
    pub lhs: f64,
    /// Part of `lhs` from tiles with `2I_P ⊆ G̃`.
    pub inside: f64,
    /// `|F|(1 + log(|E|/|F|))`.
    pub log_bound: f64,
    pub f_measure: f64,
    pub e_measure: f64,
}

impl TwoCaseMeasurement {
    pub fn power_bound(&self, p: f64) -> f64 {
        self.f_measure.powf(1.0 / p) * self.e_measure.powf(1.0 / conjugate_exponent(p))
    }
}

pub fn two_case_pairing(
    tiles: &[Tile],
    g: &SampledFunction,
    dctx: &DensityContext,
    ectx: &EnergyContext,
    f_measure: f64,
    g_tilde: &MeasurableSet,
) -> Result<TwoCaseMeasurement, LabError> {
    let e_measure = dctx.measure();
    if !(e_measure > f_measure && f_measure > 0.0) {
        return Err(LabError::Sets(format!("need |E| > |F| > 0, got |E| = {e_measure}, |F| = {f_measure}")));
    }
    let terms = pairing_terms(tiles, g, dctx, ectx)?;
    let grid = *dctx.grid();
    let inside: f64 = tiles
        .iter()
        .zip(&terms)
        .filter(|(p, _)| doubled_interval_inside(&grid, dctx.window(), p, g_tilde))
        .map(|(_, t)| t)
        .sum();
    Ok(TwoCaseMeasurement {
        lhs: terms.iter().sum(),
        inside,
        log_bound: f_measure * (1.0 + (e_measure / f_measure).ln()),
        f_measure,
        e_measure,
    })
}

/// One row of a ratio report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub experiment: String,
    pub seed: u64,
    pub size: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    pub size: usize,
    pub count: usize,
    pub max: f64,
    pub p95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub experiment: String,
    pub sizes: Vec<SizeStats>,
    /// `max(size_{i+1}) / max(size_i) - 1`.
    pub drift: Vec<f64>,
    pub max_drift: f64,
    pub stable: bool,
}

/// Per-instance ratios of one experiment over seeds and sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioReport {
    pub experiment: String,
    pub rows: Vec<RatioRow>,
}

fn percentile_95(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = (0.95 * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

impl RatioReport {
    pub fn new(experiment: impl ToString) -> Self {
        RatioReport { experiment: experiment.to_string(), rows: Vec::new() }
    }

    pub fn push(&mut self, seed: u64, size: usize, m: Measurement) {
        self.rows.push(RatioRow { experiment: self.experiment.clone(), seed, size, lhs: m.lhs, rhs: m.rhs, ratio: m.ratio() });
    }

    pub fn sizes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.rows.iter().map(|r| r.size).collect();
        set.into_iter().collect()
    }

    pub fn stats(&self) -> Vec<SizeStats> {
        self.sizes()
            .into_iter()
            .map(|size| {
                let mut ratios: Vec<f64> = self.rows.iter().filter(|r| r.size == size).map(|r| r.ratio).collect();
                let max = ratios.iter().copied().fold(0.0, f64::max);
                SizeStats { size, count: ratios.len(), max, p95: percentile_95(&mut ratios) }
            })
            .collect()
    }

    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.ratio.is_finite() && r.ratio >= 0.0)
    }

    pub fn summary(&self) -> RatioSummary {
        let sizes = self.stats();
        let drift: Vec<f64> = sizes.windows(2).map(|w| w[1].max / w[0].max - 1.0).collect();
        let max_drift = drift.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let stable = self.all_finite() && drift.iter().all(|d| *d < STABILITY_DRIFT);
        RatioSummary { experiment: self.experiment.clone(), sizes, drift, max_drift, stable }
    }

    /// `experiment,seed,size,lhs,rhs,ratio`.
    pub fn write_csv(&self, w: impl Write) -> io::Result<()> {
        write_reports_csv(std::slice::from_ref(self), w)
    }
}

/// Rows of several reports under a single header.
pub fn write_reports_csv(reports: &[RatioReport], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "experiment,seed,size,lhs,rhs,ratio")?;
    for r in reports.iter().flat_map(|r| &r.rows) {
        writeln!(w, "{},{},{},{:e},{:e},{:e}", r.experiment, r.seed, r.size, r.lhs, r.rhs, r.ratio)?;
    }
    Ok(())
}

/// Groups rows by experiment, in order of first appearance.
pub fn reports_from_rows(rows: impl IntoIterator<Item = RatioRow>) -> Vec<RatioReport> {
    let mut out: Vec<RatioReport> = Vec::new();
    for row in rows {
        match out.iter_mut().find(|r| r.experiment == row.experiment) {
            Some(r) => r.rows.push(row),
            None => out.push(RatioReport { experiment: row.experiment.clone(), rows: vec![row] }),
        }
    }
    out
}

/// Runs `measure(seed, doublings)` over all pairs in parallel. Each call
/// returns one measurement per experiment; rows come back in size-then-seed order.
pub fn run_grid<F>(
    experiments: &[String],
    seeds: &[u64],
    doublings: &[u32],
    size_of: impl Fn(u32) -> usize,
    measure: F,
) -> Result<Vec<RatioReport>, LabError>
where
    F: Fn(u64, u32) -> Result<Vec<Measurement>, LabError> + Sync,
{
    let jobs: Vec<(u32, u64)> = doublings.iter().flat_map(|&d| seeds.iter().map(move |&s| (d, s))).collect();
    let results: Vec<Result<Vec<Measurement>, LabError>> = jobs.par_iter().map(|&(d, s)| measure(s, d)).collect();
    let mut reports: Vec<RatioReport> = experiments.iter().map(RatioReport::new).collect();
    for ((d, s), ms) in jobs.into_iter().zip(results) {
        let ms = ms?;
        assert_eq!(ms.len(), reports.len(), "one measurement per experiment");
        for (r, m) in reports.iter_mut().zip(ms) {
            r.push(s, size_of(d), m);
        }
    }
    Ok(reports)
}

/// Parameters shared by the seeded experiments.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub bank: Arc<PacketBank>,
    /// Universe at the smallest size; larger sizes double its time window.
    pub universe: Universe,
    pub kind: ValueKind,
    pub q: f64,
    pub alpha: f64,
    /// Trees at the smallest size; scaled with the universe.
    pub trees: usize,
    pub tiles_per_tree: usize,
    /// `|F|` as a fraction of the universe's time span.
    pub f_fraction: f64,
    pub f_pieces: usize,
    /// Random spectral lines in `f`.
    pub terms: usize,
}

/// One seeded draw of an ensemble and a function `f` with `|f| ≤ 1_F`.
#[derive(Clone, Debug)]
pub struct Instance {
    pub universe: Universe,
    pub ensemble: Ensemble,
    pub f: SampledFunction,
    pub f_set: MeasurableSet,
    pub residual: f64,
}

/// Independent stream per `(seed, doublings, purpose)`.
pub fn stream(seed: u64, doublings: u32, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((doublings as u64) << 32) | purpose);
    rng
}

impl Scenario {
    pub fn grid(&self) -> DyadicGrid {
        *self.bank.grid()
    }

    pub fn window(&self) -> Window {
        *self.bank.window()
    }

    pub fn universe_at(&self, doublings: u32) -> Universe {
        (0..doublings).fold(self.universe, |u, _| u.doubled())
    }

    pub fn size(&self, doublings: u32) -> usize {
        let u = self.universe_at(doublings);
        (u.time_hi - u.time_lo) as usize
    }

    pub fn spec(&self, seed: u64, doublings: u32) -> EnsembleSpec {
        EnsembleSpec {
            seed: seed ^ ((doublings as u64) << 56),
            trees: self.trees << doublings,
            tiles_per_tree: self.tiles_per_tree,
            universe: self.universe_at(doublings),
            kind: self.kind,
            q: self.q,
            alpha: self.alpha,
        }
    }

    pub fn instance(&self, seed: u64, doublings: u32) -> Result<Instance, LabError> {
        let spec = self.spec(seed, doublings);
        let ensemble = random_disjprop_collection(&spec, &self.grid())?;
        let (f, f_set, residual) = self.function(seed, doublings, 1)?;
        Ok(Instance { universe: spec.universe, ensemble, f, f_set, residual })
    }

    /// A random `F` and `f` with `|f| ≤ 1_F` on the universe at `doublings`.
    pub fn function(&self, seed: u64, doublings: u32, purpose: u64) -> Result<(SampledFunction, MeasurableSet, f64), LabError> {
        let u = self.universe_at(doublings);
        let (grid, window) = (self.grid(), self.window());
        let mut rng = stream(seed, doublings, purpose);
        let pieces = self.f_pieces << doublings;
        let f_set = random_set(&mut rng, &window, time_span(&grid, &u), self.f_fraction, pieces);
        let (f, residual) = random_function(&mut rng, &window, self.kind, freq_span(&grid, &u), &f_set, self.terms)?;
        Ok((f, f_set, residual))
    }

    pub fn energy_context(&self, f: SampledFunction, universe: Universe) -> Result<EnergyContext, LabError> {
        Ok(EnergyContext::new(f, self.q, Arc::clone(&self.bank), universe)?)
    }
}

/// Per-seed carrier of the pairing experiments.
#[derive(Debug)]
pub struct PairingInstance {
    pub tiles: Vec<Tile>,
    pub dctx: DensityContext,
    pub ectx: EnergyContext,
    pub g: SampledFunction,
    pub f_measure: f64,
}

/// Up to `count` distinct universe tiles drawn uniformly, skipping any that
/// would break 20-sparsity.
pub fn random_sparse_collection(rng: &mut impl Rng, grid: &DyadicGrid, u: &Universe, count: usize) -> Vec<Tile> {
    let all = u.all_tiles(grid);
    let mut first: BTreeMap<DyadicInterval, i64> = BTreeMap::new();
    let mut picked: BTreeSet<Tile> = BTreeSet::new();
    for _ in 0..count * 8 {
        if picked.len() == count {
            break;
        }
        let p = all[rng.gen_range(0..all.len())];
        let ok = match first.get(&p.freq) {
            Some(&n) => (p.time.index - n).rem_euclid(20) == 0,
            None => true,
        };
        if ok {
            first.entry(p.freq).or_insert(p.time.index);
            picked.insert(p);
        }
    }
    picked.into_iter().collect()
}

/// Inputs of one seeded tree decomposition.
#[derive(Debug)]
pub struct DecompositionInstance {
    pub tiles: Vec<Tile>,
    pub dctx: DensityContext,
    pub ectx: EnergyContext,
}

impl Scenario {
    /// A sparse collection of `count` tiles with random `E`, `N` and `f`.
    pub fn decomposition_instance(&self, seed: u64, doublings: u32, count: usize, fractions: (f64, f64)) -> Result<DecompositionInstance, LabError> {
        let u = self.universe_at(doublings);
        let (grid, window) = (self.grid(), self.window());
        let (f_set, e_set) = self.pairing_sets(seed, doublings, fractions);
        let mut rng = stream(seed, doublings, 4);
        let tiles = random_sparse_collection(&mut rng, &grid, &u, count);
        let band = freq_span(&grid, &u);
        let (f, _) = random_function(&mut rng, &window, self.kind, band, &f_set, self.terms)?;
        let choice = random_choice(&mut rng, &window, band, 4);
        let dctx = DensityContext::new(grid, u, window, e_set, choice)?;
        let ectx = self.energy_context(f, u)?;
        Ok(DecompositionInstance { tiles, dctx, ectx })
    }
}

/// `C_N f = Σ_P ⟨f,φ_P⟩ φ_P 1_{ω_{P_u}}(N)`, summed on the spectrum band by band.
pub fn carleson_image(tiles: &[Tile], dctx: &DensityContext, ectx: &EnergyContext) -> Result<SampledFunction, LabError> {
    let mut bands: BTreeMap<_, Vec<Tile>> = BTreeMap::new();
    for p in tiles {
        bands.entry(p.freq.half(Half::Up)).or_default().push(*p);
    }
    let f = ectx.function();
    let mut out = SampledFunction::zeros(*f.window(), f.kind());
    let grid = dctx.grid();
    let n = dctx.choice().values();
    for (band, members) in bands {
        let sum = ectx.tile_sum(&members)?;
        let weights: Vec<f64> = n.iter().map(|&x| if operators::in_band(grid, &band, x) { 1.0 } else { 0.0 }).collect();
        out.add_assign(&sum.mask(&weights)).map_err(OperatorError::from)?;
    }
    Ok(out)
}

/// `g = y(h)` on `set` and zero elsewhere, `y` the pointwise norming dual element.
pub fn aligned_dual(h: &SampledFunction, set: &MeasurableSet) -> SampledFunction {
    let kind = h.kind();
    let mut g = SampledFunction::zeros(*h.window(), kind.dual());
    for j in set.iter() {
        g.set_value(j, &kind.norming_dual(&h.value_at(j)));
    }
    g
}

/// Every universe tile that fits the packet bank.
pub fn universe_tiles(bank: &PacketBank, u: &Universe) -> Vec<Tile> {
    u.all_tiles(bank.grid()).into_iter().filter(|p| bank.packet(p).is_ok()).collect()
}

impl Scenario {
    /// The `(F, E)` pair drawn for `(seed, doublings)`.
    pub fn pairing_sets(&self, seed: u64, doublings: u32, fractions: (f64, f64)) -> (MeasurableSet, MeasurableSet) {
        let u = self.universe_at(doublings);
        let (grid, window) = (self.grid(), self.window());
        let span = time_span(&grid, &u);
        let mut rng = stream(seed, doublings, 2);
        let pieces = self.f_pieces << doublings;
        let f_set = random_set(&mut rng, &window, span, fractions.0, pieces);
        let e_set = random_set(&mut rng, &window, span, fractions.1, pieces);
        (f_set, e_set)
    }

    /// Random `F`, `E`, `N` and `f` over the full universe, with `g` norming
    /// `C_N f` pointwise on `E`, or on `restrict(E, F)` when given.
    pub fn pairing_instance(
        &self,
        seed: u64,
        doublings: u32,
        fractions: (f64, f64),
        restrict: Option<&dyn Fn(&MeasurableSet, &MeasurableSet) -> Result<MeasurableSet, LabError>>,
    ) -> Result<PairingInstance, LabError> {
        let u = self.universe_at(doublings);
        let (grid, window) = (self.grid(), self.window());
        let band = freq_span(&grid, &u);
        let (f_set, e_set) = self.pairing_sets(seed, doublings, fractions);
        let mut rng = stream(seed, doublings, 3);
        let (f, _) = random_function(&mut rng, &window, self.kind, band, &f_set, self.terms)?;
        let choice = random_choice(&mut rng, &window, band, 4);
        let g_set = match restrict {
            Some(r) => r(&e_set, &f_set)?,
            None => e_set.clone(),
        };
        let f_measure = f_set.measure(&window);
        let dctx = DensityContext::new(grid, u, window, e_set, choice)?;
        let ectx = self.energy_context(f, u)?;
        let tiles = universe_tiles(&self.bank, &u);
        let g = aligned_dual(&carleson_image(&tiles, &dctx, &ectx)?, &g_set);
        Ok(PairingInstance { tiles, dctx, ectx, g, f_measure })
    }
}

fn names(prefix: &str, tags: impl IntoIterator<Item = String>) -> Vec<String> {
    tags.into_iter().map(|t| format!("{prefix}{t}")).collect()
}

/// Exponent tag used in experiment names, e.g. `p1.25`.
pub fn exponent_tag(p: f64) -> String {
    format!("p{p}")
}

impl Scenario {
    fn run(&self, experiments: Vec<String>, seeds: &[u64], doublings: &[u32], measure: impl Fn(u64, u32) -> Result<Vec<Measurement>, LabError> + Sync) -> Result<Vec<RatioReport>, LabError> {
        run_grid(&experiments, seeds, doublings, |d| self.size(d), measure)
    }

    /// `hilbert-basic`, `weak-type` and `log-tile-type` on shared instances.
    pub fn hilbert_chain(&self, seeds: &[u64], doublings: &[u32]) -> Result<Vec<RatioReport>, LabError> {
        let experiments = vec!["hilbert-basic".to_string(), "weak-type".to_string(), "log-tile-type".to_string()];
        self.run(experiments, seeds, doublings, |seed, d| {
            let inst = self.instance(seed, d)?;
            let ctx = self.energy_context(inst.f, inst.universe)?;
            Ok(vec![
                hilbert_basic_ratio(&ctx, &inst.ensemble)?,
                weak_type_sweep(&ctx, &inst.ensemble.tiles(), 12)?,
                log_tile_type_ratio(&ctx, &inst.ensemble)?,
            ])
        })
    }

    /// `fourier-tile-type-a{α}` for each `α`.
    pub fn fourier_tile_type(&self, seeds: &[u64], doublings: &[u32], alphas: &[f64]) -> Result<Vec<RatioReport>, LabError> {
        let experiments = names("fourier-tile-type-a", alphas.iter().map(|a| a.to_string()));
        self.run(experiments, seeds, doublings, |seed, d| {
            let inst = self.instance(seed, d)?;
            let ctx = self.energy_context(inst.f, inst.universe)?;
            alphas.iter().map(|&a| fourier_tile_type_ratio(&ctx, &inst.ensemble, self.q, a)).collect()
        })
    }

    /// `improved-energy`: the worst `energy(ℙ_λ)/λ` over `lambdas`.
    pub fn improved_energy(&self, seeds: &[u64], doublings: &[u32], lambdas: &[f64]) -> Result<Vec<RatioReport>, LabError> {
        self.run(vec!["improved-energy".to_string()], seeds, doublings, |seed, d| {
            let inst = self.instance(seed, d)?;
            let ctx = self.energy_context(inst.f, inst.universe)?;
            let tiles = inst.ensemble.tiles();
            let mut worst = Measurement { lhs: 0.0, rhs: lambdas.iter().copied().fold(f64::INFINITY, f64::min) };
            for &l in lambdas {
                let m = improved_energy_ratio(&ctx, &tiles, l)?;
                if m.ratio() > worst.ratio() {
                    worst = m;
                }
            }
            Ok(vec![worst])
        })
    }

    /// `signed-tree`: random-sign tree operators against the unsigned ones.
    pub fn signed_trees(&self, seeds: &[u64], doublings: &[u32]) -> Result<Vec<RatioReport>, LabError> {
        self.run(vec!["signed-tree".to_string()], seeds, doublings, |seed, d| {
            let inst = self.instance(seed, d)?;
            let mut rng = stream(seed, d, 5);
            Ok(vec![signed_tree_ratio(&mut rng, &self.bank, &inst.f, &inst.ensemble, self.q)?])
        })
    }

    /// `restricted-p{p}` against `|F|^{1/p}|E|^{1/p'}` for each `p`, and
    /// `restricted-log` against `|E|(1 + log(|F|/|E|))` (zero when `|E| > |F|`).
    pub fn restricted_weak_type(&self, seeds: &[u64], doublings: &[u32], ps: &[f64], fractions: (f64, f64)) -> Result<Vec<RatioReport>, LabError> {
        let mut experiments = names("restricted-", ps.iter().map(|&p| exponent_tag(p)));
        experiments.push("restricted-log".to_string());
        self.run(experiments, seeds, doublings, |seed, d| {
            let inst = self.pairing_instance(seed, d, fractions, None)?;
            let m = restricted_pairing(&inst.tiles, &inst.g, &inst.dctx, &inst.ectx, inst.f_measure, 2.0)?;
            let mut out: Vec<Measurement> = ps
                .iter()
                .map(|&p| {
                    let rhs = inst.f_measure.powf(1.0 / p) * inst.dctx.measure().powf(1.0 / conjugate_exponent(p));
                    Measurement { lhs: m.lhs, rhs }
                })
                .collect();
            out.push(match m.log_bound {
                Some(rhs) => Measurement { lhs: m.lhs, rhs },
                None => Measurement { lhs: 0.0, rhs: 0.0 },
            });
            Ok(out)
        })
    }

    /// `two-case-p{p}` for each `p`, `two-case-log` against `|F|(1 + log(|E|/|F|))`,
    /// and `two-case-inside` for the `2I_P ⊆ G̃` part against `|F|`.
    /// Also returns the `K` used per instance.
    pub fn two_case(
        &self,
        seeds: &[u64],
        doublings: &[u32],
        ps: &[f64],
        fractions: (f64, f64),
        k: f64,
    ) -> Result<(Vec<RatioReport>, Vec<MajorSubsetRow>), LabError> {
        let mut experiments = names("two-case-", ps.iter().map(|&p| exponent_tag(p)));
        experiments.push("two-case-log".to_string());
        experiments.push("two-case-inside".to_string());
        let window = self.window();
        let log: std::sync::Mutex<Vec<MajorSubsetRow>> = Default::default();
        let restrict = |e: &MeasurableSet, f: &MeasurableSet| -> Result<MeasurableSet, LabError> {
            Ok(major_subset(&window, e, f, k)?.e_tilde)
        };
        let reports = self.run(experiments, seeds, doublings, |seed, d| {
            let inst = self.pairing_instance(seed, d, fractions, Some(&restrict))?;
            let (f_set, _) = self.pairing_sets(seed, d, fractions);
            let major = major_subset(&window, inst.dctx.set(), &f_set, k)?;
            let m = two_case_pairing(&inst.tiles, &inst.g, &inst.dctx, &inst.ectx, inst.f_measure, &major.g_tilde)?;
            log.lock().expect("log lock").push(MajorSubsetRow::new(seed, self.size(d), &window, inst.dctx.set(), &major));
            let mut out: Vec<Measurement> = ps.iter().map(|&p| Measurement { lhs: m.lhs, rhs: m.power_bound(p) }).collect();
            out.push(Measurement { lhs: m.lhs, rhs: m.log_bound });
            out.push(Measurement { lhs: m.inside, rhs: m.f_measure });
            Ok(out)
        })?;
        let mut rows = log.into_inner().expect("log lock");
        rows.sort_by_key(|r| (r.size, r.seed));
        Ok((reports, rows))
    }

    /// `major-subset` rows for the same `(E, F)` pairs the pairing experiments draw.
    pub fn major_subsets(&self, seeds: &[u64], doublings: &[u32], fractions: (f64, f64), k: f64) -> Result<Vec<MajorSubsetRow>, LabError> {
        let window = self.window();
        let jobs: Vec<(u32, u64)> = doublings.iter().flat_map(|&d| seeds.iter().map(move |&s| (d, s))).collect();
        jobs.par_iter()
            .map(|&(d, seed)| {
                let (f_set, e_set) = self.pairing_sets(seed, d, fractions);
                let major = major_subset(&window, &e_set, &f_set, k)?;
                Ok(MajorSubsetRow::new(seed, self.size(d), &window, &e_set, &major))
            })
            .collect()
    }
}

/// One major-subset construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorSubsetRow {
    pub seed: u64,
    pub size: usize,
    pub e_measure: f64,
    pub e_tilde_measure: f64,
    pub k: f64,
    pub doublings: u32,
}

impl MajorSubsetRow {
    fn new(seed: u64, size: usize, window: &Window, e: &MeasurableSet, m: &MajorSubset) -> Self {
        MajorSubsetRow { seed, size, e_measure: e.measure(window), e_tilde_measure: m.e_tilde.measure(window), k: m.k, doublings: m.doublings }
    }

    pub fn holds(&self) -> bool {
        self.e_tilde_measure >= self.e_measure / 2.0
    }
}

/// `f(x) = Σ_k A_k · 0.02 / (1.02 - cos 2π(x - s_k))` on the unit torus, with
/// fixed non-commuting `2 × 2` matrices `A_k`.
pub fn smooth_matrix_function(window: &Window, p: f64) -> SampledFunction {
    let kind = ValueKind::Schatten { dim: 2, p };
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let terms: [([Complex64; 4], f64); 3] = [
        ([c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)], 0.1),
        ([c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)], 0.37),
        ([c(0.0, 0.0), c(0.0, -0.5), c(0.0, 0.5), c(0.25, 0.0)], 0.71),
    ];
    SampledFunction::from_fn(*window, kind, |x, out| {
        out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (a, s) in &terms {
            let bump = 0.02 / (1.02 - (2.0 * PI * (x - s)).cos());
            for (o, e) in out.iter_mut().zip(a) {
                *o += e * bump;
            }
        }
    })
}

/// `sup_x ‖s_{-n,n} f - f‖` for each `n`, on the unit torus.
pub fn convergence_errors(f: &SampledFunction, ns: &[i64]) -> Result<Vec<f64>, LabError> {
    ns.iter()
        .map(|&n| {
            let s = operators::periodic_partial_sum(f, -n, n)?;
            Ok(s.sub(f).map_err(OperatorError::from)?.sup_norm())
        })
        .collect()
}
