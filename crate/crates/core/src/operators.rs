//! Partial Fourier sums, their maximal versions, the model operator `C_N`,
//! tree operators and the Hardy–Littlewood maximal function.

use crate::geometry::{DyadicGrid, Half, Tile, Tree};
use crate::sampled::{SampleError, SampledFunction, Window};
use crate::wavelet::{PacketBank, WaveletError};
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("frequency range [{0}, {1}] is empty or reversed")]
    EmptyRange(f64, f64),
    #[error("periodic range [{0}, {1}] is reversed")]
    ReversedRange(i64, i64),
    #[error("family of frequency ranges is empty")]
    EmptyFamily,
    #[error("sign for tile {0} is not unimodular")]
    NotUnimodular(Tile),
    #[error("expected {expected} entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("tile {0} lies outside the universe")]
    OutsideUniverse(Tile),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Relative slack when deciding whether a grid frequency sits on an endpoint.
const ENDPOINT_SLACK: f64 = 1e-9;

/// Signed bin range `[lo, hi]` of grid frequencies in the closed interval `[m, n]`.
fn closed_bins(window: &Window, m: f64, n: f64) -> (i64, i64) {
    let d = window.freq_step();
    ((m / d - ENDPOINT_SLACK).ceil() as i64, (n / d + ENDPOINT_SLACK).floor() as i64)
}

fn mask_spectrum(f: &SampledFunction, keep: impl Fn(i64) -> f64) -> SampledFunction {
    let w = *f.window();
    let n = w.len();
    let weights: Vec<f64> = (0..n).map(|k| keep(crate::fourier::signed_index(k, n))).collect();
    let mut spec = f.spectrum();
    for chunk in spec.chunks_mut(n) {
        chunk.iter_mut().zip(&weights).for_each(|(z, w)| *z *= w);
    }
    SampledFunction::from_spectrum(w, f.kind(), spec)
}

/// `S_{m,n} f`: multiply the spectrum by `1_{[m,n]}`, both endpoints included.
pub fn partial_sum(f: &SampledFunction, m: f64, n: f64) -> Result<SampledFunction, OperatorError> {
    if !(m < n) {
        return Err(OperatorError::EmptyRange(m, n));
    }
    let (lo, hi) = closed_bins(f.window(), m, n);
    Ok(mask_spectrum(f, |k| if (lo..=hi).contains(&k) { 1.0 } else { 0.0 }))
}

/// `S_{m,n} f` as a direct quadrature convolution with the modulated sinc kernel.
///
/// Quadratic cost; an independent route for cross-checking [`partial_sum`].
pub fn partial_sum_by_kernel(f: &SampledFunction, m: f64, n: f64) -> Result<SampledFunction, OperatorError> {
    if !(m < n) {
        return Err(OperatorError::EmptyRange(m, n));
    }
    let w = *f.window();
    let h = w.step();
    let len = w.len();
    let kernel = |x: f64| {
        let carrier = Complex64::from_polar(1.0, PI * x * (m + n));
        let width = n - m;
        let sinc = if x == 0.0 { width } else { (PI * x * width).sin() / (PI * x) };
        carrier * sinc
    };
    // The kernel only depends on the offset i - j.
    let table: Vec<Complex64> = (0..2 * len - 1).map(|d| kernel((d as f64 - (len - 1) as f64) * h)).collect();
    let mut out = SampledFunction::zeros(w, f.kind());
    for c in 0..f.components() {
        let src = f.component(c).to_vec();
        let dst = out.component_mut(c);
        for (j, y) in dst.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, v) in src.iter().enumerate() {
                acc += table[j + len - 1 - i] * v;
            }
            *y = acc * h;
        }
    }
    Ok(out)
}

/// Pointwise `max_{(m,n) ∈ Λ} |S_{m,n} f(x)|_X`.
pub fn maximal_partial_sum(f: &SampledFunction, family: &[(f64, f64)]) -> Result<Vec<f64>, OperatorError> {
    if family.is_empty() {
        return Err(OperatorError::EmptyFamily);
    }
    let mut best = vec![0.0f64; f.window().len()];
    for &(m, n) in family {
        let s = partial_sum(f, m, n)?;
        best.iter_mut().zip(s.pointwise_norms()).for_each(|(b, v)| *b = b.max(v));
    }
    Ok(best)
}

/// Window `[-1/2, 1/2)` read as the circle `𝕋`; its spectral bins are the integers.
pub fn torus(n: usize) -> Result<Window, SampleError> {
    Window::new(0.5, n)
}

/// `s_{m,n} f = Σ_{k=m}^{n} f̂(k) e^{2πikx}` on `𝕋`.
///
/// On `N` samples, `e^{2πikx}` only depends on `k mod N`, so the sum becomes a
/// multiplier counting the integers of `[m, n]` in each residue class.
pub fn periodic_partial_sum(f: &SampledFunction, m: i64, n: i64) -> Result<SampledFunction, OperatorError> {
    if m > n {
        return Err(OperatorError::ReversedRange(m, n));
    }
    let size = f.window().len() as i64;
    let count = |k: i64| {
        // Integers t with m <= k + t N <= n.
        let lo = (m - k).div_euclid(size) + i64::from((m - k).rem_euclid(size) != 0);
        let hi = (n - k).div_euclid(size);
        (hi - lo + 1).max(0) as f64
    };
    Ok(mask_spectrum(f, count))
}

pub fn periodic_maximal(f: &SampledFunction, family: &[(i64, i64)]) -> Result<Vec<f64>, OperatorError> {
    if family.is_empty() {
        return Err(OperatorError::EmptyFamily);
    }
    let mut best = vec![0.0f64; f.window().len()];
    for &(m, n) in family {
        let s = periodic_partial_sum(f, m, n)?;
        best.iter_mut().zip(s.pointwise_norms()).for_each(|(b, v)| *b = b.max(v));
    }
    Ok(best)
}

/// Frequency choice `N(x)`, one value per sample cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyChoice {
    values: Vec<f64>,
}

impl FrequencyChoice {
    pub fn new(values: Vec<f64>) -> Result<Self, OperatorError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SampleError::NonFinite.into());
        }
        Ok(FrequencyChoice { values })
    }

    pub fn constant(window: &Window, value: f64) -> Self {
        FrequencyChoice { values: vec![value; window.len()] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Subset of the sample cells; measure is `cells × h`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MeasurableSet {
    words: Vec<u64>,
    len: usize,
}

impl MeasurableSet {
    pub fn empty(len: usize) -> Self {
        MeasurableSet { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn full(len: usize) -> Self {
        let mut s = Self::empty(len);
        (0..len).for_each(|j| s.insert(j));
        s
    }

    pub fn from_predicate(len: usize, pred: impl Fn(usize) -> bool) -> Self {
        let mut s = Self::empty(len);
        (0..len).filter(|&j| pred(j)).for_each(|j| s.insert(j));
        s
    }

    /// Cells whose left endpoint lies in `[a, b)`.
    pub fn interval(window: &Window, a: f64, b: f64) -> Self {
        Self::from_predicate(window.len(), |j| {
            let x = window.x(j);
            a <= x && x < b
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn insert(&mut self, j: usize) {
        self.words[j / 64] |= 1 << (j % 64);
    }

    pub fn remove(&mut self, j: usize) {
        self.words[j / 64] &= !(1 << (j % 64));
    }

    pub fn contains(&self, j: usize) -> bool {
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn measure(&self, window: &Window) -> f64 {
        self.count() as f64 * window.step()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&j| self.contains(j))
    }

    fn zip_with(&self, other: &Self, op: impl Fn(u64, u64) -> u64) -> Self {
        assert_eq!(self.len, other.len, "sets on different grids");
        MeasurableSet { words: self.words.iter().zip(&other.words).map(|(a, b)| op(*a, *b)).collect(), len: self.len }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn indicator(&self) -> Vec<f64> {
        (0..self.len).map(|j| if self.contains(j) { 1.0 } else { 0.0 }).collect()
    }
}

/// Whether `x` lies in the half-open real interval of a dyadic frequency interval.
pub(crate) fn in_band(grid: &DyadicGrid, band: &crate::geometry::DyadicInterval, x: f64) -> bool {
    grid.locate(band.axis, band.scale, x) == band.index
}

/// `C_N f = Σ_P ⟨f, φ_P⟩ φ_P 1_{ω_{P_u}}(N(·))`, tiles in lexicographic order.
pub fn model_carleson(
    f: &SampledFunction,
    choice: &FrequencyChoice,
    tiles: &[Tile],
    bank: &PacketBank,
) -> Result<SampledFunction, OperatorError> {
    let w = *f.window();
    w.check_same(bank.window())?;
    if choice.len() != w.len() {
        return Err(OperatorError::Length { expected: w.len(), got: choice.len() });
    }
    let spectrum = f.spectrum();
    let mut sorted = tiles.to_vec();
    sorted.sort();
    let mut out = SampledFunction::zeros(w, f.kind());
    let grid = bank.grid();
    for p in &sorted {
        let up = p.freq.half(Half::Up);
        let cells: Vec<usize> = (0..w.len()).filter(|&j| in_band(grid, &up, choice.values()[j])).collect();
        if cells.is_empty() {
            continue;
        }
        let packet = bank.packet(p)?;
        let coeff = packet.coefficient(&spectrum, f.components());
        let phi = packet.time_samples();
        for (c, a) in coeff.iter().enumerate() {
            let dst = out.component_mut(c);
            for &j in &cells {
                dst[j] += a * phi[j];
            }
        }
    }
    Ok(out)
}

/// `Σ_P ε_P ⟨f, φ_P⟩ φ_P`, accumulated on the spectrum.
fn signed_tile_sum(
    f: &SampledFunction,
    tiles: &[Tile],
    signs: impl Fn(usize) -> Complex64,
    bank: &PacketBank,
) -> Result<SampledFunction, OperatorError> {
    let w = *f.window();
    w.check_same(bank.window())?;
    let spectrum = f.spectrum();
    let mut acc = vec![Complex64::new(0.0, 0.0); spectrum.len()];
    for (i, p) in tiles.iter().enumerate() {
        let packet = bank.packet(p)?;
        let eps = signs(i);
        let coeff: Vec<Complex64> = packet.coefficient(&spectrum, f.components()).into_iter().map(|a| a * eps).collect();
        packet.accumulate(&coeff, &mut acc);
    }
    Ok(SampledFunction::from_spectrum(w, f.kind(), acc))
}

/// `A_T f = Σ_{P ∈ T} ⟨f, φ_P⟩ φ_P`.
pub fn tree_operator(tree: &Tree, f: &SampledFunction, bank: &PacketBank) -> Result<SampledFunction, OperatorError> {
    signed_tile_sum(f, tree.tiles(), |_| Complex64::new(1.0, 0.0), bank)
}

/// `B_T f = Σ_{P ∈ T} ε_P ⟨f, φ_P⟩ φ_P` with `|ε_P| = 1`, signs in tile order.
pub fn signed_tree_operator(
    tree: &Tree,
    f: &SampledFunction,
    signs: &[Complex64],
    bank: &PacketBank,
) -> Result<SampledFunction, OperatorError> {
    if signs.len() != tree.len() {
        return Err(OperatorError::Length { expected: tree.len(), got: signs.len() });
    }
    for (p, e) in tree.tiles().iter().zip(signs) {
        if (e.norm() - 1.0).abs() > 1e-12 {
            return Err(OperatorError::NotUnimodular(*p));
        }
    }
    signed_tile_sum(f, tree.tiles(), |i| signs[i], bank)
}

/// Sum of `⟨f, φ_P⟩ φ_P` over arbitrary tiles.
pub fn tile_sum(tiles: &[Tile], f: &SampledFunction, bank: &PacketBank) -> Result<SampledFunction, OperatorError> {
    signed_tile_sum(f, tiles, |_| Complex64::new(1.0, 0.0), bank)
}

/// Hardy–Littlewood maximal function of `|f|_X` over cell-aligned intervals.
///
/// Candidates are dyadic blocks of `2^j` cells and the same blocks shifted by
/// half their length, clipped to the window; single cells are included.
pub fn hardy_littlewood(f: &SampledFunction) -> Vec<f64> {
    maximal_average(&f.pointwise_norms())
}

/// [`hardy_littlewood`] on a nonnegative sample vector.
pub fn maximal_average(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let mut best = values.to_vec();
    let mut len = 2usize;
    while len <= n {
        for offset in [0, len / 2] {
            let mut start = if offset == 0 { 0 } else { offset as isize - len as isize };
            while start < n as isize {
                let lo = start.max(0) as usize;
                let hi = ((start + len as isize) as usize).min(n);
                if hi > lo {
                    let avg = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
                    best[lo..hi].iter_mut().for_each(|b| *b = b.max(avg));
                }
                start += len as isize;
            }
        }
        len *= 2;
    }
    best
}
