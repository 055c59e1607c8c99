//! The mother wavelet and its per-tile wave packets.
//!
//! `φ̂ = b / (Σ_n b(· + n/20)²)^{1/2}` for the bump `b(ξ) = exp(-1/(1-(20ξ)²))`
//! on `|ξ| < 1/20`. Periodizing `φ̂²` over `ℤ/20` then gives exactly one.
//!
//! A packet `φ_P = Mod_{c(ω_d)} T_{c(I)} Dil²_{|I|} φ` is stored by its
//! compact spectrum; time samples are synthesized on first use.

use crate::fourier;
use crate::geometry::{DyadicGrid, Half, Tile};
use crate::sampled::{SampleError, SampledFunction, Window};
use crate::values::ValueKind;
use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};
use thiserror::Error;

/// Spacing of the periodization and inverse spectral support radius.
pub const SPACING: f64 = 20.0;

/// Minimum number of spectral samples across `[-1/20, 1/20]`.
pub const MIN_SPECTRAL_SAMPLES: usize = 64;

#[derive(Debug, Error)]
pub enum WaveletError {
    #[error("window half-length {0} is below 40; translates by ±20 do not fit")]
    WindowTooSmall(f64),
    #[error("only {0} spectral samples across [-1/20, 1/20]; at least 64 are required")]
    TooCoarse(usize),
    #[error("tile {0} does not fit the sampled window")]
    OutsideWindow(Tile),
    #[error("tile {0} has spectral support beyond the Nyquist frequency")]
    AboveNyquist(Tile),
    #[error("tile {0} is too long: fewer than two 20|I| translates fit in the window")]
    ScaleTooLarge(Tile),
    #[error("tile belongs to a different grid than the packet bank")]
    GridMismatch,
    #[error("overlap bound expects |I_P'| <= |I_P|; swap the arguments")]
    ScaleOrder,
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Smooth even bump supported in `(-1/20, 1/20)`.
pub fn bump(xi: f64) -> f64 {
    let u = SPACING * xi;
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

/// Analytic `φ̂(ξ)`.
pub fn phi_hat(xi: f64) -> f64 {
    let b = bump(xi);
    if b == 0.0 {
        return 0.0;
    }
    let base = (-SPACING * xi).floor() as i64;
    let norm: f64 = (base - 1..=base + 2).map(|n| bump(xi + n as f64 / SPACING).powi(2)).sum();
    b / norm.sqrt()
}

/// `Σ_n φ̂(ξ + n/20)²`, one by construction.
pub fn periodization(xi: f64) -> f64 {
    let base = (-SPACING * xi).floor() as i64;
    (base - 2..=base + 2).map(|n| phi_hat(xi + n as f64 / SPACING).powi(2)).sum()
}

#[derive(Debug)]
pub struct MotherWavelet {
    window: Window,
    spectrum: Vec<Complex64>,
    time: Vec<Complex64>,
}

impl MotherWavelet {
    pub fn build(n: usize, half_len: f64) -> Result<MotherWavelet, WaveletError> {
        if !(half_len >= 2.0 * SPACING) {
            return Err(WaveletError::WindowTooSmall(half_len));
        }
        let window = Window::new(half_len, n)?;
        let across = ((2.0 / SPACING) / window.freq_step()).round() as usize;
        if across < MIN_SPECTRAL_SAMPLES {
            return Err(WaveletError::TooCoarse(across));
        }
        let spectrum: Vec<Complex64> = (0..n).map(|k| Complex64::new(phi_hat(window.xi(k)), 0.0)).collect();
        let time = fourier::inverse(&spectrum, window.freq_step());
        Ok(MotherWavelet { window, spectrum, time })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    /// Sampled `φ̂` in FFT bin order.
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    pub fn samples(&self) -> SampledFunction {
        SampledFunction::from_components(self.window, ValueKind::Scalar, self.time.clone()).expect("finite samples")
    }

    /// `‖φ‖₂²`, computed on the spectrum.
    pub fn norm_sqr(&self) -> f64 {
        self.window.freq_step() * self.spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// `⟨T_t φ, φ⟩`.
    pub fn translate_overlap(&self, t: f64) -> Complex64 {
        let w = &self.window;
        let s: Complex64 = (0..w.len())
            .map(|k| Complex64::from_polar(self.spectrum[k].norm_sqr(), -2.0 * PI * t * w.xi(k)))
            .sum();
        s * w.freq_step()
    }

    /// Largest imaginary part of the time samples.
    pub fn imaginary_residue(&self) -> f64 {
        self.time.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }
}

/// Wave packet with compact spectral support.
#[derive(Debug)]
pub struct WavePacket {
    tile: Tile,
    window: Window,
    start: i64,
    spectrum: Vec<Complex64>,
    time: OnceLock<Vec<Complex64>>,
}

impl WavePacket {
    pub fn tile(&self) -> &Tile {
        &self.tile
    }

    /// Signed frequency index of the first support bin.
    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn spectral_values(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// Full spectrum in FFT bin order.
    pub fn full_spectrum(&self) -> Vec<Complex64> {
        let n = self.window.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (i, z) in self.spectrum.iter().enumerate() {
            out[fourier::bin(self.start + i as i64, n)] = *z;
        }
        out
    }

    pub fn time_samples(&self) -> &[Complex64] {
        self.time.get_or_init(|| fourier::inverse(&self.full_spectrum(), self.window.freq_step()))
    }

    pub fn values(&self) -> SampledFunction {
        SampledFunction::from_components(self.window, ValueKind::Scalar, self.time_samples().to_vec())
            .expect("finite samples")
    }

    pub fn norm_sqr(&self) -> f64 {
        self.window.freq_step() * self.spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// `⟨f, φ_P⟩` per component from a component-major spectrum of `f`.
    pub fn coefficient(&self, f_spectrum: &[Complex64], components: usize) -> Vec<Complex64> {
        let n = self.window.len();
        (0..components)
            .map(|c| {
                let comp = &f_spectrum[c * n..(c + 1) * n];
                let s: Complex64 = self
                    .spectrum
                    .iter()
                    .enumerate()
                    .map(|(i, z)| comp[fourier::bin(self.start + i as i64, n)] * z.conj())
                    .sum();
                s * self.window.freq_step()
            })
            .collect()
    }

    /// Adds `coefficient · φ̂_P` into a component-major spectrum.
    pub fn accumulate(&self, coefficient: &[Complex64], acc: &mut [Complex64]) {
        let n = self.window.len();
        for (c, a) in coefficient.iter().enumerate() {
            let comp = &mut acc[c * n..(c + 1) * n];
            for (i, z) in self.spectrum.iter().enumerate() {
                comp[fourier::bin(self.start + i as i64, n)] += a * z;
            }
        }
    }

    /// `⟨φ_P, φ_Q⟩`.
    pub fn inner(&self, other: &WavePacket) -> Complex64 {
        let lo = self.start.max(other.start);
        let hi = (self.start + self.spectrum.len() as i64).min(other.start + other.spectrum.len() as i64);
        let s: Complex64 = (lo..hi)
            .map(|k| self.spectrum[(k - self.start) as usize] * other.spectrum[(k - other.start) as usize].conj())
            .sum();
        s * self.window.freq_step()
    }

    /// Fraction of `‖φ̂_P‖²` outside the closed interval `[a, b]`.
    pub fn spectral_mass_outside(&self, a: f64, b: f64) -> f64 {
        let full = self.full_spectrum();
        let total: f64 = full.iter().map(|z| z.norm_sqr()).sum();
        let outside: f64 = full
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let xi = self.window.xi(*k);
                xi < a || xi > b
            })
            .map(|(_, z)| z.norm_sqr())
            .sum();
        outside / total
    }
}

/// Synthesizes packets on demand and caches them per tile.
#[derive(Debug)]
pub struct PacketBank {
    mother: Arc<MotherWavelet>,
    grid: DyadicGrid,
    cache: RwLock<HashMap<Tile, Arc<WavePacket>>>,
}

impl PacketBank {
    pub fn new(mother: Arc<MotherWavelet>, grid: DyadicGrid) -> PacketBank {
        PacketBank { mother, grid, cache: RwLock::new(HashMap::new()) }
    }

    pub fn mother(&self) -> &MotherWavelet {
        &self.mother
    }

    pub fn grid(&self) -> &DyadicGrid {
        &self.grid
    }

    pub fn window(&self) -> &Window {
        self.mother.window()
    }

    pub fn packet(&self, tile: &Tile) -> Result<Arc<WavePacket>, WaveletError> {
        if let Some(p) = self.cache.read().expect("packet cache poisoned").get(tile) {
            return Ok(Arc::clone(p));
        }
        let packet = Arc::new(synthesize_packet(&self.mother, &self.grid, tile)?);
        let mut cache = self.cache.write().expect("packet cache poisoned");
        Ok(Arc::clone(cache.entry(*tile).or_insert(packet)))
    }

    pub fn cached(&self) -> usize {
        self.cache.read().expect("packet cache poisoned").len()
    }
}

/// Builds `φ_P` from the analytic `φ̂`.
pub fn synthesize_packet(mother: &MotherWavelet, grid: &DyadicGrid, tile: &Tile) -> Result<WavePacket, WaveletError> {
    if tile.grid() != grid.key() {
        return Err(WaveletError::GridMismatch);
    }
    let window = *mother.window();
    let (l, n) = (window.half_len(), window.len());
    let len = grid.length(&tile.time);
    if grid.left(&tile.time) < -l || grid.right(&tile.time) > l {
        return Err(WaveletError::OutsideWindow(*tile));
    }
    if 2.0 * SPACING * len > 2.0 * l {
        return Err(WaveletError::ScaleTooLarge(*tile));
    }
    let center = grid.center(&tile.time);
    let down = tile.freq.half(Half::Down);
    let mod_freq = grid.center(&down);
    let radius = grid.length(&tile.freq) / SPACING;
    let dxi = window.freq_step();
    let start = ((mod_freq - radius) / dxi).ceil() as i64;
    let stop = ((mod_freq + radius) / dxi).floor() as i64;
    if start <= -(n as i64) / 2 || stop >= n as i64 / 2 {
        return Err(WaveletError::AboveNyquist(*tile));
    }
    let amp = len.sqrt();
    let spectrum = (start..=stop)
        .map(|k| {
            let d = k as f64 * dxi - mod_freq;
            Complex64::from_polar(amp * phi_hat(len * d), -2.0 * PI * center * d)
        })
        .collect();
    Ok(WavePacket { tile: *tile, window, start, spectrum, time: OnceLock::new() })
}

/// `⟨f, φ_P⟩` by quadrature in time.
pub fn pair(f: &SampledFunction, packet: &WavePacket) -> Result<Vec<Complex64>, WaveletError> {
    f.window().check_same(&packet.window)?;
    let h = packet.window.step();
    let phi = packet.time_samples();
    Ok((0..f.components())
        .map(|c| f.component(c).iter().zip(phi).map(|(a, b)| a * b.conj()).sum::<Complex64>() * h)
        .collect())
}

/// `∫_a^b v_I` for `v_I(x) = |I|^{-1} (1 + |x - c|/|I|)^{-10}`.
pub fn weight_integral(center: f64, len: f64, a: f64, b: f64) -> f64 {
    let antiderivative = |x: f64| {
        let u = (x - center) / len;
        u.signum() * (1.0 - (1.0 + u.abs()).powi(-9)) / 9.0
    };
    antiderivative(b) - antiderivative(a)
}

/// `(|⟨φ_P, φ_P'⟩|, (|I_P|/|I_P'|)^{1/2} ‖v_{I_P} 1_{I_P'}‖₁)` for `|I_P'| ≤ |I_P|`.
pub fn packet_overlap_bound(bank: &PacketBank, p: &Tile, q: &Tile) -> Result<(f64, f64), WaveletError> {
    if q.scale() > p.scale() {
        return Err(WaveletError::ScaleOrder);
    }
    let g = bank.grid();
    let (a, b) = (bank.packet(p)?, bank.packet(q)?);
    let lhs = a.inner(&b).norm();
    let (lp, lq) = (g.length(&p.time), g.length(&q.time));
    let mass = weight_integral(g.center(&p.time), lp, g.left(&q.time), g.right(&q.time));
    Ok((lhs, (lp / lq).sqrt() * mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mother() -> Arc<MotherWavelet> {
        Arc::new(MotherWavelet::build(8192, 320.0).unwrap())
    }

    #[test]
    fn build_rejects_bad_windows() {
        assert!(matches!(MotherWavelet::build(8192, 30.0), Err(WaveletError::WindowTooSmall(_))));
        assert!(matches!(MotherWavelet::build(4096, 160.0), Err(WaveletError::TooCoarse(32))));
        assert!(matches!(MotherWavelet::build(5000, 320.0), Err(WaveletError::Sample(SampleError::NotPowerOfTwo(5000)))));
    }

    #[test]
    fn mother_is_real_even_and_normalized() {
        let m = mother();
        assert!(m.imaginary_residue() < 1e-12);
        assert!(m.spectrum().iter().all(|z| z.re >= 0.0 && z.im == 0.0));
        assert!((m.norm_sqr() - 1.0 / SPACING).abs() < 1e-12);
        assert!(m.samples().lp_norm(2.0) > 0.0);
        for xi in [0.0, 0.013, -0.049, 0.05, 0.2] {
            assert!((periodization(xi) - 1.0).abs() < 1e-12);
        }
        assert_eq!(phi_hat(0.05), 0.0);
    }

    #[test]
    fn translates_are_orthogonal() {
        let m = mother();
        for n in 1..=10 {
            assert!(m.translate_overlap(SPACING * n as f64).norm() < 1e-12);
        }
    }

    #[test]
    fn unit_packet_is_a_translate() {
        // r = 1, t' = -1/4: the unit tile with m = 0 has c(ω_d) = 0.
        let grid = DyadicGrid::new(0.0, 1.0, -0.25).unwrap();
        let m = mother();
        let bank = PacketBank::new(m.clone(), grid);
        let p = bank.packet(&grid.tile(0, 3, 0)).unwrap();
        let expected = m.samples().translate(3.5);
        assert!(p.values().sub(&expected).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn packets_match_operator_composition() {
        let grid = DyadicGrid::default();
        let m = mother();
        let bank = PacketBank::new(m.clone(), grid);
        // |I| >= 1, so the dilation is an exact spectral resampling.
        for tile in [grid.tile(1, 5, 1), grid.tile(2, -7, 3), grid.tile(3, 2, -2), grid.tile(1, 0, 0)] {
            let len = grid.length(&tile.time);
            let composed = m
                .samples()
                .dilate(len, 2.0)
                .unwrap()
                .translate(grid.center(&tile.time))
                .modulate(grid.center(&tile.freq.half(Half::Down)));
            let p = bank.packet(&tile).unwrap();
            let err = p.values().sub(&composed).unwrap().sup_norm();
            assert!(err < 1e-10, "{tile} {err} {}", p.values().sup_norm());
            assert!((p.norm_sqr() - m.norm_sqr()).abs() < 1e-12);
        }
        assert_eq!(bank.cached(), 4);
    }

    #[test]
    fn dilation_scales_sup_norm() {
        let grid = DyadicGrid::default();
        let bank = PacketBank::new(mother(), grid);
        // Both centers fall on sample points, where |φ_P| peaks.
        let a = bank.packet(&grid.tile(0, 2, 0)).unwrap().values().sup_norm();
        let b = bank.packet(&grid.tile(2, 2, 0)).unwrap().values().sup_norm();
        // Periodic images of the wider packet perturb its peak slightly.
        assert!((a / b - 2.0).abs() < 1e-4, "{a} {b}");
    }

    #[test]
    fn pairing_agrees_with_spectral_coefficient() {
        let grid = DyadicGrid::default();
        let bank = PacketBank::new(mother(), grid);
        let p = bank.packet(&grid.tile(1, 3, 2)).unwrap();
        let f = p.values();
        let direct = pair(&f, &p).unwrap()[0];
        assert!((direct.re - m_norm()).abs() < 1e-12 && direct.im.abs() < 1e-12);
        let spectral = p.coefficient(&f.spectrum(), 1)[0];
        assert!((spectral - direct).norm() < 1e-12);
    }

    fn m_norm() -> f64 {
        1.0 / SPACING
    }

    #[test]
    fn weight_integral_closed_form() {
        assert!((weight_integral(0.0, 1.0, -1e9, 1e9) - 2.0 / 9.0).abs() < 1e-12);
        assert!((weight_integral(3.0, 2.0, 3.0, 5.0) - (1.0 - 2f64.powi(-9)) / 9.0).abs() < 1e-15);
    }

    #[test]
    fn overlap_bound_cases() {
        let grid = DyadicGrid::default();
        let bank = PacketBank::new(mother(), grid);
        let p = grid.tile(1, 2, 1);
        let (lhs, rhs) = packet_overlap_bound(&bank, &p, &p).unwrap();
        assert!((lhs - m_norm()).abs() < 1e-12 && rhs > 0.0);
        let (lhs, _) = packet_overlap_bound(&bank, &grid.tile(1, 2, 1), &grid.tile(0, 3, 1)).unwrap();
        assert!(lhs < 1e-10);
        assert!(matches!(packet_overlap_bound(&bank, &grid.tile(0, 0, 0), &p), Err(WaveletError::ScaleOrder)));
    }
}
