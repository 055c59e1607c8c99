//! Uniformly sampled functions on a periodic window `[-L, L)`.

use crate::fourier;
use crate::values::{ValueError, ValueKind};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("sample count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("window half-length must be positive and finite, got {0}")]
    BadWindow(f64),
    #[error("windows differ: {0:?} vs {1:?}")]
    WindowMismatch(Window, Window),
    #[error("value kinds differ: {0:?} vs {1:?}")]
    KindMismatch(ValueKind, ValueKind),
    #[error("dilation factor {0} is not a power of two")]
    BadDilation(f64),
    #[error("non-finite sample")]
    NonFinite,
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("malformed binary data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Periodic window `[-L, L)` carrying `n` samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    half_len: f64,
    n: usize,
}

impl Window {
    pub fn new(half_len: f64, n: usize) -> Result<Window, SampleError> {
        if !(half_len > 0.0 && half_len.is_finite()) {
            return Err(SampleError::BadWindow(half_len));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(SampleError::NotPowerOfTwo(n));
        }
        Ok(Window { half_len, n })
    }

    pub fn half_len(&self) -> f64 {
        self.half_len
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_len / self.n as f64
    }

    pub fn freq_step(&self) -> f64 {
        0.5 / self.half_len
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.half_len + j as f64 * self.step()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Frequency of FFT bin `k`.
    pub fn xi(&self, k: usize) -> f64 {
        fourier::signed_index(k, self.n) as f64 * self.freq_step()
    }

    /// Index of the cell `[x_j, x_j + h)` containing `x`, if inside the window.
    pub fn cell(&self, x: f64) -> Option<usize> {
        let j = ((x + self.half_len) / self.step()).floor();
        (j >= 0.0 && j < self.n as f64).then_some(j as usize)
    }

    pub fn check_same(&self, other: &Window) -> Result<(), SampleError> {
        if self == other {
            Ok(())
        } else {
            Err(SampleError::WindowMismatch(*self, *other))
        }
    }
}

/// Vector-valued samples stored component-major: component `c` occupies
/// `data[c n .. (c + 1) n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledFunction {
    window: Window,
    kind: ValueKind,
    data: Vec<Complex64>,
}

impl SampledFunction {
    pub fn zeros(window: Window, kind: ValueKind) -> SampledFunction {
        SampledFunction { window, kind, data: vec![Complex64::new(0.0, 0.0); window.n * kind.components()] }
    }

    pub fn from_components(window: Window, kind: ValueKind, data: Vec<Complex64>) -> Result<Self, SampleError> {
        kind.validate()?;
        let expected = window.n * kind.components();
        if data.len() != expected {
            return Err(ValueError::Length { expected, got: data.len() }.into());
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SampleError::NonFinite);
        }
        Ok(SampledFunction { window, kind, data })
    }

    pub fn scalar_from_fn(window: Window, f: impl Fn(f64) -> Complex64) -> SampledFunction {
        let data = (0..window.n).map(|j| f(window.x(j))).collect();
        SampledFunction { window, kind: ValueKind::Scalar, data }
    }

    /// Build from a closure producing the whole value at each point.
    pub fn from_fn(window: Window, kind: ValueKind, f: impl Fn(f64, &mut [Complex64])) -> SampledFunction {
        let m = kind.components();
        let mut out = SampledFunction::zeros(window, kind);
        let mut v = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..window.n {
            v.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            f(window.x(j), &mut v);
            for (c, z) in v.iter().enumerate() {
                out.data[c * window.n + j] = *z;
            }
        }
        out
    }

    /// Scalar function times a fixed value.
    pub fn tensor(scalar: &[Complex64], window: Window, kind: ValueKind, value: &[Complex64]) -> SampledFunction {
        let mut out = SampledFunction::zeros(window, kind);
        for (c, v) in value.iter().enumerate() {
            for (dst, s) in out.component_mut(c).iter_mut().zip(scalar) {
                *dst = s * v;
            }
        }
        out
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn components(&self) -> usize {
        self.kind.components()
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.window.n..(c + 1) * self.window.n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.window.n;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn value_at(&self, j: usize) -> Vec<Complex64> {
        (0..self.components()).map(|c| self.data[c * self.window.n + j]).collect()
    }

    pub fn set_value(&mut self, j: usize, v: &[Complex64]) {
        let n = self.window.n;
        for (c, z) in v.iter().enumerate() {
            self.data[c * n + j] = *z;
        }
    }

    /// Pointwise norm `|f(x_j)|_X`.
    pub fn pointwise_norms(&self) -> Vec<f64> {
        let n = self.window.n;
        match self.kind {
            ValueKind::Scalar => self.data.iter().map(|z| z.norm()).collect(),
            ValueKind::Hilbert { .. } => {
                let mut acc = vec![0.0; n];
                for c in 0..self.components() {
                    for (a, z) in acc.iter_mut().zip(self.component(c)) {
                        *a += z.norm_sqr();
                    }
                }
                acc.into_iter().map(f64::sqrt).collect()
            }
            ValueKind::Schatten { .. } => (0..n).map(|j| self.kind.norm(&self.value_at(j))).collect(),
        }
    }

    /// `(∫ |f|_X^p)^{1/p}` as `h Σ_j |f(x_j)|^p` over the sample cells; `p = ∞` is the grid maximum.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_of_norms(&self.pointwise_norms(), p, self.window.step())
    }

    pub fn sup_norm(&self) -> f64 {
        self.pointwise_norms().into_iter().fold(0.0, f64::max)
    }

    fn check_compatible(&self, other: &SampledFunction) -> Result<(), SampleError> {
        self.window.check_same(&other.window)?;
        if self.kind != other.kind {
            return Err(SampleError::KindMismatch(self.kind, other.kind));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &SampledFunction) -> Result<(), SampleError> {
        self.check_compatible(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn sub(&self, other: &SampledFunction) -> Result<SampledFunction, SampleError> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(SampledFunction { data, ..*self })
    }

    pub fn scaled(&self, lambda: Complex64) -> SampledFunction {
        SampledFunction { data: self.data.iter().map(|z| z * lambda).collect(), ..*self }
    }

    /// Multiply every component by a real weight per sample.
    pub fn mask(&self, weights: &[f64]) -> SampledFunction {
        let n = self.window.n;
        let data = self.data.iter().enumerate().map(|(i, z)| z * weights[i % n]).collect();
        SampledFunction { data, ..*self }
    }

    /// Discrete spectrum, component-major in FFT bin order.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut out = self.data.clone();
        for chunk in out.chunks_mut(self.window.n) {
            fourier::forward_in_place(chunk, self.window.step());
        }
        out
    }

    pub fn from_spectrum(window: Window, kind: ValueKind, spectrum: Vec<Complex64>) -> SampledFunction {
        let mut data = spectrum;
        for chunk in data.chunks_mut(window.n) {
            fourier::inverse_in_place(chunk, window.freq_step());
        }
        SampledFunction { window, kind, data }
    }

    /// Apply a frequency multiplier `m(ξ_k)` to every component.
    pub fn fourier_multiply(&self, multiplier: impl Fn(f64) -> Complex64) -> SampledFunction {
        let weights: Vec<Complex64> = (0..self.window.n).map(|k| multiplier(self.window.xi(k))).collect();
        let mut spec = self.spectrum();
        for chunk in spec.chunks_mut(self.window.n) {
            chunk.iter_mut().zip(&weights).for_each(|(z, w)| *z *= w);
        }
        SampledFunction::from_spectrum(self.window, self.kind, spec)
    }

    /// `Mod_λ f(x) = e^{2πiλx} f(x)`.
    pub fn modulate(&self, lambda: f64) -> SampledFunction {
        let n = self.window.n;
        let phases: Vec<Complex64> = (0..n).map(|j| Complex64::from_polar(1.0, 2.0 * PI * lambda * self.window.x(j))).collect();
        let data = self.data.iter().enumerate().map(|(i, z)| z * phases[i % n]).collect();
        SampledFunction { data, ..*self }
    }

    /// `T_t f(x) = f(x - t)`, exact for band-limited periodic data.
    pub fn translate(&self, t: f64) -> SampledFunction {
        self.fourier_multiply(|xi| Complex64::from_polar(1.0, -2.0 * PI * t * xi))
    }

    /// `Dil_δ^p f(x) = δ^{-1/p} f(x/δ)` for `δ` a power of two.
    ///
    /// Computed on the spectrum, `(Dil_δ^p f)^(ξ) = δ^{1-1/p} f̂(δξ)`; a finer
    /// frequency grid is obtained by zero-padding in time when `δ < 1`.
    pub fn dilate(&self, delta: f64, p: f64) -> Result<SampledFunction, SampleError> {
        let e = delta.log2();
        if !(delta > 0.0) || e.fract() != 0.0 {
            return Err(SampleError::BadDilation(delta));
        }
        let e = e as i32;
        let n = self.window.n;
        let gain = delta.powf(1.0 - 1.0 / p);
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.components() {
            let src = self.component(c);
            let fine: Vec<Complex64> = if e >= 0 {
                fourier::forward(src, self.window.step())
            } else {
                let factor = 1usize << (-e);
                let mut padded = vec![Complex64::new(0.0, 0.0); n * factor];
                let offset = (factor - 1) * n / 2;
                padded[offset..offset + n].copy_from_slice(src);
                fourier::forward(&padded, self.window.step())
            };
            let fine_n = fine.len() as i64;
            let spec: Vec<Complex64> = (0..n)
                .map(|k| {
                    let idx = fourier::signed_index(k, n);
                    let target = if e >= 0 { idx << e } else { idx };
                    if target < -fine_n / 2 || target >= fine_n / 2 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        fine[fourier::bin(target, fine.len())] * gain
                    }
                })
                .collect();
            out.extend(fourier::inverse(&spec, self.window.freq_step()));
        }
        Ok(SampledFunction { data: out, ..*self })
    }

    /// `∫ f conj(g)` per component, summed; scalar pairing of equal kinds.
    pub fn inner(&self, other: &SampledFunction) -> Result<Complex64, SampleError> {
        self.check_compatible(other)?;
        let s: Complex64 = self.data.iter().zip(&other.data).map(|(a, b)| a * b.conj()).sum();
        Ok(s * self.window.step())
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<(), SampleError> {
        let (dim, p) = match self.kind {
            ValueKind::Scalar => (1u32, 0.0),
            ValueKind::Hilbert { dim } => (dim as u32, 0.0),
            ValueKind::Schatten { dim, p } => (dim as u32, p),
        };
        w.write_all(&self.window.half_len.to_le_bytes())?;
        w.write_all(&(self.window.n as u32).to_le_bytes())?;
        w.write_all(&self.kind.tag().to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&p.to_le_bytes())?;
        for j in 0..self.window.n {
            for z in self.value_at(j) {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<SampledFunction, SampleError> {
        fn f64_of(r: &mut impl Read) -> Result<f64, SampleError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        }
        fn u32_of(r: &mut impl Read) -> Result<u32, SampleError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        let half_len = f64_of(&mut r)?;
        let n = u32_of(&mut r)? as usize;
        let tag = u32_of(&mut r)?;
        let dim = u32_of(&mut r)? as usize;
        let p = f64_of(&mut r)?;
        let kind = match tag {
            0 => ValueKind::Scalar,
            1 => ValueKind::Hilbert { dim },
            2 => ValueKind::Schatten { dim, p },
            other => return Err(SampleError::Format(format!("unknown kind tag {other}"))),
        };
        kind.validate()?;
        let window = Window::new(half_len, n)?;
        let mut out = SampledFunction::zeros(window, kind);
        let mut v = vec![Complex64::new(0.0, 0.0); kind.components()];
        for j in 0..n {
            for z in v.iter_mut() {
                *z = Complex64::new(f64_of(&mut r)?, f64_of(&mut r)?);
            }
            out.set_value(j, &v);
        }
        if out.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SampleError::NonFinite);
        }
        Ok(out)
    }

    /// CSV with header `index,x,re,im`, or `index,x,component,re,im` for vector kinds.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let scalar = self.kind == ValueKind::Scalar;
        if scalar {
            writeln!(w, "index,x,re,im")?;
        } else {
            writeln!(w, "index,x,component,re,im")?;
        }
        for j in 0..self.window.n {
            let x = self.window.x(j);
            for (c, z) in self.value_at(j).iter().enumerate() {
                if scalar {
                    writeln!(w, "{j},{x},{},{}", z.re, z.im)?;
                } else {
                    writeln!(w, "{j},{x},{c},{},{}", z.re, z.im)?;
                }
            }
        }
        Ok(())
    }
}

/// `(h Σ v^p)^{1/p}`, or the maximum for `p = ∞`.
pub fn lp_of_norms(norms: &[f64], p: f64, h: f64) -> f64 {
    if p.is_infinite() {
        return norms.iter().copied().fold(0.0, f64::max);
    }
    let top = norms.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    top * (h * norms.iter().map(|&v| (v / top).powf(p)).sum::<f64>()).powf(1.0 / p)
}
