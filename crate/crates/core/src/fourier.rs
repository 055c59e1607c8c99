//! Continuous Fourier transform on a periodic window, realized by the FFT.
//!
//! Samples sit at `x_j = -L + j h` with `h = 2L/N`; frequencies at
//! `ξ_k = k Δξ` with `Δξ = 1/(2L)` and `k` read as a signed index.
//! The normalization makes `f̂(ξ_k) ≈ ∫ f(x) e^{-2πixξ_k} dx`.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type Plan = Arc<dyn Fft<f64>>;

fn plans(n: usize) -> (Plan, Plan) {
    static CACHE: OnceLock<Mutex<HashMap<usize, (Plan, Plan)>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().expect("fft plan cache poisoned");
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

/// Signed frequency index of FFT bin `k`.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// FFT bin of a signed frequency index, taken modulo `n`.
pub fn bin(index: i64, n: usize) -> usize {
    index.rem_euclid(n as i64) as usize
}

fn alternate(buf: &mut [Complex64], scale: f64) {
    for (k, z) in buf.iter_mut().enumerate() {
        *z *= if k % 2 == 0 { scale } else { -scale };
    }
}

/// In-place forward transform with step `h`: `f̂_k = h (-1)^k FFT(f)_k`.
pub fn forward_in_place(buf: &mut [Complex64], h: f64) {
    let (fwd, _) = plans(buf.len());
    fwd.process(buf);
    alternate(buf, h);
}

/// In-place inverse with spectral step `dxi`: `f_j = Δξ IFFT((-1)^k f̂_k)_j`.
pub fn inverse_in_place(buf: &mut [Complex64], dxi: f64) {
    let (_, inv) = plans(buf.len());
    alternate(buf, dxi);
    inv.process(buf);
}

pub fn forward(samples: &[Complex64], h: f64) -> Vec<Complex64> {
    let mut buf = samples.to_vec();
    forward_in_place(&mut buf, h);
    buf
}

pub fn inverse(spectrum: &[Complex64], dxi: f64) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    inverse_in_place(&mut buf, dxi);
    buf
}
