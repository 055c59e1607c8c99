//! Value spaces: complex scalars, finite-dimensional Hilbert spaces and
//! Schatten classes of `d × d` matrices.
//!
//! A value is a flat slice of complex components. Matrices are row-major.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValueError {
    #[error("dimension {0} outside 1..=8")]
    Dimension(usize),
    #[error("Schatten exponent must lie in (1, inf], got {0}")]
    Exponent(f64),
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("value kinds do not match: {0:?} vs {1:?}")]
    KindMismatch(ValueKind, ValueKind),
    #[error("expected {expected} components, got {got}")]
    Length { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValueKind {
    Scalar,
    Hilbert {
        dim: usize,
    },
    Schatten {
        dim: usize,
        #[serde(with = "exponent")]
        p: f64,
    },
}

/// Exponents serialize as numbers, or the string `"inf"`.
pub mod exponent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*p)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(p) => Ok(p),
            Repr::Text(s) if s == "inf" || s == "infinity" => Ok(f64::INFINITY),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("invalid exponent {s:?}"))),
        }
    }
}

impl ValueKind {
    pub fn validate(&self) -> Result<(), ValueError> {
        match *self {
            ValueKind::Scalar => Ok(()),
            ValueKind::Hilbert { dim } => check_dim(dim),
            ValueKind::Schatten { dim, p } => {
                check_dim(dim)?;
                if p > 1.0 && !p.is_nan() {
                    Ok(())
                } else {
                    Err(ValueError::Exponent(p))
                }
            }
        }
    }

    pub fn components(&self) -> usize {
        match *self {
            ValueKind::Scalar => 1,
            ValueKind::Hilbert { dim } => dim,
            ValueKind::Schatten { dim, .. } => dim * dim,
        }
    }

    /// Binary header tag: 0 scalar, 1 Hilbert, 2 Schatten.
    pub fn tag(&self) -> u32 {
        match self {
            ValueKind::Scalar => 0,
            ValueKind::Hilbert { .. } => 1,
            ValueKind::Schatten { .. } => 2,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ValueKind::Scalar => 1,
            ValueKind::Hilbert { dim } | ValueKind::Schatten { dim, .. } => dim,
        }
    }

    /// Kind of the dual space; Schatten exponents become `p' = p/(p-1)`.
    pub fn dual(&self) -> ValueKind {
        match *self {
            ValueKind::Schatten { dim, p } => ValueKind::Schatten { dim, p: conjugate_exponent(p) },
            other => other,
        }
    }

    pub fn norm(&self, v: &[Complex64]) -> f64 {
        match *self {
            ValueKind::Scalar => v[0].norm(),
            ValueKind::Hilbert { .. } => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            ValueKind::Schatten { dim, p } => schatten_from_singular(&singular_values(v, dim), p),
        }
    }

    /// Identity element: `1`, `e_1`, or the identity matrix.
    pub fn unit(&self) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); self.components()];
        match *self {
            ValueKind::Schatten { dim, .. } => (0..dim).for_each(|i| v[i * dim + i] = Complex64::new(1.0, 0.0)),
            _ => v[0] = Complex64::new(1.0, 0.0),
        }
        v
    }
}

fn check_dim(dim: usize) -> Result<(), ValueError> {
    if (1..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(ValueError::Dimension(dim))
    }
}

/// `p' = 1 + 1/(p-1)`, which loses less precision than `p/(p-1)` near `p = 1`.
pub fn conjugate_exponent(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        1.0 + 1.0 / (p - 1.0)
    }
}

/// Bilinear pairing `Σ x_i conj(y_i)`; for matrices `tr(x yᴴ)`.
pub fn dual_pair(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
}

/// Checked variant of [`dual_pair`] for values of declared kinds.
pub fn dual_pair_checked(
    kind: ValueKind,
    x: &[Complex64],
    dual_kind: ValueKind,
    y: &[Complex64],
) -> Result<Complex64, ValueError> {
    if kind.dual() != dual_kind {
        return Err(ValueError::KindMismatch(kind, dual_kind));
    }
    for v in [x, y] {
        if v.len() != kind.components() {
            return Err(ValueError::Length { expected: kind.components(), got: v.len() });
        }
    }
    Ok(dual_pair(x, y))
}

pub fn schatten_norm(a: &[Complex64], dim: usize, p: f64) -> Result<f64, ValueError> {
    check_dim(dim)?;
    if !(p >= 1.0) {
        return Err(ValueError::Exponent(p));
    }
    if a.len() != dim * dim {
        return Err(ValueError::Length { expected: dim * dim, got: a.len() });
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(ValueError::NonFinite);
    }
    Ok(schatten_from_singular(&singular_values(a, dim), p))
}

fn schatten_from_singular(s: &[f64], p: f64) -> f64 {
    let top = s.iter().fold(0.0f64, |m, &x| m.max(x));
    if p.is_infinite() || top == 0.0 {
        return top;
    }
    // Scale by the largest value to avoid overflow in σ^p.
    top * s.iter().map(|&x| (x / top).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Singular values of a row-major `dim × dim` matrix, descending.
pub fn singular_values(a: &[Complex64], dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![a[0].norm()];
    }
    let (cols, _) = jacobi(a, dim, false);
    let mut s: Vec<f64> = cols.iter().map(|c| column_norm(c)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn column_norm(c: &[Complex64]) -> f64 {
    c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// One-sided Jacobi: columns of `A` are rotated pairwise until mutually
/// orthogonal, giving `AV = UΣ` column by column. `V` is tracked on request.
fn jacobi(a: &[Complex64], dim: usize, track: bool) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
    let mut cols: Vec<Vec<Complex64>> = (0..dim).map(|j| (0..dim).map(|i| a[i * dim + j]).collect()).collect();
    let mut v: Vec<Vec<Complex64>> = if track {
        (0..dim).map(|j| (0..dim).map(|i| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).collect()).collect()
    } else {
        Vec::new()
    };
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..dim {
            for j in i + 1..dim {
                let alpha: f64 = cols[i].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cols[j].iter().map(|z| z.norm_sqr()).sum();
                let gamma: Complex64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if g <= 1e-15 * (alpha * beta).sqrt() || g == 0.0 {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut cols, &mut v] {
                    if m.is_empty() {
                        continue;
                    }
                    for r in 0..dim {
                        let x = m[i][r];
                        let y = m[j][r] * phase.conj();
                        m[i][r] = x * c - y * s;
                        m[j][r] = x * s + y * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (cols, v)
}

impl ValueKind {
    /// Element `y` of the dual kind with `‖y‖ = 1` and `⟨v, y⟩ = ‖v‖`; zero for `v = 0`.
    pub fn norming_dual(&self, v: &[Complex64]) -> Vec<Complex64> {
        let zero = Complex64::new(0.0, 0.0);
        let norm = self.norm(v);
        if norm == 0.0 {
            return vec![zero; v.len()];
        }
        match *self {
            ValueKind::Scalar | ValueKind::Hilbert { .. } => v.iter().map(|z| z / norm).collect(),
            ValueKind::Schatten { dim, p } => {
                // AV = W = UΣ, so the norming element is Σ_k σ_k^{p-2} w_k v_kᴴ / ‖A‖_p^{p-1}.
                let (w, vs) = jacobi(v, dim, true);
                let mut out = vec![zero; dim * dim];
                for (wk, vk) in w.iter().zip(&vs) {
                    let sigma = column_norm(wk);
                    if sigma <= 1e-15 * norm {
                        continue;
                    }
                    let weight = (sigma / norm).powf(p - 2.0) / norm;
                    for r in 0..dim {
                        for c in 0..dim {
                            out[r * dim + c] += wk[r] * vk[c].conj() * weight;
                        }
                    }
                }
                out
            }
        }
    }
}
