//! Time-frequency tile machinery for vector-valued Carleson estimates.

pub mod decomposition;
pub mod fourier;
pub mod geometry;
pub mod lab;
pub mod operators;
pub mod sampled;
pub mod values;
pub mod wavelet;
