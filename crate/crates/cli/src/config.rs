use phaseplane::geometry::{DyadicGrid, Universe};
use phaseplane::lab::Scenario;
use phaseplane::values::ValueKind;
use phaseplane::wavelet::{MotherWavelet, PacketBank, MIN_SPECTRAL_SAMPLES, SPACING};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

/// Environment overrides; only seeds and the output directory may be set this way.
pub const SEED_VAR: &str = "PHASEPLANE_SEED";
pub const OUT_VAR: &str = "PHASEPLANE_OUT";

#[derive(Debug, Error)]
#[error("invalid config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError { field, message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Half-length `L` of the window `[-L, L)`.
    pub window: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub trees: usize,
    pub tiles_per_tree: usize,
    /// `|F|` as a fraction of the universe's time span.
    pub f_fraction: f64,
    pub f_pieces: usize,
    /// Random spectral lines in each generated `f`.
    pub terms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub start: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    /// Tile collection in JSON; a random sparse collection is drawn when absent.
    pub tiles: Option<PathBuf>,
    pub count: usize,
    /// `(|F|, |E|)` as fractions of the time span.
    pub fractions: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    /// `(|F|, |E|)` fractions for the restricted weak-type experiment.
    pub restricted: (f64, f64),
    /// `(|F|, |E|)` fractions for the two-case experiment; `|E| > K|F|` keeps `G` nonempty.
    pub two_case: (f64, f64),
    pub major_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub samples: usize,
    pub degrees: Vec<i64>,
    pub schatten_p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: DyadicGrid,
    pub sampling: SamplingConfig,
    /// Window of the wavelet checks; `20 / Δξ` is an integer at the default.
    pub verify_sampling: SamplingConfig,
    pub universe: Universe,
    pub kind: ValueKind,
    pub q: f64,
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub p_exponents: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seeds: SeedConfig,
    /// Universe doublings measured by the stability experiments.
    pub sizes: Vec<u32>,
    pub ensemble: EnsembleConfig,
    pub decompose: DecomposeConfig,
    pub pairing: PairingConfig,
    pub converge: ConvergeConfig,
    /// Not part of the hash or the stored copy: runs differing only here are identical.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { window: 512.0, samples: 8192 }
    }
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { trees: 4, tiles_per_tree: 12, f_fraction: 0.5, f_pieces: 3, terms: 24 }
    }
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { start: 0, count: 100 }
    }
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig { tiles: None, count: 40, fractions: (0.4, 0.5) }
    }
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig { restricted: (0.4, 0.2), two_case: (0.02, 0.7), major_k: 16.0 }
    }
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig { samples: 1024, degrees: vec![1, 2, 4, 8, 16, 32, 64], schatten_p: vec![4.0 / 3.0, 2.0, 4.0] }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: DyadicGrid::default(),
            sampling: SamplingConfig::default(),
            verify_sampling: SamplingConfig { window: 320.0, samples: 8192 },
            universe: Universe { k_min: 0, k_max: 5, time_lo: -2, time_hi: 2, freq_lo: 0, freq_hi: 2 },
            kind: ValueKind::Hilbert { dim: 4 },
            q: 2.0,
            alpha: 0.9,
            alphas: vec![0.5, 0.9],
            p_exponents: vec![1.25, 2.0, 4.0],
            lambdas: vec![0.5, 0.25, 0.125, 0.0625],
            seeds: SeedConfig::default(),
            sizes: vec![0, 1, 2],
            ensemble: EnsembleConfig::default(),
            decompose: DecomposeConfig::default(),
            pairing: PairingConfig::default(),
            converge: ConvergeConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

fn check_fraction(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must lie in (0, 1], got {v}")))
    }
}

fn check_sampling(field: &'static str, s: &SamplingConfig) -> Result<(), ConfigError> {
    if !(s.window >= 2.0 * SPACING && s.window.is_finite()) {
        return Err(invalid(field, format!("window must be at least {}, got {}", 2.0 * SPACING, s.window)));
    }
    if s.samples < 2 || !s.samples.is_power_of_two() {
        return Err(invalid(field, format!("samples must be a power of two, got {}", s.samples)));
    }
    let across = (2.0 / SPACING) * 2.0 * s.window;
    if across < MIN_SPECTRAL_SAMPLES as f64 {
        return Err(invalid(field, format!("window too short for {MIN_SPECTRAL_SAMPLES} spectral samples")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| invalid(field_of(&e.to_string()), e.to_string()))
    }

    /// Applies `--seed`/`--out`, falling back to the environment.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, ConfigError> {
        let env_seed = match std::env::var(SEED_VAR) {
            Ok(s) => Some(s.trim().parse::<u64>().map_err(|e| invalid("seeds.start", format!("{SEED_VAR}={s:?}: {e}")))?),
            Err(_) => None,
        };
        if let Some(s) = seed.or(env_seed) {
            self.seeds.start = s;
        }
        if let Some(o) = out.or_else(|| std::env::var_os(OUT_VAR).map(PathBuf::from)) {
            self.out = o;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        DyadicGrid::new(self.grid.t, self.grid.r, self.grid.t_freq).map_err(|e| invalid("grid", e.to_string()))?;
        check_sampling("sampling", &self.sampling)?;
        check_sampling("verify_sampling", &self.verify_sampling)?;
        self.universe.validate().map_err(|e| invalid("universe", e.to_string()))?;
        self.kind.validate().map_err(|e| invalid("kind", e.to_string()))?;
        if !(self.q > 1.0 && self.q.is_finite()) {
            return Err(invalid("q", format!("must lie in (1, ∞), got {}", self.q)));
        }
        for &a in std::iter::once(&self.alpha).chain(&self.alphas) {
            if !(a > 0.0 && a < 1.0) {
                return Err(invalid("alpha", format!("must lie in (0, 1), got {a}")));
            }
        }
        if self.p_exponents.is_empty() || self.p_exponents.iter().any(|&p| !(p > 1.0 && p.is_finite())) {
            return Err(invalid("p_exponents", format!("each p must lie in (1, ∞), got {:?}", self.p_exponents)));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("lambdas", format!("each λ must be positive, got {:?}", self.lambdas)));
        }
        if self.seeds.count == 0 {
            return Err(invalid("seeds.count", "must be positive"));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&d| d > 6) {
            return Err(invalid("sizes", format!("need 1 to 7 doublings in 0..=6, got {:?}", self.sizes)));
        }
        let e = &self.ensemble;
        if e.trees == 0 || e.tiles_per_tree == 0 || e.f_pieces == 0 || e.terms == 0 {
            return Err(invalid("ensemble", "trees, tiles_per_tree, f_pieces and terms must be positive"));
        }
        check_fraction("ensemble.f_fraction", e.f_fraction)?;
        check_fraction("decompose.fractions", self.decompose.fractions.0)?;
        check_fraction("decompose.fractions", self.decompose.fractions.1)?;
        check_fraction("pairing.restricted", self.pairing.restricted.0)?;
        check_fraction("pairing.restricted", self.pairing.restricted.1)?;
        check_fraction("pairing.two_case", self.pairing.two_case.0)?;
        check_fraction("pairing.two_case", self.pairing.two_case.1)?;
        if self.pairing.two_case.1 <= self.pairing.two_case.0 {
            return Err(invalid("pairing.two_case", "needs |E| > |F|"));
        }
        if !(self.pairing.major_k >= 1.0 && self.pairing.major_k.is_finite()) {
            return Err(invalid("pairing.major_k", format!("must be at least 1, got {}", self.pairing.major_k)));
        }
        let c = &self.converge;
        if c.samples < 16 || !c.samples.is_power_of_two() {
            return Err(invalid("converge.samples", format!("must be a power of two ≥ 16, got {}", c.samples)));
        }
        if c.degrees.is_empty() || c.degrees.iter().any(|&n| n < 0 || 2 * n as usize >= c.samples) {
            return Err(invalid("converge.degrees", "degrees must lie in [0, samples/2)"));
        }
        if c.schatten_p.is_empty() || c.schatten_p.iter().any(|&p| !(p >= 1.0)) {
            return Err(invalid("converge.schatten_p", "each p must be at least 1"));
        }
        self.check_universe_fits()
    }

    fn check_universe_fits(&self) -> Result<(), ConfigError> {
        let largest = self.sizes.iter().copied().max().unwrap_or(0);
        let u = (0..largest).fold(self.universe, |u, _| u.doubled());
        let g = self.grid;
        let lo = g.left(&g.time(u.k_max, u.time_lo));
        let hi = g.left(&g.time(u.k_max, u.time_hi));
        if lo < -self.sampling.window || hi > self.sampling.window {
            return Err(invalid("universe", format!("time span [{lo}, {hi}) leaves the window at {largest} doublings")));
        }
        let top = g.left(&g.freq(-u.k_min, u.freq_hi));
        let nyquist = self.sampling.samples as f64 / (4.0 * self.sampling.window);
        if g.left(&g.freq(-u.k_min, u.freq_lo)) < -nyquist || top > nyquist {
            return Err(invalid("universe", format!("frequency span reaches {top}, beyond Nyquist {nyquist}")));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seeds.start..self.seeds.start + self.seeds.count).collect()
    }

    /// Canonical JSON; the hash and the stored copy both use it.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))[..12].to_string()
    }

    pub fn bank(&self) -> Result<Arc<PacketBank>, phaseplane::wavelet::WaveletError> {
        let mother = Arc::new(MotherWavelet::build(self.sampling.samples, self.sampling.window)?);
        Ok(Arc::new(PacketBank::new(mother, self.grid)))
    }

    pub fn scenario(&self, bank: Arc<PacketBank>, kind: ValueKind) -> Scenario {
        let e = &self.ensemble;
        Scenario {
            bank,
            universe: self.universe,
            kind,
            q: self.q,
            alpha: self.alpha,
            trees: e.trees,
            tiles_per_tree: e.tiles_per_tree,
            f_fraction: e.f_fraction,
            f_pieces: e.f_pieces,
            terms: e.terms,
        }
    }
}

/// Best-effort field name from a serde error message.
fn field_of(message: &str) -> &'static str {
    const FIELDS: [&str; 19] = [
        "grid", "sampling", "verify_sampling", "universe", "kind", "q", "alphas", "alpha", "p_exponents", "lambdas",
        "seeds", "sizes", "ensemble", "decompose", "pairing", "converge", "out", "window", "samples",
    ];
    FIELDS.iter().find(|f| message.contains(&format!("`{f}`"))).copied().unwrap_or("config")
}
