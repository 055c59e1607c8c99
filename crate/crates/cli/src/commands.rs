use crate::artifacts::ArtifactSet;
use crate::config::{ConfigError, ExperimentConfig};
use num_complex::Complex64;
use phaseplane::decomposition::{full_decomposition, DecompositionError, DensityContext, EnergyContext};
use phaseplane::geometry::{CollectionFile, GeometryError, Half, TileCollection, TileRecord};
use phaseplane::lab::{
    convergence_errors, random_disjprop_collection, reports_from_rows, smooth_matrix_function, write_reports_csv,
    LabError, RatioReport, RatioRow, RatioSummary,
};
use phaseplane::operators::{self, partial_sum, partial_sum_by_kernel, OperatorError};
use phaseplane::sampled::{SampledFunction, Window};
use phaseplane::values::ValueKind;
use phaseplane::wavelet::{periodization, MotherWavelet, PacketBank, WaveletError, SPACING};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

/// Numerical floors checked by `wavelet-verify`; a miss exits with code 3.
pub const PERIODIZATION_TOL: f64 = 1e-9;
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
pub const SUPPORT_TOL: f64 = 1e-10;
pub const PROJECTION_TOL: f64 = 1e-8;
pub const KERNEL_TOL: f64 = 1e-6;
/// Largest tolerated `|f| - 1_F` before the final clip.
pub const CLIP_RESIDUAL_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    WaveletVerify,
    GenTiles,
    Decompose,
    TileType,
    CarlesonPairing,
    Converge,
    MajorSubset,
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::WaveletVerify => "wavelet-verify",
            Command::GenTiles => "gen-tiles",
            Command::Decompose => "decompose",
            Command::TileType => "tile-type",
            Command::CarlesonPairing => "carleson-pairing",
            Command::Converge => "converge",
            Command::MajorSubset => "major-subset",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical floor violated: {0}")]
    Floor(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("malformed artifact {file}: {message}")]
    Artifact { file: String, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Floor(_) => 3,
            _ => 1,
        }
    }
}

/// Files written by one successful run.
#[derive(Debug)]
pub struct RunOutput {
    pub manifest: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

/// Validates the config, runs one command and writes its manifest, also on failure.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<RunOutput, RunError> {
    config.validate()?;
    let mut set = ArtifactSet::create(config, command.name())?;
    let outcome = match command {
        Command::WaveletVerify => wavelet_verify(config, &mut set),
        Command::GenTiles => gen_tiles(config, &mut set),
        Command::Decompose => decompose(config, &mut set),
        Command::TileType => tile_type(config, &mut set),
        Command::CarlesonPairing => carleson_pairing(config, &mut set),
        Command::Converge => converge(config, &mut set),
        Command::MajorSubset => major_subset(config, &mut set),
        Command::Report => report(config, &mut set),
    };
    if let Err(e) = &outcome {
        set.note(e.to_string());
    }
    let manifest = set.finish()?;
    outcome?;
    let artifacts = set.artifacts().iter().map(|a| set.dir().join(&a.file)).collect();
    Ok(RunOutput { manifest, artifacts })
}

#[derive(Serialize)]
struct FloorRow {
    check: &'static str,
    value: f64,
    tolerance: f64,
    pass: bool,
}

fn floor(check: &'static str, value: f64, tolerance: f64) -> FloorRow {
    FloorRow { check, value, tolerance, pass: value < tolerance }
}

/// Modulated Gaussian `e^{-π(x/s)²} e^{2πiξ₀x}`.
fn gaussian_wave(window: Window, xi0: f64, s: f64) -> SampledFunction {
    SampledFunction::scalar_from_fn(window, |x| Complex64::from_polar((-PI * (x / s).powi(2)).exp(), 2.0 * PI * xi0 * x))
}

fn wavelet_verify(config: &ExperimentConfig, set: &mut ArtifactSet) -> Result<(), RunError> {
    let v = &config.verify_sampling;
    let mother = Arc::new(MotherWavelet::build(v.samples, v.window)?);

    let samples = 10_000;
    let periodization_err = (0..samples)
        .map(|i| {
            let xi = (2.0 * i as f64 / samples as f64 - 1.0) / SPACING;
            (periodization(xi) - 1.0).abs()
        })
        .fold(0.0, f64::max);

    let overlaps: Vec<(i64, f64)> = (1..=10).map(|n| (n, mother.translate_overlap(SPACING * n as f64).norm())).collect();
    set.write_csv("orthogonality", |w| {
        writeln!(w, "n,overlap")?;
        for (n, o) in &overlaps {
            writeln!(w, "{n},{o:e}")?;
        }
        Ok(())
    })?;

    let bank = PacketBank::new(Arc::clone(&mother), config.grid);
    let tiles = config.universe.all_tiles(&config.grid);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.start);
    let mut support = Vec::with_capacity(100);
    while support.len() < 100 {
        let p = tiles[rng.gen_range(0..tiles.len())];
        let packet = match bank.packet(&p) {
            Ok(packet) => packet,
            Err(WaveletError::OutsideWindow(_) | WaveletError::AboveNyquist(_) | WaveletError::ScaleTooLarge(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let down = p.freq.half(Half::Down);
        support.push((TileRecord::from(&p), packet.spectral_mass_outside(config.grid.left(&down), config.grid.right(&down))));
    }
    set.write_csv("support", |w| {
        writeln!(w, "kI,nI,kW,nW,mass_outside")?;
        for (t, m) in &support {
            writeln!(w, "{},{},{},{},{m:e}", t.k_time, t.n_time, t.k_freq, t.n_freq)?;
        }
        Ok(())
    })?;

    let wide = Window::new(16.0, 1024).expect("valid window");
    let f = gaussian_wave(wide, 3.0, 2.0);
    let projection_err = partial_sum(&f, 0.0, 6.0)?.sub(&f).map_err(OperatorError::from)?.sup_norm();
    let narrow = Window::new(16.0, 512).expect("valid window");
    let g = gaussian_wave(narrow, 1.0, 2.0);
    let kernel_err = partial_sum(&g, -2.0, 4.0)?.sub(&partial_sum_by_kernel(&g, -2.0, 4.0)?).map_err(OperatorError::from)?.sup_norm();

    let rows = vec![
        floor("periodization", periodization_err, PERIODIZATION_TOL),
        floor("orthogonality", overlaps.iter().map(|o| o.1).fold(0.0, f64::max), ORTHOGONALITY_TOL),
        floor("spectral_support", support.iter().map(|s| s.1).fold(0.0, f64::max), SUPPORT_TOL),
        floor("projection", projection_err, PROJECTION_TOL),
        floor("kernel_agreement", kernel_err, KERNEL_TOL),
        floor("imaginary_residue", mother.imaginary_residue(), PERIODIZATION_TOL),
    ];
    set.write_csv("floors", |w| {
        writeln!(w, "check,value,tolerance,pass")?;
        for r in &rows {
            writeln!(w, "{},{:e},{:e},{}", r.check, r.value, r.tolerance, r.pass)?;
        }
        Ok(())
    })?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.check).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(RunError::Floor(failed.join(", ")))
    }
}

#[derive(Serialize)]
struct TreeRecord {
    top: TileRecord,
    tiles: Vec<TileRecord>,
}

#[derive(Serialize)]
struct EnsembleRecord {
    seed: u64,
    size: usize,
    drawn: usize,
    evicted: usize,
    emptied: usize,
    trees: Vec<TreeRecord>,
}

fn gen_tiles(config: &ExperimentConfig, set: &mut ArtifactSet) -> Result<(), RunError> {
    let bank = config.bank()?;
    let sc = config.scenario(bank, config.kind);
    let mut records = Vec::new();
    for &d in &config.sizes {
        for seed in config.seed_list() {
            let e = random_disjprop_collection(&sc.spec(seed, d), &config.grid)?;
            phaseplane::geometry::check_disjointness_property(&e.trees)
                .map_err(|v| RunError::Floor(format!("disjointness property fails for seed {seed}: {v:?}")))?;
            records.push(EnsembleRecord {
                seed,
                size: sc.size(d),
                drawn: e.drawn,
                evicted: e.evicted,
                emptied: e.emptied,
                trees: e
                    .trees
                    .iter()
                    .map(|t| TreeRecord { top: t.top().into(), tiles: t.tiles().iter().map(TileRecord::from).collect() })
                    .collect(),
            });
        }
    }
    set.write_csv("tiles", |w| {
        writeln!(w, "seed,size,tree,kI,nI,kW,nW")?;
        for r in &records {
            for (i, t) in r.trees.iter().enumerate() {
                for p in &t.tiles {
                    writeln!(w, "{},{},{},{},{},{},{}", r.seed, r.size, i, p.k_time, p.n_time, p.k_freq, p.n_freq)?;
                }
            }
        }
        Ok(())
    })?;
    set.write_json("ensembles", &records)?;

    // The first ensemble as a plain collection, readable by `decompose`.
    let first = random_disjprop_collection(&sc.spec(config.seeds.start, config.sizes[0]), &config.grid)?;
    let u = sc.universe_at(config.sizes[0]);
    let collection = TileCollection::new(config.grid, u, first.tiles()).map_err(LabError::from)?;
    set.write_json("collection", &CollectionFile::from(&collection))?;
    Ok(())
}

fn load_collection(config: &ExperimentConfig) -> Result<Option<TileCollection>, RunError> {
    let Some(path) = &config.decompose.tiles else { return Ok(None) };
    let field = "decompose.tiles";
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { field, message: format!("{}: {e}", path.display()) })?;
    let file: CollectionFile =
        serde_json::from_str(&text).map_err(|e| ConfigError { field, message: format!("{}: {e}", path.display()) })?;
    if file.grid != config.grid {
        return Err(ConfigError { field, message: "tile file grid differs from the config grid".into() }.into());
    }
    let collection = TileCollection::try_from(file).map_err(|e: GeometryError| ConfigError { field, message: e.to_string() })?;
    Ok(Some(collection))
}

fn decompose(config: &ExperimentConfig, set: &mut ArtifactSet) -> Result<(), RunError> {
    let bank = config.bank()?;
    let sc = config.scenario(Arc::clone(&bank), config.kind);
    let d = &config.decompose;
    let inst = sc.decomposition_instance(config.seeds.start, 0, d.count, d.fractions)?;
    let (tiles, dctx, ectx) = match load_collection(config)? {
        None => (inst.tiles, inst.dctx, inst.ectx),
        Some(c) => {
            let u = *c.universe();
            let dctx = DensityContext::new(config.grid, u, sc.window(), inst.dctx.set().clone(), inst.dctx.choice().clone())?;
            let ectx = EnergyContext::new(inst.ectx.function().clone(), config.q, bank, u)?;
            (c.tiles().to_vec(), dctx, ectx)
        }
    };
    let dec = full_decomposition(&tiles, &dctx, &ectx, config.alpha)?;
    set.write_json("decomposition", &dec.to_file())?;
    set.write_csv("trees", |w| dec.write_csv(w))?;
    if !dec.partitions(&tiles) {
        return Err(RunError::Floor("decomposition does not partition the tiles".into()));
    }
    if !dec.bounds_hold() {
        return Err(RunError::Floor("a tree exceeds its level bounds".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct ResidualStats {
    size: usize,
    max: f64,
    within_tolerance: bool,
}

#[derive(Serialize)]
struct RatioFile<'a> {
    kind: ValueKind,
    summaries: Vec<RatioSummary>,
    clip_residuals: &'a [ResidualStats],
}

fn clip_residuals(config: &ExperimentConfig, sc: &phaseplane::lab::Scenario) -> Result<Vec<ResidualStats>, RunError> {
    let mut out = Vec::new();
    for &d in &config.sizes {
        let mut max = 0.0f64;
        for seed in config.seed_list() {
            max = max.max(sc.function(seed, d, 1)?.2);
        }
        out.push(ResidualStats { size: sc.size(d), max, within_tolerance: max < CLIP_RESIDUAL_TOL });
    }
    Ok(out)
}

fn write_ratios(set: &mut ArtifactSet, kind: ValueKind, reports: &[RatioReport], residuals: &[ResidualStats]) -> Result<(), RunError> {
    set.write_csv("ratios", |w| write_reports_csv(reports, w))?;
    let summaries = reports.iter().map(RatioReport::summary).collect();
    set.write_json("summary", &RatioFile { kind, summaries, clip_residuals: residuals })?;
    Ok(())
}

fn is_hilbertian(kind: ValueKind) -> bool {
    matches!(kind, ValueKind::Scalar | ValueKind::Hilbert { .. }) || matches!(kind, ValueKind::Schatten { p, .. } if p == 2.0)
}

fn tile_type(config: &ExperimentConfig, set: &mut ArtifactSet) -> Result<(), RunError> {
    let sc = config.scenario(config.bank()?, config.kind);
    let seeds = config.seed_list();
    let mut reports = Vec::new();
    if is_hilbertian(config.kind) {
        reports.extend(sc.hilbert_chain(&seeds, &config.sizes)?);
    } else {
        set.note("Hilbert chain skipped: value kind is not a Hilbert space");
    }
    reports.extend(sc.fourier_tile_type(&seeds, &config.sizes, &config.alphas)?);
    reports.extend(sc.improved_energy(&seeds, &config.sizes, &config.lambdas)?);
    reports.extend(sc.signed_trees(&seeds, &config.sizes)?);
    let residuals = clip_residuals(config, &sc)?;
    write_ratios(set, config.kind, &reports, &residuals)
}

fn write_major_rows(set: &mut ArtifactSet, rows: &[phaseplane::lab::MajorSubsetRow]) -> Result<(), RunError> {
    set.write_csv("major-subset", |w| {
        writeln!(w, "seed,size,e_measure,e_tilde_measure,k,doublings,holds")?;
        for r in rows {
            writeln!(w, "{},{},{:e},{:e},{:e},{},{}", r.seed, r.size, r.e_measure, r.e_tilde_measure, r.k, r.doublings, r.holds())?;
        }
        Ok(())
    })?;
    Ok(())
}

fn carleson_pairing(config: &ExperimentConfig, set: &mut ArtifactSet) -> Result<(), RunError> {
    let sc = config.scenario(config.bank()?, config.kind);
    let seeds = config.seed_list();
    let p = &config.pairing;
    let mut reports = sc.restricted_weak_type(&seeds, &config.sizes, &config.p_exponents, p.restricted)?;
    let (two, rows) = sc.two_case(&seeds, &config.sizes, &config.p_exponents, p.two_case, p.major_k)?;
    reports.extend(two);
    write_ratios(set, config.kind, &reports, &[])?;
    write_major_rows(set, &rows)
}

#[derive(Serialize)]
struct MajorSummary {
    k_configured: f64,
    k_max_used: f64,
    instances: usize,
    holds: usize,
}

fn major_subset(config: &ExperimentConfig, set: &mut ArtifactSet) -> Result<(), RunError> {
    let sc = config.scenario(config.bank()?, config.kind);
    let p = &config.pairing;
    let rows = sc.major_subsets(&config.seed_list(), &config.sizes, p.two_case, p.major_k)?;
    write_major_rows(set, &rows)?;
    let summary = MajorSummary {
        k_configured: p.major_k,
        k_max_used: rows.iter().map(|r| r.k).fold(p.major_k, f64::max),
        instances: rows.len(),
        holds: rows.iter().filter(|r| r.holds()).count(),
    };
    if summary.k_max_used > p.major_k {
        set.note(format!("K doubled up to {} on some instances", summary.k_max_used));
    }
    set.write_json("summary", &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct ConvergenceSummary {
    p: f64,
    errors: Vec<f64>,
    /// Each error at most 10% above the previous one.
    nonincreasing: bool,
    final_error: f64,
}

fn converge(config: &ExperimentConfig, set: &mut ArtifactSet) -> Result<(), RunError> {
    let c = &config.converge;
    let window = operators::torus(c.samples).map_err(OperatorError::from)?;
    let mut summaries = Vec::new();
    for &p in &c.schatten_p {
        let f = smooth_matrix_function(&window, p);
        let errors = convergence_errors(&f, &c.degrees)?;
        summaries.push(ConvergenceSummary {
            p,
            nonincreasing: errors.windows(2).all(|w| w[1] <= 1.1 * w[0]),
            final_error: *errors.last().expect("degrees are nonempty"),
            errors,
        });
    }
    set.write_csv("errors", |w| {
        writeln!(w, "p,n,error")?;
        for s in &summaries {
            for (n, e) in c.degrees.iter().zip(&s.errors) {
                writeln!(w, "{},{n},{e:e}", s.p)?;
            }
        }
        Ok(())
    })?;
    set.write_json("summary", &summaries)?;
    Ok(())
}

#[derive(Serialize)]
struct ReportRow {
    source: String,
    summary: RatioSummary,
}

/// Re-summarizes every ratio table under the current config hash.
fn report(config: &ExperimentConfig, set: &mut ArtifactSet) -> Result<(), RunError> {
    let suffix = format!("-ratios-{}.csv", set.hash());
    let mut files: Vec<_> = std::fs::read_dir(set.dir())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(&suffix))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for file in &files {
        let mut reader = csv::Reader::from_path(config.out.join(file)).map_err(|e| artifact(file, e))?;
        let rows: Vec<RatioRow> = reader.deserialize().collect::<Result<_, _>>().map_err(|e| artifact(file, e))?;
        let source = file.trim_end_matches(&suffix).to_string();
        out.extend(reports_from_rows(rows).iter().map(|r| ReportRow { source: source.clone(), summary: r.summary() }));
    }
    set.write_csv("table", |w| {
        writeln!(w, "source,experiment,size,count,max,p95,drift,stable")?;
        for r in &out {
            for (i, s) in r.summary.sizes.iter().enumerate() {
                let drift = if i == 0 { String::new() } else { format!("{:e}", r.summary.drift[i - 1]) };
                writeln!(w, "{},{},{},{},{:e},{:e},{drift},{}", r.source, r.summary.experiment, s.size, s.count, s.max, s.p95, r.summary.stable)?;
            }
        }
        Ok(())
    })?;
    set.write_json("summary", &out)?;
    if files.is_empty() {
        set.note("no ratio tables found for this config hash");
    }
    Ok(())
}

fn artifact(file: &str, e: csv::Error) -> RunError {
    RunError::Artifact { file: file.to_string(), message: e.to_string() }
}
