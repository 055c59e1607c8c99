//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use num_complex::Complex64;
use phaseplane::decomposition::{
    density_split, density_threshold, energy_split, energy_threshold, full_decomposition, DensityContext,
    EnergyContext,
};
use phaseplane::geometry::{
    check_disjointness_property, find_down_half_overlap, split_into_up_trees, tile_le_u, Half, Tree, TreeKind,
};
use phaseplane::lab::{
    convergence_errors, random_disjprop_collection, smooth_matrix_function, DecompositionInstance, RatioReport,
    Scenario, STABILITY_DRIFT,
};
use phaseplane::operators::{self, partial_sum, partial_sum_by_kernel};
use phaseplane::sampled::{SampledFunction, Window};
use phaseplane::values::ValueKind;
use phaseplane::wavelet::{periodization, MotherWavelet, PacketBank, SPACING};
use phaseplane_cli::config::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

const PERIODIZATION_TOL: f64 = 1e-9;
const PERIODIZATION_POINTS: usize = 10_000;
const PERIODIZATION_BUDGET: Duration = Duration::from_secs(5);
const ORTHOGONALITY_TOL: f64 = 1e-8;
const SUPPORT_TOL: f64 = 1e-10;
const SUPPORT_TILES: usize = 100;
const PROJECTION_TOL: f64 = 1e-8;
const KERNEL_TOL: f64 = 1e-6;
const CONVERGENCE_STEP: f64 = 1.1;
const CONVERGENCE_FINAL_TOL: f64 = 1e-3;
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(30);
const ENSEMBLES: u64 = 1000;
const SEEDS: u64 = 100;
const HILBERT_BUDGET: Duration = Duration::from_secs(300);
const SCHATTEN_MATCH_TOL: f64 = 1e-8;
const SCHATTEN_KINDS: [f64; 2] = [4.0 / 3.0, 4.0];
const DETERMINISM_SEEDS: u64 = 8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn config() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn scenario(config: &ExperimentConfig, kind: ValueKind) -> Scenario {
    config.scenario(config.bank().expect("lab bank"), kind)
}

fn seeds() -> Vec<u64> {
    (0..SEEDS).collect()
}

fn verify_mother(config: &ExperimentConfig) -> Arc<MotherWavelet> {
    let v = &config.verify_sampling;
    Arc::new(MotherWavelet::build(v.samples, v.window).expect("verify mother"))
}

fn gaussian_wave(window: Window, xi0: f64, s: f64) -> SampledFunction {
    SampledFunction::scalar_from_fn(window, |x| Complex64::from_polar((-PI * (x / s).powi(2)).exp(), 2.0 * PI * xi0 * x))
}

/// Drifts of every report, with the failing experiments named.
fn stability(reports: &[RatioReport]) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut unstable = Vec::new();
    for r in reports {
        let s = r.summary();
        worst = worst.max(s.max_drift);
        if !s.stable {
            unstable.push(format!("{} drift {:?}", r.experiment, s.drift.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>()));
        }
    }
    let detail = if unstable.is_empty() {
        format!("{} experiments, worst drift {worst:.3} < {STABILITY_DRIFT}", reports.len())
    } else {
        format!("unstable: {}", unstable.join("; "))
    };
    outcome(unstable.is_empty(), detail)
}

fn periodization_identity() -> Outcome {
    let start = Instant::now();
    let err = (0..PERIODIZATION_POINTS)
        .map(|i| {
            let xi = (2.0 * i as f64 / PERIODIZATION_POINTS as f64 - 1.0) / SPACING;
            (periodization(xi) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        err < PERIODIZATION_TOL && elapsed < PERIODIZATION_BUDGET,
        format!("max error {err:.2e} over {PERIODIZATION_POINTS} points in {:.3}s", elapsed.as_secs_f64()),
    )
}

fn packet_orthogonality(config: &ExperimentConfig) -> Outcome {
    let mother = verify_mother(config);
    let worst = (1..=10).map(|n| mother.translate_overlap(SPACING * n as f64).norm()).fold(0.0, f64::max);
    outcome(worst < ORTHOGONALITY_TOL, format!("max |overlap| {worst:.2e} for n = 1..10"))
}

fn spectral_support(config: &ExperimentConfig) -> Outcome {
    let bank = PacketBank::new(verify_mother(config), config.grid);
    let tiles = config.universe.all_tiles(&config.grid);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    while checked < SUPPORT_TILES {
        let p = tiles[rng.gen_range(0..tiles.len())];
        let Ok(packet) = bank.packet(&p) else {
            skipped += 1;
            continue;
        };
        let down = p.freq.half(Half::Down);
        worst = worst.max(packet.spectral_mass_outside(config.grid.left(&down), config.grid.right(&down)));
        checked += 1;
    }
    outcome(worst < SUPPORT_TOL, format!("max relative mass outside {worst:.2e} over {checked} tiles ({skipped} unrepresentable redrawn)"))
}

fn projection_identity() -> Outcome {
    let wide = Window::new(16.0, 1024).expect("window");
    let f = gaussian_wave(wide, 3.0, 2.0);
    let projection = partial_sum(&f, 0.0, 6.0).expect("partial sum").sub(&f).expect("same window").sup_norm();
    let narrow = Window::new(16.0, 512).expect("window");
    let g = gaussian_wave(narrow, 1.0, 2.0);
    let spectral = partial_sum(&g, -2.0, 4.0).expect("partial sum");
    let kernel = partial_sum_by_kernel(&g, -2.0, 4.0).expect("kernel partial sum");
    let agreement = spectral.sub(&kernel).expect("same window").sup_norm();
    outcome(
        projection < PROJECTION_TOL && agreement < KERNEL_TOL,
        format!("projection {projection:.2e}, spectral vs kernel {agreement:.2e}"),
    )
}

fn vector_convergence(config: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let c = &config.converge;
    let window = operators::torus(c.samples).expect("torus");
    let mut pass = true;
    let mut parts = Vec::new();
    for &p in &c.schatten_p {
        let errors = convergence_errors(&smooth_matrix_function(&window, p), &c.degrees).expect("errors");
        let monotone = errors.windows(2).all(|w| w[1] <= CONVERGENCE_STEP * w[0]);
        let last = *errors.last().expect("degrees");
        pass &= monotone && last < CONVERGENCE_FINAL_TOL;
        parts.push(format!("p={p:.3}: n=64 error {last:.2e}{}", if monotone { "" } else { " (not monotone)" }));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < CONVERGENCE_BUDGET;
    outcome(pass, format!("{} in {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn geometry_lemmas(config: &ExperimentConfig) -> Outcome {
    let sc = scenario(config, ValueKind::Scalar);
    let grid = config.grid;
    let (mut overlaps, mut split_failures, mut trees) = (0, 0, 0);
    for seed in 0..ENSEMBLES {
        let e = random_disjprop_collection(&sc.spec(seed, (seed % 3) as u32), &grid).expect("ensemble");
        if check_disjointness_property(&e.trees).is_err() || find_down_half_overlap(&e.tiles()).is_some() {
            overlaps += 1;
        }
        for t in &e.trees {
            trees += 1;
            let general = Tree::new(t.tiles().iter().copied(), *t.top(), TreeKind::General).expect("tree");
            let ok = match split_into_up_trees(&general) {
                Ok(parts) => {
                    let mut covered: Vec<_> = parts.iter().flat_map(|p| p.tiles().iter().copied()).collect();
                    covered.sort();
                    covered == t.tiles()
                        && parts.iter().all(|part| part.tiles().iter().all(|p| tile_le_u(p, part.top()).unwrap_or(false)))
                }
                Err(_) => false,
            };
            split_failures += usize::from(!ok);
        }
    }
    outcome(
        overlaps == 0 && split_failures == 0,
        format!("{ENSEMBLES} ensembles, {trees} trees: {overlaps} down-half overlaps, {split_failures} split failures"),
    )
}

fn fresh_contexts(inst: &DecompositionInstance, sc: &Scenario) -> (DensityContext, EnergyContext) {
    let d = &inst.dctx;
    let dctx = DensityContext::new(*d.grid(), *d.universe(), *d.window(), d.set().clone(), d.choice().clone()).expect("density");
    let ectx = EnergyContext::new(inst.ectx.function().clone(), sc.q, Arc::clone(&sc.bank), *inst.ectx.universe()).expect("energy");
    (dctx, ectx)
}

fn split_contracts(config: &ExperimentConfig) -> Outcome {
    let sc = scenario(config, config.kind);
    let dc = &config.decompose;
    let (mut halving, mut bounds, mut conservation, mut levels) = (0, 0, 0, 0);
    for seed in seeds() {
        let inst = sc.decomposition_instance(seed, (seed % 3) as u32, dc.count, dc.fractions).expect("instance");
        let (dctx, ectx) = fresh_contexts(&inst, &sc);

        let ds = density_split(&inst.tiles, &inst.dctx);
        let es = energy_split(&inst.tiles, &inst.ectx, sc.alpha).expect("energy split");
        let density_ok = ds.partitions(&inst.tiles)
            && ds.check_up_trees().is_ok()
            && dctx.density(&ds.rest) <= dctx.density(&inst.tiles) / 2.0;
        let energy_ok = es.partitions(&inst.tiles)
            && es.check_up_trees().is_ok()
            && ectx.energy(&es.rest).expect("energy") <= ectx.energy(&inst.tiles).expect("energy") / 2.0;
        halving += usize::from(!density_ok) + usize::from(!energy_ok);

        let dec = full_decomposition(&inst.tiles, &inst.dctx, &inst.ectx, sc.alpha).expect("decomposition");
        conservation += usize::from(!dec.partitions(&inst.tiles));
        if dctx.density(&dec.residual) != 0.0 || ectx.energy(&dec.residual).expect("energy") != 0.0 {
            conservation += 1;
        }
        let (e, f) = (dctx.measure(), ectx.support_measure());
        for (&n, trees) in &dec.levels {
            for t in trees {
                levels += 1;
                let ok = dctx.density(t.tiles()) <= density_threshold(e, n)
                    && ectx.energy(t.tiles()).expect("energy") <= energy_threshold(f, n, sc.q, sc.alpha);
                bounds += usize::from(!ok);
            }
        }
    }
    outcome(
        halving + bounds + conservation == 0,
        format!("{SEEDS} seeds, {levels} level trees: {halving} halving, {bounds} bound, {conservation} conservation failures"),
    )
}

fn hilbert_chain(config: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let reports = scenario(config, config.kind).hilbert_chain(&seeds(), &config.sizes).expect("hilbert chain");
    let elapsed = start.elapsed();
    let s = stability(&reports);
    outcome(s.pass && elapsed < HILBERT_BUDGET, format!("{} in {:.1}s", s.detail, elapsed.as_secs_f64()))
}

fn fourier_tile_type(config: &ExperimentConfig) -> Outcome {
    let kinds = [ValueKind::Scalar, ValueKind::Hilbert { dim: 4 }]
        .into_iter()
        .chain(SCHATTEN_KINDS.iter().map(|&p| ValueKind::Schatten { dim: 2, p }));
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in kinds {
        let reports = scenario(config, kind).fourier_tile_type(&seeds(), &config.sizes, &config.alphas).expect("fourier");
        let s = stability(&reports);
        pass &= s.pass;
        parts.push(format!("{kind:?}: {}", s.detail));
    }

    let hilbert = scenario(config, ValueKind::Hilbert { dim: 4 }).fourier_tile_type(&seeds(), &config.sizes, &config.alphas).expect("fourier");
    let schatten = scenario(config, ValueKind::Schatten { dim: 2, p: 2.0 })
        .fourier_tile_type(&seeds(), &config.sizes, &config.alphas)
        .expect("fourier");
    let mut mismatch: f64 = 0.0;
    for (a, b) in hilbert.iter().zip(&schatten) {
        for (x, y) in a.rows.iter().zip(&b.rows) {
            mismatch = mismatch.max((x.ratio - y.ratio).abs() / x.ratio.max(1.0));
        }
    }
    pass &= mismatch <= SCHATTEN_MATCH_TOL;
    parts.push(format!("Schatten 2 vs Hilbert 4 mismatch {mismatch:.1e}"));
    outcome(pass, parts.join(" | "))
}

fn improved_energy(config: &ExperimentConfig) -> Outcome {
    let reports = scenario(config, config.kind).improved_energy(&seeds(), &config.sizes, &config.lambdas).expect("energy");
    stability(&reports)
}

fn carleson_pairing(config: &ExperimentConfig) -> Outcome {
    let sc = scenario(config, config.kind);
    let p = &config.pairing;
    let restricted = sc.restricted_weak_type(&seeds(), &config.sizes, &config.p_exponents, p.restricted).expect("restricted");
    let (two, rows) = sc.two_case(&seeds(), &config.sizes, &config.p_exponents, p.two_case, p.major_k).expect("two case");
    let power = |r: &&RatioReport| r.experiment.contains("-p");
    let gated: Vec<RatioReport> = restricted.iter().chain(&two).filter(power).cloned().collect();
    let s = stability(&gated);
    let holds = rows.iter().filter(|r| r.holds()).count();
    let k_used = rows.iter().map(|r| r.k).fold(p.major_k, f64::max);
    outcome(
        s.pass && holds == rows.len(),
        format!("{} | major subset holds on {holds}/{} instances, K up to {k_used}", s.detail, rows.len()),
    )
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| e.expect("entry"))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with("manifest-"))
        .map(|n| {
            let bytes = std::fs::read(dir.join(&n)).expect("artifact");
            (n, bytes)
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    const COMMANDS: [&str; 8] =
        ["wavelet-verify", "gen-tiles", "decompose", "tile-type", "carleson-pairing", "major-subset", "converge", "report"];
    let work = tempfile::tempdir().expect("tempdir");
    let config_path = work.path().join("config.json");
    let config = format!("{{\"seeds\": {{\"count\": {DETERMINISM_SEEDS}}}}}");
    std::fs::write(&config_path, config).expect("config");
    let runs: Vec<_> = (0..2).map(|i| work.path().join(format!("run{i}"))).collect();
    let mut failures = Vec::new();
    for command in COMMANDS {
        for out in &runs {
            let status = Command::new(env!("CARGO_BIN_EXE_phaseplane"))
                .args([command, "--config"])
                .arg(&config_path)
                .args(["--seed", "7", "--out"])
                .arg(out)
                .env_remove("PHASEPLANE_SEED")
                .env_remove("PHASEPLANE_OUT")
                .output()
                .expect("spawn phaseplane");
            if !status.status.success() {
                failures.push(format!("{command} exited {:?}", status.status.code()));
            }
        }
    }
    let (a, b) = (artifacts(&runs[0]), artifacts(&runs[1]));
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    if names(&a) != names(&b) {
        failures.push("artifact names differ".into());
    }
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        if x != y {
            failures.push(format!("{name} differs"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{} commands twice, {} artifacts byte-identical", COMMANDS.len(), a.len())
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() {
    let config = config();
    let criteria: [(&str, &dyn Fn() -> Outcome); 12] = [
        ("wavelet spectral identity", &periodization_identity),
        ("packet orthogonality", &|| packet_orthogonality(&config)),
        ("spectral support", &|| spectral_support(&config)),
        ("projection identity", &projection_identity),
        ("vector-valued convergence", &|| vector_convergence(&config)),
        ("geometry lemmas", &|| geometry_lemmas(&config)),
        ("split contracts", &|| split_contracts(&config)),
        ("Hilbert chain stability", &|| hilbert_chain(&config)),
        ("Fourier tile-type stability", &|| fourier_tile_type(&config)),
        ("improved energy", &|| improved_energy(&config)),
        ("Carleson pairing", &|| carleson_pairing(&config)),
        ("determinism", &determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.1}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
