mod common;

use phaseplane::decomposition::{
    density_split, density_threshold, energy_split, energy_threshold, full_decomposition, DensityContext,
    EnergyContext,
};
use phaseplane::geometry::minimal_top_interval;
use phaseplane::lab::{DecompositionInstance, Scenario};
use phaseplane::values::ValueKind;
use std::sync::Arc;

fn fresh(inst: &DecompositionInstance, sc: &Scenario) -> (DensityContext, EnergyContext) {
    let d = &inst.dctx;
    let dctx = DensityContext::new(*d.grid(), *d.universe(), *d.window(), d.set().clone(), d.choice().clone()).unwrap();
    let ectx = EnergyContext::new(inst.ectx.function().clone(), sc.q, Arc::clone(&sc.bank), *inst.ectx.universe()).unwrap();
    (dctx, ectx)
}

#[test]
fn splits_halve_on_recomputation() {
    let sc = common::scenario(ValueKind::Hilbert { dim: 2 });
    for seed in 0..20 {
        let inst = sc.decomposition_instance(seed, (seed % 3) as u32, 40, (0.4, 0.5)).unwrap();
        let (dctx, ectx) = fresh(&inst, &sc);

        let ds = density_split(&inst.tiles, &inst.dctx);
        assert!(ds.partitions(&inst.tiles));
        assert!(dctx.density(&ds.rest) <= dctx.density(&inst.tiles) / 2.0, "seed {seed}");
        ds.check_up_trees().unwrap();

        let es = energy_split(&inst.tiles, &inst.ectx, 0.9).unwrap();
        assert!(es.partitions(&inst.tiles));
        assert!(ectx.energy(&es.rest).unwrap() <= ectx.energy(&inst.tiles).unwrap() / 2.0, "seed {seed}");
        es.check_up_trees().unwrap();
    }
}

#[test]
fn level_bounds_hold_on_recomputation() {
    let sc = common::scenario(ValueKind::Scalar);
    for seed in 0..20 {
        let inst = sc.decomposition_instance(seed, (seed % 3) as u32, 40, (0.4, 0.5)).unwrap();
        let dec = full_decomposition(&inst.tiles, &inst.dctx, &inst.ectx, 0.9).unwrap();
        assert!(dec.partitions(&inst.tiles), "seed {seed}");
        let (dctx, ectx) = fresh(&inst, &sc);
        assert_eq!(dctx.density(&dec.residual), 0.0);
        assert_eq!(ectx.energy(&dec.residual).unwrap(), 0.0);
        let (e, f) = (dctx.measure(), ectx.support_measure());
        for (&n, trees) in &dec.levels {
            for t in trees {
                assert!(dctx.density(t.tiles()) <= density_threshold(e, n), "seed {seed} level {n}");
                assert!(ectx.energy(t.tiles()).unwrap() <= energy_threshold(f, n, sc.q, 0.9), "seed {seed} level {n}");
                assert!(minimal_top_interval(t).is_ok());
            }
        }
    }
}

#[test]
fn complete_tree_energy_against_every_subtree() {
    for kind in [ValueKind::Hilbert { dim: 2 }, ValueKind::Schatten { dim: 2, p: 4.0 }, ValueKind::Schatten { dim: 2, p: 4.0 / 3.0 }] {
        let sc = common::scenario(kind);
        let mut worst = 1.0f64;
        for seed in 0..20 {
            let inst = sc.decomposition_instance(seed, 0, 10, (0.4, 0.5)).unwrap();
            let complete = inst.ectx.energy(&inst.tiles).unwrap();
            let every = inst.ectx.energy_exhaustive(&inst.tiles).unwrap();
            assert!(every >= complete - 1e-12 * complete.max(1.0), "{kind:?} seed {seed}");
            if complete > 0.0 {
                worst = worst.max(every / complete);
            }
        }
        println!("{kind:?}: sup over subtrees / sup over complete trees <= {worst:.6}");
        assert!(worst.is_finite());
    }
}
