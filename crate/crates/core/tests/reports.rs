mod common;

use phaseplane::lab::RatioReport;
use phaseplane::values::ValueKind;

fn csv(reports: &[RatioReport]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in reports {
        r.write_csv(&mut out).unwrap();
    }
    out
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let sc = common::scenario(ValueKind::Hilbert { dim: 3 });
    let seeds: Vec<u64> = (0..6).collect();
    let a = sc.hilbert_chain(&seeds, &[0, 1]).unwrap();
    let b = sc.hilbert_chain(&seeds, &[0, 1]).unwrap();
    assert_eq!(csv(&a), csv(&b));
    let ja = serde_json::to_vec(&a.iter().map(RatioReport::summary).collect::<Vec<_>>()).unwrap();
    let jb = serde_json::to_vec(&b.iter().map(RatioReport::summary).collect::<Vec<_>>()).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn rows_are_ordered_by_size_then_seed() {
    let sc = common::scenario(ValueKind::Scalar);
    let seeds = [5, 1, 3];
    let r = &sc.fourier_tile_type(&seeds, &[1, 0], &[0.5]).unwrap()[0];
    let order: Vec<(usize, u64)> = r.rows.iter().map(|row| (row.size, row.seed)).collect();
    assert_eq!(order, vec![(8, 5), (8, 1), (8, 3), (4, 5), (4, 1), (4, 3)]);
}

#[test]
fn schatten_two_reproduces_hilbert_four_across_the_chain() {
    let h = common::scenario(ValueKind::Hilbert { dim: 4 });
    let s = common::scenario(ValueKind::Schatten { dim: 2, p: 2.0 });
    let seeds: Vec<u64> = (0..8).collect();
    let a = h.hilbert_chain(&seeds, &[0]).unwrap();
    let b = s.hilbert_chain(&seeds, &[0]).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.rows.iter().zip(&rb.rows) {
            assert!((x.ratio - y.ratio).abs() <= 1e-8 * x.ratio.max(1.0), "{} {} vs {}", ra.experiment, x.ratio, y.ratio);
        }
    }
}

#[test]
fn major_subsets_keep_half_of_e() {
    let sc = common::scenario(ValueKind::Scalar);
    let seeds: Vec<u64> = (0..30).collect();
    let rows = sc.major_subsets(&seeds, &[0, 1], (0.02, 0.7), 16.0).unwrap();
    assert_eq!(rows.len(), 60);
    assert!(rows.iter().all(|r| r.holds() && r.k >= 16.0));
}
