#![allow(dead_code)]

use phaseplane::geometry::{DyadicGrid, Universe};
use phaseplane::lab::Scenario;
use phaseplane::values::ValueKind;
use phaseplane::wavelet::{MotherWavelet, PacketBank};
use std::sync::{Arc, OnceLock};

pub fn bank() -> Arc<PacketBank> {
    static BANK: OnceLock<Arc<PacketBank>> = OnceLock::new();
    BANK.get_or_init(|| {
        let mother = Arc::new(MotherWavelet::build(8192, 512.0).expect("mother wavelet"));
        Arc::new(PacketBank::new(mother, DyadicGrid::default()))
    })
    .clone()
}

pub fn universe() -> Universe {
    Universe { k_min: 0, k_max: 5, time_lo: -2, time_hi: 2, freq_lo: 0, freq_hi: 2 }
}

pub fn scenario(kind: ValueKind) -> Scenario {
    Scenario {
        bank: bank(),
        universe: universe(),
        kind,
        q: 2.0,
        alpha: 0.9,
        trees: 4,
        tiles_per_tree: 12,
        f_fraction: 0.5,
        f_pieces: 3,
        terms: 24,
    }
}
