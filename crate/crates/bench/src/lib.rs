//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reuse_core::gp::{GpModel, KernelParams};
use reuse_core::{ChannelOracle, OracleParams};

/// A GP over `[0, 1]^dim` holding `points` observations of a smooth function.
pub fn filled_gp(dim: usize, points: usize, seed: u64) -> GpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gp = GpModel::unit(dim, KernelParams::new(1.0, 0.4, 1e-4).expect("valid params"))
        .with_window(points.max(1))
        .with_reoptimize_every(0);
    for _ in 0..points {
        let x: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let y = x.iter().enumerate().map(|(k, v)| ((k + 1) as f64 * v).sin()).sum();
        gp.add_observation(&x, y).expect("finite observation");
    }
    gp
}

/// Oracle over the checked-in 10-AP office.
pub fn office_oracle() -> ChannelOracle {
    let topology = reuse_core::topology::load_topology(include_str!("../../core/data/t1_office.json"))
        .expect("checked-in topology parses");
    ChannelOracle::new(&topology, OracleParams::default())
}
