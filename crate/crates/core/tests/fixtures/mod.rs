//! Frozen scenes shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use unmix_core::mixmodels::{add_noise, dirichlet_abundances, random_endmembers, NoiseSpec};
use unmix_core::unroll::{init_params_from_model, TrainConfig, UnrollParams};
use unmix_core::{AbundanceMatrix, EndmemberMatrix, HyperCube};

/// Endmembers mixed towards their mean until `cond(M) ≥ 50`.
pub fn correlated_endmembers(r: usize, l: usize, seed: u64) -> (EndmemberMatrix, f64) {
    let base = random_endmembers(r, l, seed).unwrap();
    let mix = DMatrix::from_fn(r, r, |i, j| if i == j { 0.4 } else { 0.6 / (r - 1) as f64 });
    let m = base * mix;
    let sv = m.singular_values();
    let cond = sv.max() / sv.min();
    (EndmemberMatrix::reflectance(m).unwrap(), cond)
}

pub struct TrainingFixture {
    pub endmembers: EndmemberMatrix,
    pub condition_number: f64,
    pub abundances: AbundanceMatrix,
    pub cube: HyperCube,
    pub params0: UnrollParams,
    pub config: TrainConfig,
}

/// Ill-conditioned LMM scene at 30 dB with a plain-ADMM analytic init
/// (`μ = ρ = 0.1`, `λ = 0`, `η = 1`, `K = 10`).
pub fn training_fixture() -> TrainingFixture {
    let (r, l, n, seed) = (3, 50, 600, 21);
    let (m, cond) = correlated_endmembers(r, l, seed);
    let a = dirichlet_abundances(r, n, seed);
    let clean = HyperCube::from_columns(m.data() * a.data()).unwrap();
    let cube = add_noise(&clean, &NoiseSpec { snr_db: 30.0, seed }).unwrap();
    let params0 = init_params_from_model(&m, 0.1, 0.1, 0.0, 1.0, 10).unwrap();
    let config = TrainConfig {
        learning_rate: 3e-3,
        epochs: 200,
        batch_size: 32,
        seed,
        validation_fraction: 0.25,
    };
    TrainingFixture {
        endmembers: m,
        condition_number: cond,
        abundances: a,
        cube,
        params0,
        config,
    }
}
