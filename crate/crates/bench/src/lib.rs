//! Fixtures shared by the benchmarks.

use riesz_core::construction::{all_geometries, sample_realization, StageGeometry};
use riesz_core::{OffsetLaw, OrnsteinParams, SpacerScale};

/// Uniform-law construction with `stages` stages of `cut` copies and spacing `2`.
pub fn fixture(stages: usize, cut: u64) -> OrnsteinParams {
    OrnsteinParams::new(
        vec![cut; stages],
        SpacerScale::Explicit(vec![2.into(); stages]),
        vec![],
        vec![OffsetLaw::Uniform],
    )
    .expect("fixture parameters are valid")
}

pub fn geometries(params: &OrnsteinParams, seed: u64) -> Vec<StageGeometry> {
    let omega = sample_realization(params, seed);
    all_geometries(params, &omega).expect("fixture realization is valid")
}
