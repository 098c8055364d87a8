//! Generalized Ornstein rank-one transformations and their Riesz-product
//! spectral densities.
//!
//! - [`construction`]: parameters, heights, spacers and sampled realizations.
//! - [`trigpoly`]: exact sparse trigonometric polynomials (`P_k`, `|P_k|^2`, `phi`).
//! - [`spectral`]: partial Riesz products on torus grids, exact coefficients.
//! - [`tower`]: exact cutting-and-stacking oracle for correlation sequences.
//! - [`singularity`]: local singularity functionals and the greedy subsequence.
//! - [`montecarlo`]: expectations over the product probability space.

pub mod construction;
pub mod error;
pub mod montecarlo;
pub mod numeric;
pub mod singularity;
pub mod spectral;
pub mod tower;
pub mod trigpoly;

pub use construction::{
    sample_realization, spacers_from_realization, validate_params, OffsetLaw, OrnsteinParams,
    SpacerRealization, SpacerScale, StageGeometry, StageLaw, ValidationReport,
};
pub use error::{Error, Result};
pub use spectral::{CorrelationSeq, DensityKind, GridDensity, GridEvaluator, RieszPartial};
pub use trigpoly::{build_pk, phi_of_distribution, section6_polys, PhiFunction, PkForm, SparseTrigPoly};
pub use tower::{build_tower, Interval, RecursionReport, Tower};
pub use montecarlo::{kb_masked_integral, kb_ratio, KbOptions, KbReport, KbStats};
pub use singularity::{
    greedy_select, lemma34_gap, phi_weak_limit, section6_bound, GreedyMode, GreedyOptions, GreedyTrace,
    MaskedFunctional, PhiLimit, Section6Options, Section6Report, SingularityCase, StopReason,
};
