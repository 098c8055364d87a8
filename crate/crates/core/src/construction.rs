//! Generalized Ornstein parameters, stage heights, spacers and sampled
//! spacer realizations.
//!
//! A construction is fixed by the cutting parameters `p_k`, the spacer scales
//! `t_k`, the deterministic top offsets `x_{k,p_k}` and one offset law `xi_k`
//! per stage, supported on `X_k = {-t_k/2, ..., t_k/2}`. Each sampled point of
//! the product space assigns the offsets `x_{k,1}, ..., x_{k,p_k-1}`, from
//! which the spacer counts `a_i = t_k + x_{k,i} - x_{k,i-1}` follow.

use num_bigint::{BigInt, RandBigInt};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{big_to_f64, rational_to_f64};

/// Largest positive-mass support for which atoms are materialized.
pub const MAX_MATERIALIZED_SUPPORT: u64 = 1 << 20;

/// How the spacer scales `t_k` are obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpacerScale {
    Explicit(Vec<BigInt>),
    /// `t_k = h_{k-1}` rounded down to an even number, with `t_0 = 0`.
    PreviousHeight,
}

/// Offset law `xi_k` of one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OffsetLaw {
    /// Uniform on the whole of `X_k`.
    Uniform,
    PointMass(BigInt),
    /// Explicit probability table; repeated atoms are merged.
    Table(Vec<(BigInt, BigRational)>),
}

/// Validated parameters of a generalized Ornstein construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OrnsteinParams {
    cuts: Vec<u64>,
    spacing: Vec<BigInt>,
    top_spacers: Vec<BigInt>,
    laws: Vec<StageLaw>,
    heights: Vec<BigInt>,
    scale_rule: SpacerScale,
}

impl OrnsteinParams {
    /// Builds and validates a construction with `cuts.len()` stages.
    ///
    /// `top_spacers` may be empty, in which case every `x_{k,p_k}` is 0. A
    /// single law is broadcast to every stage.
    pub fn new(
        cuts: Vec<u64>,
        scale: SpacerScale,
        top_spacers: Vec<BigInt>,
        laws: Vec<OffsetLaw>,
    ) -> Result<Self> {
        let stages = cuts.len();
        if stages == 0 {
            return Err(Error::LengthMismatch("at least one stage is required".into()));
        }
        let top_spacers = if top_spacers.is_empty() {
            vec![BigInt::zero(); stages]
        } else {
            top_spacers
        };
        if top_spacers.len() != stages {
            return Err(Error::LengthMismatch(format!(
                "{} cuts but {} top spacers",
                stages,
                top_spacers.len()
            )));
        }
        let laws = match laws.len() {
            1 => vec![laws[0].clone(); stages],
            n if n == stages => laws,
            n => {
                return Err(Error::LengthMismatch(format!(
                    "{stages} cuts but {n} offset laws"
                )))
            }
        };
        if let SpacerScale::Explicit(t) = &scale {
            if t.len() != stages {
                return Err(Error::LengthMismatch(format!(
                    "{} cuts but {} spacer scales",
                    stages,
                    t.len()
                )));
            }
        }
        for (stage, &cut) in cuts.iter().enumerate() {
            if cut < 2 {
                return Err(Error::CutTooSmall { stage, cut });
            }
        }
        for (stage, x) in top_spacers.iter().enumerate() {
            if x.is_negative() {
                return Err(Error::NegativeTopSpacer { stage, value: x.clone() });
            }
        }

        let mut heights = Vec::with_capacity(stages + 1);
        let mut spacing = Vec::with_capacity(stages);
        heights.push(BigInt::one());
        for k in 0..stages {
            let t = match &scale {
                SpacerScale::Explicit(t) => t[k].clone(),
                SpacerScale::PreviousHeight if k == 0 => BigInt::zero(),
                SpacerScale::PreviousHeight => {
                    let prev = &heights[k - 1];
                    prev - (prev % 2u32)
                }
            };
            if t.is_negative() || t.is_odd() {
                return Err(Error::InvalidSpacing { stage: k, spacing: t });
            }
            let next = BigInt::from(cuts[k]) * (&heights[k] + &t) + &top_spacers[k];
            spacing.push(t);
            heights.push(next);
        }

        let laws = laws
            .into_iter()
            .enumerate()
            .map(|(k, law)| StageLaw::new(k, &spacing[k] / 2, law))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self { cuts, spacing, top_spacers, laws, heights, scale_rule: scale })
    }

    pub fn stages(&self) -> usize {
        self.cuts.len()
    }

    pub fn cut(&self, k: usize) -> u64 {
        self.cuts[k]
    }

    pub fn cuts(&self) -> &[u64] {
        &self.cuts
    }

    /// Resolved spacer scale `t_k`.
    pub fn spacing(&self, k: usize) -> &BigInt {
        &self.spacing[k]
    }

    pub fn top_spacer(&self, k: usize) -> &BigInt {
        &self.top_spacers[k]
    }

    pub fn law(&self, k: usize) -> &StageLaw {
        &self.laws[k]
    }

    pub fn scale_rule(&self) -> &SpacerScale {
        &self.scale_rule
    }

    /// Heights `h_0, ..., h_K` with `h_0 = 1` and
    /// `h_{k+1} = p_k (h_k + t_k) + x_{k,p_k}`.
    pub fn heights(&self) -> &[BigInt] {
        &self.heights
    }

    pub fn height(&self, k: usize) -> &BigInt {
        &self.heights[k]
    }

    fn check_stage(&self, k: usize) -> Result<()> {
        if k >= self.stages() {
            return Err(Error::StageOutOfRange { stage: k, stages: self.stages() });
        }
        Ok(())
    }
}

/// Offset law of a single stage together with its half-width `t_k / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLaw {
    half_width: BigInt,
    kind: LawKind,
}

#[derive(Debug, Clone, PartialEq)]
enum LawKind {
    Uniform,
    /// Sorted atoms with strictly positive mass.
    Atoms(Vec<(BigInt, BigRational)>),
}

impl StageLaw {
    fn new(stage: usize, half_width: BigInt, law: OffsetLaw) -> Result<Self> {
        let table = match law {
            OffsetLaw::Uniform => return Ok(Self { half_width, kind: LawKind::Uniform }),
            OffsetLaw::PointMass(x) => vec![(x, BigRational::one())],
            OffsetLaw::Table(t) => t,
        };
        let mut merged: std::collections::BTreeMap<BigInt, BigRational> = Default::default();
        for (atom, mass) in table {
            if mass.is_negative() {
                return Err(Error::NegativeMass { stage, atom, mass });
            }
            if atom.abs() > half_width {
                return Err(Error::SupportOutside { stage, atom, half_width });
            }
            *merged.entry(atom).or_insert_with(BigRational::zero) += mass;
        }
        let sum: BigRational = merged.values().cloned().sum();
        if !sum.is_one() {
            return Err(Error::NotNormalized { stage, sum });
        }
        let atoms = merged.into_iter().filter(|(_, m)| !m.is_zero()).collect();
        Ok(Self { half_width, kind: LawKind::Atoms(atoms) })
    }

    /// `t_k / 2`.
    pub fn half_width(&self) -> &BigInt {
        &self.half_width
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, LawKind::Uniform)
    }

    /// Number of atoms carrying positive mass.
    pub fn support_size(&self) -> BigInt {
        match &self.kind {
            LawKind::Uniform => 2 * &self.half_width + 1,
            LawKind::Atoms(a) => BigInt::from(a.len()),
        }
    }

    fn uniform_mass(&self) -> BigRational {
        BigRational::new(BigInt::one(), 2 * &self.half_width + 1)
    }

    /// `max_s xi(s)`.
    pub fn max_mass(&self) -> BigRational {
        match &self.kind {
            LawKind::Uniform => self.uniform_mass(),
            LawKind::Atoms(a) => a.iter().map(|(_, m)| m.clone()).max().unwrap_or_default(),
        }
    }

    /// `sum_s xi(s)^2`, which is also the zeroth coefficient of `phi`.
    pub fn sum_of_squares(&self) -> BigRational {
        match &self.kind {
            LawKind::Uniform => self.uniform_mass(),
            LawKind::Atoms(a) => a.iter().map(|(_, m)| m * m).sum(),
        }
    }

    /// Positive-mass atoms, materialized when the support is small enough.
    pub fn atoms(&self) -> Option<Vec<(BigInt, BigRational)>> {
        match &self.kind {
            LawKind::Atoms(a) => Some(a.clone()),
            LawKind::Uniform => {
                let size = self.support_size().to_u64()?;
                if size > MAX_MATERIALIZED_SUPPORT {
                    return None;
                }
                let mass = self.uniform_mass();
                let lo = -self.half_width.clone();
                Some((0..size).map(|i| (&lo + i, mass.clone())).collect())
            }
        }
    }

    /// Mass at `s`.
    pub fn mass(&self, s: &BigInt) -> BigRational {
        match &self.kind {
            LawKind::Uniform if s.abs() <= self.half_width => self.uniform_mass(),
            LawKind::Uniform => BigRational::zero(),
            LawKind::Atoms(a) => a
                .binary_search_by(|(x, _)| x.cmp(s))
                .map(|i| a[i].1.clone())
                .unwrap_or_default(),
        }
    }

    /// Exact coefficient `sum_s xi(s) xi(s + n)` of `phi = |sum_s xi(s) z^s|^2`.
    pub fn phi_coefficient(&self, n: &BigInt) -> BigRational {
        match &self.kind {
            LawKind::Uniform => {
                let width: BigInt = 2 * &self.half_width + 1;
                let overlap: BigInt = &width - n.abs();
                if overlap.is_positive() {
                    BigRational::new(overlap, &width * &width)
                } else {
                    BigRational::zero()
                }
            }
            LawKind::Atoms(a) => a
                .iter()
                .map(|(s, m)| m * self.mass(&(s + n)))
                .sum(),
        }
    }

    /// `sum_s xi(s) exp(2 pi i s j / n)`, the characteristic function at a
    /// grid point; exponent reduction modulo `n` is exact.
    pub fn characteristic(&self, n: usize, j: usize) -> num_complex::Complex64 {
        use num_complex::Complex64;
        let n_big = BigInt::from(n);
        match &self.kind {
            LawKind::Uniform => {
                if j.is_multiple_of(n) {
                    return Complex64::new(1.0, 0.0);
                }
                // Dirichlet kernel: sin(pi w j / n) / (w sin(pi j / n)), w = 2T + 1.
                let width: BigInt = 2 * &self.half_width + 1;
                let two_n = 2 * &n_big;
                let r = (&width * BigInt::from(j)).mod_floor(&two_n);
                let num = (std::f64::consts::PI * big_to_f64(&r) / n as f64).sin();
                let den = (std::f64::consts::PI * j as f64 / n as f64).sin();
                Complex64::new(num / (big_to_f64(&width) * den), 0.0)
            }
            LawKind::Atoms(a) => a
                .iter()
                .map(|(s, m)| {
                    let r = (s * j).mod_floor(&n_big);
                    let theta = 2.0 * std::f64::consts::PI * big_to_f64(&r) / n as f64;
                    Complex64::from_polar(rational_to_f64(m), theta)
                })
                .sum(),
        }
    }

    /// `phi(z_j) = |characteristic(j)|^2`.
    pub fn phi_at(&self, n: usize, j: usize) -> f64 {
        self.characteristic(n, j).norm_sqr()
    }

    /// Draws `count` independent offsets.
    pub fn draw(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<BigInt> {
        let sampler = self.sampler();
        (0..count).map(|_| sampler.draw(rng)).collect()
    }

    fn sampler(&self) -> Sampler<'_> {
        match &self.kind {
            LawKind::Uniform => Sampler::Uniform {
                lo: -self.half_width.clone(),
                hi: &self.half_width + 1,
            },
            LawKind::Atoms(a) if a.len() == 1 => Sampler::Constant(&a[0].0),
            LawKind::Atoms(a) => Sampler::Weighted {
                atoms: a,
                index: WeightedIndex::new(a.iter().map(|(_, m)| rational_to_f64(m)))
                    .expect("validated law has positive total mass"),
            },
        }
    }
}

enum Sampler<'a> {
    Uniform { lo: BigInt, hi: BigInt },
    Constant(&'a BigInt),
    Weighted { atoms: &'a [(BigInt, BigRational)], index: WeightedIndex<f64> },
}

impl Sampler<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> BigInt {
        match self {
            Sampler::Uniform { lo, hi } => rng.gen_bigint_range(lo, hi),
            Sampler::Constant(x) => (*x).clone(),
            Sampler::Weighted { atoms, index } => atoms[index.sample(rng)].0.clone(),
        }
    }
}

/// Report on the finite-measure condition and the bounded-cut criterion over a
/// finite horizon. Partial sums only: nothing here proves convergence.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub horizon: usize,
    /// `sum_{k<K} t_k/h_k + sum_{k<K} x_{k,p_k}/(p_k h_k)`.
    pub finiteness_partial_sum: f64,
    /// Same sum as an exact fraction, in decimal `num/den` form.
    pub finiteness_partial_sum_exact: String,
    pub finiteness_terms: Vec<f64>,
    pub finiteness_divergence_suspected: bool,
    /// `sum_{k<K} 1/p_k^2`.
    pub inverse_square_cut_sum: f64,
    pub inverse_square_cut_divergent: bool,
    pub messages: Vec<String>,
}

/// Heuristic divergence test for a series of non-negative terms: the tail half
/// of the horizon still carries at least a quarter of the head half's mass.
fn tail_heavy(terms: &[f64]) -> bool {
    if terms.len() < 2 {
        return false;
    }
    let mid = terms.len() / 2;
    let head: f64 = terms[..mid].iter().sum();
    let tail: f64 = terms[mid..].iter().sum();
    tail > 0.0 && tail >= 0.25 * head
}

/// Finite-horizon report on the measure-finiteness series and on the
/// divergence of `sum 1/p_k^2`.
pub fn validate_params(params: &OrnsteinParams, horizon: usize) -> ValidationReport {
    let horizon = horizon.min(params.stages());
    let mut exact = BigRational::zero();
    let mut terms = Vec::with_capacity(horizon);
    let mut inv_sq = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let h = params.height(k);
        let p = BigInt::from(params.cut(k));
        let term = BigRational::new(params.spacing(k).clone(), h.clone())
            + BigRational::new(params.top_spacer(k).clone(), &p * h);
        terms.push(rational_to_f64(&term));
        exact += term;
        inv_sq.push(1.0 / (params.cut(k) as f64).powi(2));
    }
    let finiteness_divergence_suspected = tail_heavy(&terms);
    let inverse_square_cut_divergent = tail_heavy(&inv_sq);

    let mut messages = Vec::new();
    if finiteness_divergence_suspected {
        messages.push(
            "finite-measure series: terms do not decay over the horizon, divergence suspected"
                .to_string(),
        );
    } else {
        messages.push("finite-measure series: partial sums consistent with convergence".to_string());
    }
    if inverse_square_cut_divergent {
        messages.push("Σ1/p² divergent: singular by bounded-cut criterion".to_string());
    } else {
        messages.push("Σ1/p² convergent over the horizon".to_string());
    }

    ValidationReport {
        horizon,
        finiteness_partial_sum: rational_to_f64(&exact),
        finiteness_partial_sum_exact: exact.to_string(),
        finiteness_terms: terms,
        finiteness_divergence_suspected,
        inverse_square_cut_sum: inv_sq.iter().sum(),
        inverse_square_cut_divergent,
        messages,
    }
}

/// One sampled point of the product space: offsets `x_{k,1..p_k-1}` per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacerRealization {
    pub seed: u64,
    pub replica: u64,
    offsets: Vec<Vec<BigInt>>,
}

impl SpacerRealization {
    /// Wraps explicit offsets after checking them against `params`.
    pub fn from_offsets(params: &OrnsteinParams, offsets: Vec<Vec<BigInt>>) -> Result<Self> {
        if offsets.len() != params.stages() {
            return Err(Error::LengthMismatch(format!(
                "{} offset rows for {} stages",
                offsets.len(),
                params.stages()
            )));
        }
        for (k, row) in offsets.iter().enumerate() {
            check_offsets(params, k, row)?;
        }
        Ok(Self { seed: 0, replica: 0, offsets })
    }

    /// `(x_{k,1}, ..., x_{k,p_k-1})`.
    pub fn stage_offsets(&self, k: usize) -> &[BigInt] {
        &self.offsets[k]
    }

    pub fn stages(&self) -> usize {
        self.offsets.len()
    }
}

fn check_offsets(params: &OrnsteinParams, k: usize, row: &[BigInt]) -> Result<()> {
    params.check_stage(k)?;
    let expected = params.cut(k) as usize - 1;
    if row.len() != expected {
        return Err(Error::LengthMismatch(format!(
            "stage {k}: {} offsets, expected {expected}",
            row.len()
        )));
    }
    let half_width = params.law(k).half_width();
    for (i, x) in row.iter().enumerate() {
        if x.abs() > *half_width {
            return Err(Error::OffsetOutOfRange {
                stage: k,
                index: i + 1,
                value: x.clone(),
                half_width: half_width.clone(),
            });
        }
    }
    Ok(())
}

/// RNG stream for one `(stage, replica)` pair of a master seed.
pub fn stage_rng(seed: u64, replica: u64, stage: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replica << 32) | stage as u64);
    rng
}

/// Draws `x_{k,1..p_k-1}` for one stage of one replica.
pub fn sample_stage_offsets(
    params: &OrnsteinParams,
    seed: u64,
    replica: u64,
    k: usize,
) -> Result<Vec<BigInt>> {
    params.check_stage(k)?;
    let mut rng = stage_rng(seed, replica, k);
    let sampler = params.law(k).sampler();
    Ok((1..params.cut(k)).map(|_| sampler.draw(&mut rng)).collect())
}

/// Samples replica 0 of the product measure.
pub fn sample_realization(params: &OrnsteinParams, seed: u64) -> SpacerRealization {
    sample_replica(params, seed, 0)
}

/// Samples one replica; every stage uses its own stream so the result does
/// not depend on evaluation order or worker count.
pub fn sample_replica(params: &OrnsteinParams, seed: u64, replica: u64) -> SpacerRealization {
    let offsets = (0..params.stages())
        .into_par_iter()
        .map(|k| sample_stage_offsets(params, seed, replica, k).expect("stage in range"))
        .collect();
    SpacerRealization { seed, replica, offsets }
}

/// Geometry of one stage of a realization.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGeometry {
    pub stage: usize,
    pub cut: u64,
    pub height: BigInt,
    pub spacing: BigInt,
    /// `x_{k,0} = 0, x_{k,1}, ..., x_{k,p_k}`.
    pub offsets: Vec<BigInt>,
    /// `a_1, ..., a_{p_k}`.
    pub spacers: Vec<BigInt>,
    /// `s_k(0) = 0, ..., s_k(p_k)`.
    pub partial_sums: Vec<BigInt>,
}

impl StageGeometry {
    /// Stage `k` geometry from the random offsets `x_{k,1..p_k-1}`.
    pub fn new(params: &OrnsteinParams, k: usize, random_offsets: &[BigInt]) -> Result<Self> {
        check_offsets(params, k, random_offsets)?;
        let t = params.spacing(k).clone();
        let mut offsets = Vec::with_capacity(random_offsets.len() + 2);
        offsets.push(BigInt::zero());
        offsets.extend_from_slice(random_offsets);
        offsets.push(params.top_spacer(k).clone());

        let spacers: Vec<BigInt> = offsets.windows(2).map(|w| &t + &w[1] - &w[0]).collect();
        let mut partial_sums = Vec::with_capacity(spacers.len() + 1);
        partial_sums.push(BigInt::zero());
        for a in &spacers {
            let next = partial_sums.last().unwrap() + a;
            partial_sums.push(next);
        }
        Ok(Self {
            stage: k,
            cut: params.cut(k),
            height: params.height(k).clone(),
            spacing: t,
            offsets,
            spacers,
            partial_sums,
        })
    }

    /// Height of the next stage, `p_k h_k + sum_i a_i`.
    pub fn next_height(&self) -> BigInt {
        BigInt::from(self.cut) * &self.height + self.partial_sums.last().unwrap()
    }

    /// Level at which copy `j` of the next base sits: `j h_k + s_k(j)`.
    pub fn copy_offset(&self, j: usize) -> BigInt {
        BigInt::from(j) * &self.height + &self.partial_sums[j]
    }
}

/// Stage geometry of a realization.
pub fn spacers_from_realization(
    params: &OrnsteinParams,
    omega: &SpacerRealization,
    k: usize,
) -> Result<StageGeometry> {
    params.check_stage(k)?;
    if k >= omega.stages() {
        return Err(Error::StageOutOfRange { stage: k, stages: omega.stages() });
    }
    StageGeometry::new(params, k, omega.stage_offsets(k))
}

/// Geometries of all stages of a realization.
pub fn all_geometries(params: &OrnsteinParams, omega: &SpacerRealization) -> Result<Vec<StageGeometry>> {
    (0..params.stages())
        .map(|k| spacers_from_realization(params, omega, k))
        .collect()
}

/// Stage geometry of a replica, sampled lazily from its own stream.
pub fn replica_geometry(
    params: &OrnsteinParams,
    seed: u64,
    replica: u64,
    k: usize,
) -> Result<StageGeometry> {
    let offsets = sample_stage_offsets(params, seed, replica, k)?;
    StageGeometry::new(params, k, &offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(big(n), big(d))
    }

    fn explicit(t: &[i64]) -> SpacerScale {
        SpacerScale::Explicit(t.iter().map(|&v| big(v)).collect())
    }

    fn small_params() -> OrnsteinParams {
        OrnsteinParams::new(
            vec![2, 3],
            explicit(&[2, 2]),
            vec![big(1), big(0)],
            vec![OffsetLaw::Uniform],
        )
        .unwrap()
    }

    #[test]
    fn heights_follow_recursion() {
        let params = small_params();
        assert_eq!(params.heights(), &[big(1), big(7), big(27)]);
    }

    #[test]
    fn dyadic_heights_are_powers_of_two() {
        let params = OrnsteinParams::new(
            vec![2; 10],
            explicit(&[0; 10]),
            vec![],
            vec![OffsetLaw::PointMass(big(0))],
        )
        .unwrap();
        for (k, h) in params.heights().iter().enumerate() {
            assert_eq!(*h, BigInt::from(1u64 << k));
        }
    }

    #[test]
    fn heights_do_not_overflow() {
        let params = OrnsteinParams::new(
            vec![1000; 30],
            SpacerScale::PreviousHeight,
            vec![],
            vec![OffsetLaw::Uniform],
        )
        .unwrap();
        assert!(params.height(30).bits() > 200);
        assert!(params.spacing(3).is_even());
    }

    #[test]
    fn odd_spacing_rejected() {
        let err = OrnsteinParams::new(vec![6], explicit(&[1]), vec![], vec![OffsetLaw::Uniform])
            .unwrap_err();
        assert!(matches!(err, Error::InvalidSpacing { stage: 0, .. }));
    }

    #[test]
    fn small_cut_rejected() {
        let err = OrnsteinParams::new(vec![2, 1], explicit(&[0, 0]), vec![], vec![OffsetLaw::Uniform])
            .unwrap_err();
        assert_eq!(err, Error::CutTooSmall { stage: 1, cut: 1 });
    }

    #[test]
    fn malformed_laws_rejected() {
        let unnormalized = OffsetLaw::Table(vec![(big(0), rat(1, 2)), (big(1), rat(1, 3))]);
        let err = OrnsteinParams::new(vec![3], explicit(&[2]), vec![], vec![unnormalized]).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { .. }));

        let outside = OffsetLaw::Table(vec![(big(2), rat(1, 1))]);
        let err = OrnsteinParams::new(vec![3], explicit(&[2]), vec![], vec![outside]).unwrap_err();
        assert!(matches!(err, Error::SupportOutside { .. }));
    }

    #[test]
    fn finiteness_partial_sum_small_case() {
        let report = validate_params(&small_params(), 2);
        // 2/1 + 2/7 + 1/(2*1) + 0
        assert_eq!(report.finiteness_partial_sum_exact, "39/14");
        assert!((report.finiteness_partial_sum - 2.785_714_285_714_286).abs() < 1e-12);
    }

    #[test]
    fn dyadic_validation_flags_bounded_cuts() {
        let params = OrnsteinParams::new(
            vec![2; 12],
            explicit(&[0; 12]),
            vec![],
            vec![OffsetLaw::PointMass(big(0))],
        )
        .unwrap();
        let report = validate_params(&params, 12);
        assert_eq!(report.finiteness_partial_sum, 0.0);
        assert!(!report.finiteness_divergence_suspected);
        assert!(report.inverse_square_cut_divergent);
        assert!(report
            .messages
            .iter()
            .any(|m| m.contains("singular by bounded-cut criterion")));
    }

    #[test]
    fn spacers_from_offsets() {
        let params = OrnsteinParams::new(vec![3], explicit(&[2]), vec![], vec![OffsetLaw::Uniform]).unwrap();
        let g = StageGeometry::new(&params, 0, &[big(1), big(-1)]).unwrap();
        assert_eq!(g.spacers, vec![big(3), big(0), big(3)]);
        assert_eq!(g.partial_sums.last().unwrap(), &big(6));

        let g = StageGeometry::new(&params, 0, &[big(0), big(0)]).unwrap();
        assert_eq!(g.spacers, vec![big(2); 3]);

        let g = StageGeometry::new(&params, 0, &[big(-1), big(1)]).unwrap();
        assert_eq!(g.spacers[0], big(1));
        assert_eq!(g.spacers[1], big(4));
    }

    #[test]
    fn offset_out_of_range_rejected() {
        let params = OrnsteinParams::new(vec![3], explicit(&[2]), vec![], vec![OffsetLaw::Uniform]).unwrap();
        let err = StageGeometry::new(&params, 0, &[big(2), big(0)]).unwrap_err();
        assert!(matches!(err, Error::OffsetOutOfRange { index: 1, .. }));
    }

    #[test]
    fn point_mass_sampling_is_constant() {
        let params = OrnsteinParams::new(
            vec![5, 5],
            explicit(&[4, 4]),
            vec![],
            vec![OffsetLaw::PointMass(big(0))],
        )
        .unwrap();
        for seed in 0..5 {
            let omega = sample_realization(&params, seed);
            assert!(omega.stage_offsets(1).iter().all(|x| x.is_zero()));
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let params = small_params();
        assert_eq!(sample_realization(&params, 42), sample_realization(&params, 42));
        let lazy = sample_stage_offsets(&params, 42, 0, 1).unwrap();
        assert_eq!(lazy, sample_realization(&params, 42).stage_offsets(1));
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let draws = 100_000u64;
        let params = OrnsteinParams::new(
            vec![draws + 1],
            explicit(&[2]),
            vec![],
            vec![OffsetLaw::Uniform],
        )
        .unwrap();
        let offsets = sample_stage_offsets(&params, 7, 0, 0).unwrap();
        let p = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for v in -1..=1 {
            let count = offsets.iter().filter(|x| **x == big(v)).count() as f64;
            assert!((count - draws as f64 * p).abs() < 3.0 * sigma, "value {v}: {count}");
        }
    }

    #[test]
    fn phi_coefficients_uniform_closed_form() {
        let params = small_params();
        let law = params.law(0);
        assert_eq!(law.phi_coefficient(&big(0)), rat(1, 3));
        assert_eq!(law.phi_coefficient(&big(1)), rat(2, 9));
        assert_eq!(law.phi_coefficient(&big(-2)), rat(1, 9));
        assert_eq!(law.phi_coefficient(&big(3)), rat(0, 1));
    }

    #[test]
    fn characteristic_matches_atoms() {
        let params = OrnsteinParams::new(vec![3], explicit(&[6]), vec![], vec![OffsetLaw::Uniform]).unwrap();
        let law = params.law(0);
        let table = StageLaw::new(0, big(3), OffsetLaw::Table(law.atoms().unwrap())).unwrap();
        for j in 0..16 {
            let a = law.characteristic(16, j);
            let b = table.characteristic(16, j);
            assert!((a - b).norm() < 1e-12, "j = {j}");
        }
    }
}
