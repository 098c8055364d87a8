//! Local singularity diagnostics: masked L1 functionals, the one-step gap
//! inequality, the weak limit of `phi_m`, greedy subsequence selection and
//! the degenerate-case bound.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::construction::{replica_geometry, stage_rng, OrnsteinParams, StageLaw};
use crate::error::{Error, Result};
use crate::numeric::{mean_and_stderr, pairwise_sum, rational_to_f64, residue, twiddle_table};
use crate::spectral::{GridDensity, GridEvaluator};
use crate::trigpoly::{build_pk, PhiFunction, PhiSource, PkForm, SparseTrigPoly};

/// Where a mask came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    FullTorus,
    FEpsilon { epsilon: f64 },
    Custom,
}

/// A set `F` on the `n`-point grid, used to restrict integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedFunctional {
    pub mask: Vec<bool>,
    pub kind: MaskKind,
}

impl MaskedFunctional {
    pub fn full(n: usize) -> Self {
        Self { mask: vec![true; n], kind: MaskKind::FullTorus }
    }

    pub fn custom(mask: Vec<bool>) -> Self {
        Self { mask, kind: MaskKind::Custom }
    }

    /// `{j : 1 - phi(z_j) >= epsilon}` from sampled values of `phi`.
    pub fn from_phi_values(phi: &[f64], epsilon: f64) -> Self {
        Self {
            mask: phi.iter().map(|v| 1.0 - v >= epsilon).collect(),
            kind: MaskKind::FEpsilon { epsilon },
        }
    }

    /// `F_epsilon` of `phi` on the `n`-point grid.
    pub fn f_epsilon(phi: &PhiFunction, epsilon: f64, n: usize) -> Self {
        Self::from_phi_values(&phi.eval_grid(n), epsilon)
    }

    pub fn grid_size(&self) -> usize {
        self.mask.len()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Lebesgue measure of `F` on the grid.
    pub fn measure(&self) -> f64 {
        self.count() as f64 / self.mask.len() as f64
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.mask.len() == other.mask.len() && self.mask.iter().zip(&other.mask).all(|(a, b)| !a || *b)
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.mask.len() != n {
            return Err(Error::GridMismatch(format!(
                "mask of {} points against a grid of {n}",
                self.mask.len()
            )));
        }
        Ok(())
    }

    /// `integral_F values d lambda` as a grid mean.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check(values.len())?;
        let kept: Vec<f64> = values
            .iter()
            .zip(&self.mask)
            .map(|(v, &m)| if m { *v } else { 0.0 })
            .collect();
        Ok(pairwise_sum(&kept) / values.len() as f64)
    }

    /// `integral_F Q d lambda`.
    pub fn value(&self, q: &GridDensity) -> Result<f64> {
        self.integrate(&q.values)
    }
}

/// Both sides of the one-step gap inequality.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GapReport {
    /// `integral_F Q |P|`.
    pub lhs: f64,
    /// `(integral_F Q + integral_F Q |P|^2) / 2 - (integral_F Q ||P|^2 - 1|)^2 / 8`.
    pub rhs: f64,
    pub slack: f64,
    pub q_mass: f64,
    pub q_p2_mass: f64,
    pub q_abs_dev: f64,
}

/// Evaluates `integral_F Q|P| <= (integral_F Q + integral_F Q|P|^2)/2 -
/// (integral_F Q||P|^2 - 1|)^2/8` on the grid.
///
/// The inequality needs `integral_F Q (1 + |P|^2) <= 2`, which holds for
/// `Q = prod |P_{n_i}|` over earlier stages when the grid resolves
/// `Q^2 |P|^2`.
pub fn lemma34_gap(q: &GridDensity, p: &SparseTrigPoly, mask: &MaskedFunctional) -> Result<GapReport> {
    let n = q.grid_size();
    mask.check(n)?;
    let modulus = GridEvaluator::new(n).modulus(p);
    let q_abs: Vec<f64> = q.values.iter().zip(&modulus).map(|(a, b)| a * b).collect();
    let q_p2: Vec<f64> = q.values.iter().zip(&modulus).map(|(a, b)| a * b * b).collect();
    let q_dev: Vec<f64> = q.values.iter().zip(&modulus).map(|(a, b)| a * (b * b - 1.0).abs()).collect();
    let lhs = mask.integrate(&q_abs)?;
    let q_mass = mask.integrate(&q.values)?;
    let q_p2_mass = mask.integrate(&q_p2)?;
    let q_abs_dev = mask.integrate(&q_dev)?;
    let rhs = 0.5 * (q_mass + q_p2_mass) - q_abs_dev * q_abs_dev / 8.0;
    Ok(GapReport { lhs, rhs, slack: rhs - lhs, q_mass, q_p2_mass, q_abs_dev })
}

/// Which side of the `liminf max_s xi_m(s) < 1` dichotomy a range falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularityCase {
    Generic,
    Degenerate,
}

/// `liminf max xi_m` at or above this value counts as degenerate.
pub const DEGENERATE_THRESHOLD: f64 = 1.0 - 1e-9;

/// History of one coefficient `phi_m^(n)` along the stage range.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CoefficientPath {
    pub n: i64,
    pub values: Vec<f64>,
    pub limit: f64,
    pub limit_exact: String,
    /// `max - min` over the second half of the range.
    pub oscillation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiLimit {
    #[serde(skip)]
    pub phi: PhiFunction,
    pub case: SingularityCase,
    pub stages: Range<usize>,
    pub window: u64,
    pub paths: Vec<CoefficientPath>,
    /// `min` of `max_s xi_m(s)` over the second half of the range.
    pub liminf_max_mass: f64,
    pub coefficient_sum: String,
    pub nonnegative: bool,
    pub grid_size: usize,
    pub epsilon: f64,
    /// Measure of `{1 - phi < epsilon}` on the grid.
    pub near_one_fraction: f64,
    /// Grid angles `j / n` where `1 - phi < 1e-9`, at most [`MAX_ROOTS`].
    pub roots: Vec<f64>,
}

pub const MAX_ROOTS: usize = 1024;

fn tail(range: &Range<usize>) -> Range<usize> {
    let len = range.end - range.start;
    (range.end - len.div_ceil(2))..range.end
}

/// Estimates the weak limit `phi` from the coefficient sequences `phi_m^(n)`,
/// `|n| <= window`, over `stages`. The limit is read at the last stage.
pub fn phi_weak_limit(
    params: &OrnsteinParams,
    stages: Range<usize>,
    window: u64,
    grid: usize,
    epsilon: f64,
) -> Result<PhiLimit> {
    if stages.end > params.stages() || stages.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "stage range {stages:?} must hold at least two of {} stages",
            params.stages()
        )));
    }
    let w = window as i64;
    let tail = tail(&stages);
    let last = stages.end - 1;

    let paths: Vec<CoefficientPath> = (-w..=w)
        .into_par_iter()
        .map(|n| {
            let nb = BigInt::from(n);
            let exact: Vec<BigRational> = stages.clone().map(|m| params.law(m).phi_coefficient(&nb)).collect();
            let values: Vec<f64> = exact.iter().map(rational_to_f64).collect();
            let tail_values = &values[tail.start - stages.start..];
            let hi = tail_values.iter().cloned().fold(f64::MIN, f64::max);
            let lo = tail_values.iter().cloned().fold(f64::MAX, f64::min);
            let limit_exact = exact.last().unwrap().clone();
            CoefficientPath {
                n,
                limit: rational_to_f64(&limit_exact),
                limit_exact: limit_exact.to_string(),
                values,
                oscillation: hi - lo,
            }
        })
        .collect();

    let law = params.law(last);
    let complete = BigInt::from(window) >= 2 * law.half_width();
    let phi = PhiFunction::from_coefficients(
        (-w..=w).map(|n| (BigInt::from(n), law.phi_coefficient(&BigInt::from(n)))),
        PhiSource::Limit,
        complete,
    );

    let liminf_max_mass = tail
        .clone()
        .map(|m| rational_to_f64(&params.law(m).max_mass()))
        .fold(f64::MAX, f64::min);
    let case = case_of(params, stages.clone());

    let values = phi.eval_grid(grid);
    let near = values.iter().filter(|&&v| 1.0 - v < epsilon).count();
    let roots = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| 1.0 - v < 1e-9)
        .map(|(j, _)| j as f64 / grid as f64)
        .take(MAX_ROOTS)
        .collect();

    Ok(PhiLimit {
        case,
        stages,
        window,
        paths,
        liminf_max_mass,
        coefficient_sum: phi.coeff_sum().to_string(),
        nonnegative: phi.is_nonnegative(),
        grid_size: grid,
        epsilon,
        near_one_fraction: near as f64 / grid as f64,
        roots,
        phi,
    })
}

/// How the greedy run integrates over the probability space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum GreedyMode {
    /// One realization, replica 0 of the seed.
    Fixed,
    /// Mean over replicas `0..replicas`.
    Averaged { replicas: usize },
}

impl GreedyMode {
    fn replicas(&self) -> usize {
        match self {
            GreedyMode::Fixed => 1,
            GreedyMode::Averaged { replicas } => *replicas,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GreedyOptions {
    pub epsilon: f64,
    /// Candidate stages scanned per step.
    pub budget: usize,
    pub grid: usize,
    pub threshold: f64,
    pub max_steps: usize,
    pub start_stage: usize,
    pub seed: u64,
    pub mode: GreedyMode,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            budget: 8,
            grid: 1 << 14,
            threshold: 1e-3,
            max_steps: 50,
            start_stage: 0,
            seed: 0,
            mode: GreedyMode::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Threshold,
    Exhausted,
    Stalled,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GreedyTrace {
    pub epsilon: f64,
    pub selected: Vec<usize>,
    /// `L_0 = lambda(F), L_1, ..., L_k`.
    pub values: Vec<f64>,
    pub stop_reason: StopReason,
    pub mask_measure: f64,
    pub grid_size: usize,
    pub replicas: usize,
    pub seed: u64,
}

impl GreedyTrace {
    pub fn is_non_increasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }

    /// First step `k >= 1` with `L_k < bound`.
    pub fn first_below(&self, bound: f64) -> Option<usize> {
        self.values.iter().skip(1).position(|&v| v < bound).map(|i| i + 1)
    }
}

struct Selection {
    selected: Vec<usize>,
    values: Vec<f64>,
    stop_reason: StopReason,
}

/// Candidate scoring used by the selection loop.
trait Candidates {
    /// Next value of the functional for each candidate stage.
    fn score(&mut self, candidates: &[usize]) -> Result<Vec<f64>>;
    /// Folds a chosen stage into the running product.
    fn commit(&mut self, m: usize) -> Result<()>;
}

/// Selection loop shared by every mode.
fn greedy_loop(
    l0: f64,
    stages: Range<usize>,
    budget: usize,
    threshold: f64,
    max_steps: usize,
    source: &mut dyn Candidates,
) -> Result<Selection> {
    let mut selected = Vec::new();
    let mut values = vec![l0];
    let mut next = stages.start;
    let stop_reason = loop {
        let current = *values.last().unwrap();
        if current < threshold {
            break StopReason::Threshold;
        }
        let candidates: Vec<usize> = (next..stages.end).take(budget).collect();
        if candidates.is_empty() || selected.len() >= max_steps {
            break StopReason::Exhausted;
        }
        let scores = source.score(&candidates)?;
        let mut best: Option<(usize, f64)> = None;
        for (&m, &v) in candidates.iter().zip(&scores) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((m, v));
            }
        }
        let (m, v) = best.unwrap();
        if v >= current {
            break StopReason::Stalled;
        }
        source.commit(m)?;
        selected.push(m);
        values.push(v);
        next = m + 1;
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "greedy trace increased");
    };
    Ok(Selection { selected, values, stop_reason })
}

/// Per-replica running products `Q_r` (with the mask folded in) and a cache
/// of candidate moduli `|P_m^(r)|` on the grid.
struct ReplicaProducts<'a> {
    params: &'a OrnsteinParams,
    eval: GridEvaluator,
    seed: u64,
    q: Vec<Vec<f64>>,
    cache: HashMap<usize, Arc<Vec<Vec<f32>>>>,
}

impl ReplicaProducts<'_> {
    fn moduli(&self, m: usize) -> Result<Vec<Vec<f32>>> {
        (0..self.q.len())
            .into_par_iter()
            .map(|r| {
                let g = replica_geometry(self.params, self.seed, r as u64, m)?;
                let modulus = self.eval.modulus(&build_pk(&g, PkForm::Ornstein));
                Ok(modulus.into_iter().map(|v| v as f32).collect())
            })
            .collect()
    }
}

impl Candidates for ReplicaProducts<'_> {
    fn score(&mut self, candidates: &[usize]) -> Result<Vec<f64>> {
        self.cache.retain(|m, _| *m >= candidates[0]);
        for &m in candidates {
            if !self.cache.contains_key(&m) {
                let table = Arc::new(self.moduli(m)?);
                self.cache.insert(m, table);
            }
        }
        let n = self.eval.size() as f64;
        let replicas = self.q.len() as f64;
        let q = &self.q;
        let tables: Vec<Arc<Vec<Vec<f32>>>> = candidates.iter().map(|m| self.cache[m].clone()).collect();
        Ok(tables
            .par_iter()
            .map(|table| {
                let per_replica: Vec<f64> = table
                    .iter()
                    .zip(q)
                    .map(|(modulus, qr)| {
                        let prod: Vec<f64> = qr.iter().zip(modulus).map(|(a, &b)| a * b as f64).collect();
                        pairwise_sum(&prod) / n
                    })
                    .collect();
                pairwise_sum(&per_replica) / replicas
            })
            .collect())
    }

    fn commit(&mut self, m: usize) -> Result<()> {
        let table = self.cache[&m].clone();
        self.q.par_iter_mut().zip(table.par_iter()).for_each(|(qr, modulus)| {
            qr.iter_mut().zip(modulus).for_each(|(a, &b)| *a *= b as f64);
        });
        Ok(())
    }
}

/// Greedy subsequence: at each step pick the stage `m > n_k` within the scan
/// budget that gives the smallest `integral_{F_eps} Q |P_m|` (averaged over
/// replicas in averaged mode), ties to the smallest `m`.
pub fn greedy_select(params: &OrnsteinParams, phi: &PhiFunction, opts: &GreedyOptions) -> Result<GreedyTrace> {
    if opts.budget == 0 || opts.grid == 0 {
        return Err(Error::InvalidArgument("budget and grid must be positive".into()));
    }
    let replicas = opts.mode.replicas();
    if replicas == 0 {
        return Err(Error::InvalidArgument("at least one replica is needed".into()));
    }
    let n = opts.grid;
    let mask = MaskedFunctional::f_epsilon(phi, opts.epsilon, n);
    if mask.count() == 0 {
        return Err(Error::EmptyMask { epsilon: opts.epsilon });
    }
    let indicator: Vec<f64> = mask.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let mut products = ReplicaProducts {
        params,
        eval: GridEvaluator::new(n),
        seed: opts.seed,
        q: vec![indicator; replicas],
        cache: HashMap::new(),
    };
    let l0 = mask.measure();
    let stages = opts.start_stage..params.stages();
    let sel = greedy_loop(l0, stages, opts.budget, opts.threshold, opts.max_steps, &mut products)?;
    Ok(GreedyTrace {
        epsilon: opts.epsilon,
        selected: sel.selected,
        values: sel.values,
        stop_reason: sel.stop_reason,
        mask_measure: l0,
        grid_size: n,
        replicas,
        seed: opts.seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Section6Options {
    /// Grid size; `None` picks one that resolves the lower-bound integrand.
    pub grid: Option<usize>,
    pub replicas: usize,
    pub seed: u64,
}

impl Default for Section6Options {
    fn default() -> Self {
        Self { grid: None, replicas: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Section6Report {
    pub p: u64,
    pub dilation: String,
    pub grid_size: usize,
    pub replicas: usize,
    /// `(integral |G_p(z^M)|^2)^{1/2} = sqrt(p - 1) / p`.
    pub g_term: f64,
    pub g_term_sq_exact: String,
    /// The same norm by quadrature.
    pub g_term_quadrature: f64,
    /// `integral |F_p(z^M) - (p-1)/p| phi dlambda`.
    pub f_term: f64,
    /// `sum xi^2 (p - 2) / p`.
    pub f_lower_bound: f64,
    pub f_lower_bound_exact: String,
    pub f_term_holds: bool,
    /// Whether `t < M`, which the lower bound relies on.
    pub spacing_below_dilation: bool,
    pub aliasing_risk: bool,
    /// Monte Carlo `E integral Q ||P|^2 - 1| dlambda`.
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub q_weighted_f_term: f64,
    pub q_weighted_g_term: f64,
    /// `q_weighted_f_term - 2 q_weighted_g_term`.
    pub lower_estimate: f64,
    /// Largest gap between `E(|P|^2) - 1` by direct expansion and
    /// `2 Re(G(z^M) E tau) + (F(z^M) - (p-1)/p) phi`.
    pub mean_identity_residual: f64,
}

/// Quadrature tolerance on the F-term lower bound.
pub const SECTION6_TOLERANCE: f64 = 1e-8;

/// Degenerate-case bound for one stage with `p` copies, dilation `M = h + t`
/// and offset law `law`. `q` defaults to `Q = 1`.
pub fn section6_bound(
    p: u64,
    dilation: &BigInt,
    law: &StageLaw,
    q: Option<&GridDensity>,
    opts: &Section6Options,
) -> Result<Section6Report> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("p = {p} must be at least 2")));
    }
    if opts.replicas == 0 {
        return Err(Error::InvalidArgument("at least one replica is needed".into()));
    }
    let t: BigInt = 2 * law.half_width();
    let resolve: BigInt = BigInt::from(p - 1) * dilation + &t;
    let n = match (opts.grid, q) {
        (Some(n), _) => n,
        (None, Some(q)) => q.grid_size(),
        (None, None) => {
            let want = crate::numeric::next_pow2(&(2 * &resolve + 1));
            (want as usize).clamp(1 << 10, crate::spectral::MAX_DEFAULT_GRID)
        }
    };
    let ones;
    let q = match q {
        Some(q) if q.grid_size() != n => {
            return Err(Error::GridMismatch(format!("Q on {} points, grid {n}", q.grid_size())))
        }
        Some(q) => &q.values,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };

    let twiddles = twiddle_table(n);
    let step = residue(dilation, n);
    let pf = p as f64;
    let c = (pf - 1.0) / pf;

    struct Point {
        f: f64,
        g: Complex64,
        chi: Complex64,
    }
    let points: Vec<Point> = (0..n)
        .into_par_iter()
        .map(|j| {
            let w_index = (step * j) % n;
            let mut sum = Complex64::zero();
            for k in 1..p as usize {
                sum += twiddles[(w_index * k) % n];
            }
            Point { f: sum.norm_sqr() / pf, g: sum / pf, chi: law.characteristic(n, j) }
        })
        .collect();

    let integrand: Vec<f64> = points.iter().map(|pt| (pt.f - c).abs() * pt.chi.norm_sqr()).collect();
    let f_term = pairwise_sum(&integrand) / n as f64;
    let q_f: Vec<f64> = integrand.iter().zip(q).map(|(a, b)| a * b).collect();
    let q_weighted_f_term = pairwise_sum(&q_f) / n as f64;
    let q_g: Vec<f64> = points.iter().zip(q).map(|(pt, qj)| qj * pt.g.norm() * pt.chi.norm()).collect();
    let q_weighted_g_term = pairwise_sum(&q_g) / n as f64;
    let g_sq: Vec<f64> = points.iter().map(|pt| pt.g.norm_sqr()).collect();
    let g_term_quadrature = (pairwise_sum(&g_sq) / n as f64).sqrt();

    let lower_exact = law.sum_of_squares() * BigRational::new(BigInt::from(p - 2), BigInt::from(p));
    let f_lower_bound = rational_to_f64(&lower_exact);

    // Direct expansion of E|P|^2 - 1 with tau_0 = 1 and independent tau_k.
    let identity: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(j, pt)| {
            let w_index = (step * j) % n;
            let mut total = Complex64::zero();
            for a in 0..p as usize {
                for b in 0..p as usize {
                    if a == b {
                        continue;
                    }
                    let mean_a = if a == 0 { Complex64::one() } else { pt.chi };
                    let mean_b = if b == 0 { Complex64::one() } else { pt.chi };
                    let d = (a as i64 - b as i64).rem_euclid(n as i64) as usize;
                    let phase = twiddles[(w_index * d) % n];
                    total += phase * mean_a * mean_b.conj();
                }
            }
            let direct = total.re / pf;
            let closed = 2.0 * (pt.g * pt.chi).re + (pt.f - c) * pt.chi.norm_sqr();
            (direct - closed).abs()
        })
        .collect();
    let mean_identity_residual = identity.iter().cloned().fold(0.0, f64::max);

    let samples: Vec<f64> = (0..opts.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stage_rng(opts.seed, r as u64, 0);
            let offsets = law.draw(&mut rng, p as usize - 1);
            let exps: Vec<usize> = std::iter::once(0)
                .chain(offsets.iter().enumerate().map(|(i, x)| {
                    residue(&(BigInt::from(i + 1) * dilation + x), n)
                }))
                .collect();
            let values: Vec<f64> = (0..n)
                .map(|j| {
                    let s: Complex64 = exps.iter().map(|&e| twiddles[(e * j) % n]).sum();
                    q[j] * (s.norm_sqr() / pf - 1.0).abs()
                })
                .collect();
            pairwise_sum(&values) / n as f64
        })
        .collect();
    let (lhs, lhs_stderr) = mean_and_stderr(&samples);

    Ok(Section6Report {
        p,
        dilation: dilation.to_string(),
        grid_size: n,
        replicas: opts.replicas,
        g_term: (pf - 1.0).sqrt() / pf,
        g_term_sq_exact: BigRational::new(BigInt::from(p - 1), BigInt::from(p * p)).to_string(),
        g_term_quadrature,
        f_term,
        f_lower_bound,
        f_lower_bound_exact: lower_exact.to_string(),
        f_term_holds: f_term >= f_lower_bound - SECTION6_TOLERANCE,
        spacing_below_dilation: t < *dilation,
        aliasing_risk: BigInt::from(n) <= resolve,
        lhs,
        lhs_stderr,
        q_weighted_f_term,
        q_weighted_g_term,
        lower_estimate: q_weighted_f_term - 2.0 * q_weighted_g_term,
        mean_identity_residual,
    })
}

/// `M = h_m + t_m` for stage `m`.
pub fn stage_dilation(params: &OrnsteinParams, m: usize) -> BigInt {
    params.height(m) + params.spacing(m)
}

/// `(p_m - 1)(p_m - 2) / p_m^2`.
pub fn kb_factor(p: u64) -> f64 {
    let p = p as f64;
    (p - 1.0) * (p - 2.0) / (p * p)
}

/// Case flag of a stage range, by the same tail-half proxy as
/// [`phi_weak_limit`].
pub fn case_of(params: &OrnsteinParams, range: Range<usize>) -> SingularityCase {
    let liminf = tail(&range)
        .map(|m| rational_to_f64(&params.law(m).max_mass()))
        .fold(f64::MAX, f64::min);
    if liminf >= DEGENERATE_THRESHOLD {
        SingularityCase::Degenerate
    } else {
        SingularityCase::Generic
    }
}

/// `phi_m` coefficient window large enough to be complete for stage `m`,
/// capped at `cap`.
pub fn complete_window(params: &OrnsteinParams, m: usize, cap: u64) -> u64 {
    let t: BigInt = 2 * params.law(m).half_width();
    t.to_u64().unwrap_or(u64::MAX).min(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{OffsetLaw, SpacerScale};
    use crate::spectral::DensityKind;
    use crate::trigpoly::{phi_of_distribution, real};

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    fn uniform_params(stages: usize, cut: u64, t: i64) -> OrnsteinParams {
        OrnsteinParams::new(
            vec![cut; stages],
            SpacerScale::Explicit(vec![big(t); stages]),
            vec![],
            vec![OffsetLaw::Uniform],
        )
        .unwrap()
    }

    fn point_mass_params(stages: usize, cut: u64, t: i64) -> OrnsteinParams {
        OrnsteinParams::new(
            vec![cut; stages],
            SpacerScale::Explicit(vec![big(t); stages]),
            vec![],
            vec![OffsetLaw::PointMass(big(0))],
        )
        .unwrap()
    }

    #[test]
    fn gap_closed_form() {
        let n = 1 << 14;
        let p = SparseTrigPoly::from_real_terms([(big(0), BigRational::one()), (big(1), BigRational::one())])
            .with_scale_sq(BigRational::new(big(1), big(2)));
        let q = GridDensity::constant(n, DensityKind::Root);
        let r = lemma34_gap(&q, &p, &MaskedFunctional::full(n)).unwrap();
        let pi = std::f64::consts::PI;
        assert!((r.lhs - 2.0 * 2f64.sqrt() / pi).abs() < 1e-6);
        assert!((r.rhs - (1.0 - (2.0 / pi).powi(2) / 8.0)).abs() < 1e-6);
        assert!(r.slack > 0.0);
    }

    #[test]
    fn gap_vanishes_for_unimodular_p() {
        let n = 256;
        let p = SparseTrigPoly::monomial(big(5), real(BigRational::one()));
        let q = GridDensity { values: (0..n).map(|j| 1.0 + (j % 3) as f64).collect(), kind: DensityKind::Root, stages: vec![] };
        let mask = MaskedFunctional::custom((0..n).map(|j| j % 2 == 0).collect());
        let r = lemma34_gap(&q, &p, &mask).unwrap();
        assert!((r.lhs - r.q_mass).abs() < 1e-12);
        assert!(r.slack.abs() < 1e-12);
    }

    #[test]
    fn gap_rejects_mismatched_mask() {
        let q = GridDensity::constant(8, DensityKind::Root);
        let r = lemma34_gap(&q, &SparseTrigPoly::one(), &MaskedFunctional::full(4));
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }

    #[test]
    fn f_epsilon_masks_are_nested() {
        let params = uniform_params(1, 2, 2);
        let phi = phi_of_distribution(params.law(0), 0).unwrap();
        let values = phi.eval_grid(512);
        let mut prev = MaskedFunctional::from_phi_values(&values, 0.0);
        for eps in [0.05, 0.1, 0.3, 0.6, 0.9] {
            let next = MaskedFunctional::from_phi_values(&values, eps);
            assert!(next.is_subset_of(&prev));
            prev = next;
        }
    }

    #[test]
    fn uniform_limit_is_generic() {
        let params = uniform_params(4, 2, 2);
        let lim = phi_weak_limit(&params, 0..4, 3, 1024, 1e-3).unwrap();
        assert_eq!(lim.case, SingularityCase::Generic);
        let third = BigRational::new(big(1), big(3));
        assert_eq!(lim.phi.coeff(0), third);
        assert_eq!(lim.phi.coeff(1), BigRational::new(big(2), big(9)));
        assert_eq!(lim.phi.coeff(2), BigRational::new(big(1), big(9)));
        assert_eq!(lim.phi.coeff(3), BigRational::zero());
        assert_eq!(lim.roots, vec![0.0]);
        assert!(lim.paths.iter().all(|p| p.oscillation == 0.0));
    }

    #[test]
    fn point_mass_limit_is_degenerate() {
        let params = point_mass_params(3, 2, 0);
        let lim = phi_weak_limit(&params, 0..3, 2, 64, 1e-3).unwrap();
        assert_eq!(lim.case, SingularityCase::Degenerate);
        assert_eq!(lim.coefficient_sum, "1");
        assert_eq!(lim.near_one_fraction, 1.0);
    }

    #[test]
    fn growing_spacing_loses_mass() {
        let params = OrnsteinParams::new(
            vec![2; 6],
            SpacerScale::Explicit((0..6).map(|k| big(2 << (2 * k))).collect()),
            vec![],
            vec![OffsetLaw::Uniform],
        )
        .unwrap();
        let lim = phi_weak_limit(&params, 0..6, 4, 256, 1e-3).unwrap();
        for path in &lim.paths {
            assert!(path.limit < 0.001);
            assert!(path.limit > 0.0);
        }
    }

    struct Scripted<F: Fn(usize) -> f64>(F);

    impl<F: Fn(usize) -> f64> Candidates for Scripted<F> {
        fn score(&mut self, candidates: &[usize]) -> Result<Vec<f64>> {
            Ok(candidates.iter().map(|&m| (self.0)(m)).collect())
        }

        fn commit(&mut self, _: usize) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn loop_stalls_on_flat_scores() {
        let mut flat = Scripted(|_| 1.0);
        let sel = greedy_loop(1.0, 0..5, 3, 1e-3, 50, &mut flat).unwrap();
        assert_eq!(sel.stop_reason, StopReason::Stalled);
        assert_eq!(sel.values, vec![1.0]);
    }

    #[test]
    fn loop_prefers_smallest_stage_on_ties() {
        let mut alternating = Scripted(|m| if m % 2 == 0 { 0.5 } else { 0.6 });
        let sel = greedy_loop(1.0, 0..4, 4, 0.3, 50, &mut alternating).unwrap();
        assert_eq!(sel.selected, vec![0]);
        assert_eq!(sel.stop_reason, StopReason::Stalled);
    }

    #[test]
    fn dyadic_greedy_decreases() {
        let params = point_mass_params(24, 2, 0);
        let phi = phi_of_distribution(uniform_params(1, 2, 2).law(0), 0).unwrap();
        let opts = GreedyOptions { max_steps: 20, grid: 1 << 12, budget: 2, ..Default::default() };
        let trace = greedy_select(&params, &phi, &opts).unwrap();
        assert!(trace.is_non_increasing());
        assert!(trace.values.len() > 2);
        assert!(trace.values.last().unwrap() < &trace.values[1]);
    }

    #[test]
    fn greedy_refuses_empty_mask() {
        let params = point_mass_params(3, 2, 0);
        let phi = PhiFunction::constant_one(PhiSource::Limit);
        let r = greedy_select(&params, &phi, &GreedyOptions::default());
        assert!(matches!(r, Err(Error::EmptyMask { .. })));
    }

    #[test]
    fn greedy_is_reproducible() {
        let params = uniform_params(8, 3, 2);
        let phi = phi_of_distribution(params.law(0), 0).unwrap();
        let opts = GreedyOptions {
            grid: 1 << 10,
            mode: GreedyMode::Averaged { replicas: 4 },
            seed: 9,
            ..Default::default()
        };
        let a = greedy_select(&params, &phi, &opts).unwrap();
        let b = greedy_select(&params, &phi, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn section6_point_mass_four() {
        let params = point_mass_params(1, 4, 2);
        let m = stage_dilation(&params, 0);
        let r = section6_bound(4, &m, params.law(0), None, &Section6Options::default()).unwrap();
        assert_eq!(r.f_lower_bound_exact, "1/2");
        assert!(r.f_term_holds, "{} < {}", r.f_term, r.f_lower_bound);
        assert!(r.mean_identity_residual < 1e-12);
    }

    #[test]
    fn section6_g_term() {
        let params = point_mass_params(1, 3, 0);
        let r = section6_bound(3, &big(1), params.law(0), None, &Section6Options::default()).unwrap();
        assert_eq!(r.g_term_sq_exact, "2/9");
        assert!((r.g_term - 2f64.sqrt() / 3.0).abs() < 1e-15);
        assert!((r.g_term_quadrature - r.g_term).abs() < 1e-12);
    }
}
