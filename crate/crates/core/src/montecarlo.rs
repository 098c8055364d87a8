//! Expectations over the product space of stage offsets: the lower-bound
//! ratio for `E||P_m(z)|^2 - 1|`, the variance identity for `tau_1` and the
//! masked-integral form.
//!
//! Small stages are enumerated exactly; larger ones are sampled, one replica
//! per stream, with pairwise reductions so results do not depend on the
//! number of worker threads.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::construction::{sample_stage_offsets, OrnsteinParams};
use crate::error::{Error, Result};
use crate::numeric::{mean_and_stderr, pairwise_sum, rational_to_f64, residue, twiddle_table};
use crate::singularity::{kb_factor, MaskedFunctional};
use crate::spectral::GridDensity;

/// Largest product space enumerated exactly.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;
/// Points with `1 - phi_m(z)` below this are excluded from the ratio.
pub const DEGENERATE_GAP: f64 = 1e-6;
/// Message attached to reports where every point is degenerate.
pub const DEGENERATE_MESSAGE: &str = "degenerate case, use section6_bound";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Enumeration,
    MonteCarlo,
}

#[derive(Debug, Clone, Serialize)]
pub struct KbOptions {
    pub grid: usize,
    pub replicas: usize,
    pub seed: u64,
    /// Enumerate when `|X_m|^{p_m - 1}` is at most this.
    pub enumeration_limit: u64,
}

impl Default for KbOptions {
    fn default() -> Self {
        Self { grid: 1 << 10, replicas: 10_000, seed: 0, enumeration_limit: ENUMERATION_LIMIT }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KbStats {
    pub point: usize,
    pub angle: f64,
    pub stage: usize,
    pub method: Method,
    pub replicas: usize,
    /// `E||P_m(z)|^2 - 1|`.
    pub mean_abs_dev: f64,
    pub mean_abs_dev_se: f64,
    /// Empirical `var(tau_1(z))`.
    pub tau_variance: f64,
    pub tau_variance_se: f64,
    pub one_minus_phi: f64,
    pub variance_residual: f64,
    /// `|residual| <= 3 se` (or `<= 1e-12` when enumerated).
    pub variance_ok: bool,
    pub ratio: f64,
    pub ratio_se: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KbReport {
    pub stage: usize,
    pub cut: u64,
    pub grid_size: usize,
    pub method: Method,
    pub replicas: usize,
    pub seed: u64,
    /// `(p_m - 1)(p_m - 2) / p_m^2`, the off-diagonal mass `sum_{p != q} |a_pq|^2`.
    pub a_pq_norm: f64,
    pub points: Vec<KbStats>,
    pub degenerate_points: Vec<usize>,
    /// Smallest ratio over the non-degenerate points.
    pub k_prime: Option<f64>,
    pub k_prime_se: Option<f64>,
    pub k_prime_point: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Per-point accumulator over one realization.
#[derive(Clone, Copy, Default)]
struct Draw {
    abs_dev: f64,
    tau: Complex64,
}

/// Evaluation context for one stage on the grid.
struct StageGrid {
    n: usize,
    p: usize,
    twiddles: Vec<Complex64>,
    /// Residue of `k (h_m + t_m)` modulo `n`, `k = 0..p`.
    base: Vec<usize>,
}

impl StageGrid {
    fn new(params: &OrnsteinParams, m: usize, n: usize) -> Self {
        let p = params.cut(m) as usize;
        let step = params.height(m) + params.spacing(m);
        let base = (0..p).map(|k| residue(&(BigInt::from(k) * &step), n)).collect();
        Self { n, p, twiddles: twiddle_table(n), base }
    }

    fn root(&self, exponent: usize, j: usize) -> Complex64 {
        self.twiddles[(exponent * j) % self.n]
    }

    /// `||P(z_j)|^2 - 1|` and `tau_1(z_j)` for offset residues `x_1..x_{p-1}`.
    fn draw(&self, j: usize, offsets: &[usize]) -> Draw {
        let mut sum = Complex64::new(1.0, 0.0);
        for k in 1..self.p {
            sum += self.root((self.base[k] + offsets[k - 1]) % self.n, j);
        }
        Draw {
            abs_dev: (sum.norm_sqr() / self.p as f64 - 1.0).abs(),
            tau: self.root(offsets[0], j),
        }
    }
}

fn support_power(params: &OrnsteinParams, m: usize) -> Option<u64> {
    let support = params.law(m).support_size().to_u64()?;
    let mut total: u64 = 1;
    for _ in 1..params.cut(m) {
        total = total.checked_mul(support)?;
    }
    Some(total)
}

fn pick_method(params: &OrnsteinParams, m: usize, limit: u64) -> Method {
    match support_power(params, m) {
        Some(size) if size <= limit && params.law(m).atoms().is_some() => Method::Enumeration,
        _ => Method::MonteCarlo,
    }
}

/// Exact expectations over `X_m^{p_m - 1}`: `(E||P|^2 - 1|, E tau_1, E|tau_1|^2)`.
fn enumerate_point(params: &OrnsteinParams, m: usize, grid: &StageGrid, j: usize) -> (f64, Complex64, f64) {
    let atoms = params.law(m).atoms().expect("enumeration needs materialized atoms");
    let residues: Vec<usize> = atoms.iter().map(|(s, _)| residue(s, grid.n)).collect();
    let masses: Vec<f64> = atoms.iter().map(|(_, w)| rational_to_f64(w)).collect();
    let dims = grid.p - 1;
    let mut digits = vec![0usize; dims];
    let mut abs_dev = 0.0;
    let mut tau = Complex64::zero();
    let mut tau_sq = 0.0;
    loop {
        let offsets: Vec<usize> = digits.iter().map(|&d| residues[d]).collect();
        let weight: f64 = digits.iter().map(|&d| masses[d]).product();
        let d = grid.draw(j, &offsets);
        abs_dev += weight * d.abs_dev;
        tau += d.tau * weight;
        tau_sq += weight * d.tau.norm_sqr();
        // Mixed-radix increment.
        let mut i = 0;
        loop {
            if i == dims {
                return (abs_dev, tau, tau_sq);
            }
            digits[i] += 1;
            if digits[i] < residues.len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Offset residues of every replica, `R x (p - 1)`.
fn sample_offsets(params: &OrnsteinParams, m: usize, n: usize, replicas: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let x = sample_stage_offsets(params, seed, r as u64, m)?;
            Ok(x.iter().map(|v| residue(v, n)).collect())
        })
        .collect()
}

/// Sample variance of complex draws and the standard error of that estimate.
fn complex_variance(taus: &[Complex64]) -> (f64, f64) {
    let r = taus.len() as f64;
    let re: Vec<f64> = taus.iter().map(|t| t.re).collect();
    let im: Vec<f64> = taus.iter().map(|t| t.im).collect();
    let mean = Complex64::new(pairwise_sum(&re) / r, pairwise_sum(&im) / r);
    let dev: Vec<f64> = taus.iter().map(|t| (t - mean).norm_sqr()).collect();
    let (mean_dev, se) = mean_and_stderr(&dev);
    (mean_dev * r / (r - 1.0), se * r / (r - 1.0))
}

/// Ratio `E||P_m(z)|^2 - 1| / [(p-1)(p-2)/p^2 (1 - phi_m(z))^2]` at the grid
/// points `points` of the `opts.grid`-point grid.
pub fn kb_ratio(params: &OrnsteinParams, m: usize, points: &[usize], opts: &KbOptions) -> Result<KbReport> {
    if m >= params.stages() {
        return Err(Error::StageOutOfRange { stage: m, stages: params.stages() });
    }
    let n = opts.grid;
    if let Some(&bad) = points.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidArgument(format!("point {bad} outside a grid of {n}")));
    }
    let method = pick_method(params, m, opts.enumeration_limit);
    if method == Method::MonteCarlo && opts.replicas < 100 {
        return Err(Error::InvalidArgument(format!(
            "{} replicas; sampling needs at least 100",
            opts.replicas
        )));
    }
    let cut = params.cut(m);
    let factor = kb_factor(cut);
    let grid = StageGrid::new(params, m, n);
    let law = params.law(m);

    let (live, degenerate): (Vec<usize>, Vec<usize>) =
        points.iter().partition(|&&j| 1.0 - law.phi_at(n, j) >= DEGENERATE_GAP);

    let offsets = match method {
        Method::MonteCarlo => Some(sample_offsets(params, m, n, opts.replicas, opts.seed)?),
        Method::Enumeration => None,
    };

    let stats: Vec<KbStats> = live
        .par_iter()
        .map(|&j| {
            let one_minus_phi = 1.0 - law.phi_at(n, j);
            let denom = factor * one_minus_phi * one_minus_phi;
            let (mean_abs_dev, mean_abs_dev_se, tau_variance, tau_variance_se, replicas) = match &offsets {
                None => {
                    let (dev, tau, tau_sq) = enumerate_point(params, m, &grid, j);
                    (dev, 0.0, tau_sq - tau.norm_sqr(), 0.0, 0)
                }
                Some(rows) => {
                    let draws: Vec<Draw> = rows.iter().map(|x| grid.draw(j, x)).collect();
                    let devs: Vec<f64> = draws.iter().map(|d| d.abs_dev).collect();
                    let taus: Vec<Complex64> = draws.iter().map(|d| d.tau).collect();
                    let (mean, se) = mean_and_stderr(&devs);
                    let (var, var_se) = complex_variance(&taus);
                    (mean, se, var, var_se, rows.len())
                }
            };
            let variance_residual = tau_variance - one_minus_phi;
            let variance_ok = match method {
                Method::Enumeration => variance_residual.abs() <= 1e-12,
                Method::MonteCarlo => variance_residual.abs() <= 3.0 * tau_variance_se,
            };
            KbStats {
                point: j,
                angle: j as f64 / n as f64,
                stage: m,
                method,
                replicas,
                mean_abs_dev,
                mean_abs_dev_se,
                tau_variance,
                tau_variance_se,
                one_minus_phi,
                variance_residual,
                variance_ok,
                ratio: mean_abs_dev / denom,
                ratio_se: mean_abs_dev_se / denom,
            }
        })
        .collect();

    let best = stats
        .iter()
        .min_by(|a, b| a.ratio.total_cmp(&b.ratio).then(a.point.cmp(&b.point)));
    let message = stats.is_empty().then(|| DEGENERATE_MESSAGE.to_string());
    Ok(KbReport {
        stage: m,
        cut,
        grid_size: n,
        method,
        replicas: if method == Method::MonteCarlo { opts.replicas } else { 0 },
        seed: opts.seed,
        a_pq_norm: factor,
        k_prime: best.map(|s| s.ratio),
        k_prime_se: best.map(|s| s.ratio_se),
        k_prime_point: best.map(|s| s.point),
        points: stats,
        degenerate_points: degenerate,
        message,
    })
}

/// Masked-integral form of the bound: `E integral_F Q ||P_m|^2 - 1|` against
/// `K' (p-1)(p-2)/p^2 integral_F Q (1 - phi_m)^2` and its Cauchy-Schwarz
/// weakening with `(integral_F Q (1 - phi_m))^2`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KbMaskedReport {
    pub stage: usize,
    pub method: Method,
    pub lhs: f64,
    pub lhs_se: f64,
    pub quadratic: f64,
    pub linear: f64,
    pub q_mass: f64,
    pub k_prime: Option<f64>,
    pub a_pq_norm: f64,
    /// `K' a_pq_norm quadratic`.
    pub bound: Option<f64>,
    /// `K' a_pq_norm linear^2 / q_mass`.
    pub cauchy_schwarz_bound: Option<f64>,
    pub holds: Option<bool>,
    pub degenerate_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

pub fn kb_masked_integral(
    params: &OrnsteinParams,
    m: usize,
    q: &GridDensity,
    mask: &MaskedFunctional,
    opts: &KbOptions,
) -> Result<KbMaskedReport> {
    let n = q.grid_size();
    if mask.grid_size() != n || opts.grid != n {
        return Err(Error::GridMismatch(format!(
            "Q on {n} points, mask on {}, options grid {}",
            mask.grid_size(),
            opts.grid
        )));
    }
    let points: Vec<usize> = (0..n).filter(|&j| mask.mask[j] && q.values[j] > 0.0).collect();
    let report = kb_ratio(params, m, &points, opts)?;
    let law = params.law(m);
    let one_minus_phi: Vec<f64> = (0..n).map(|j| 1.0 - law.phi_at(n, j)).collect();

    let quadratic = mask.integrate(
        &q.values.iter().zip(&one_minus_phi).map(|(a, b)| a * b * b).collect::<Vec<_>>(),
    )?;
    let linear = mask.integrate(&q.values.iter().zip(&one_minus_phi).map(|(a, b)| a * b).collect::<Vec<_>>())?;
    let q_mass = mask.value(q)?;

    // The lhs needs every masked point, degenerate ones included.
    let grid = StageGrid::new(params, m, n);
    let (lhs, lhs_se) = match report.method {
        Method::Enumeration => {
            let values: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|j| {
                    if mask.mask[j] && q.values[j] > 0.0 {
                        q.values[j] * enumerate_point(params, m, &grid, j).0
                    } else {
                        0.0
                    }
                })
                .collect();
            (pairwise_sum(&values) / n as f64, 0.0)
        }
        Method::MonteCarlo => {
            let rows = sample_offsets(params, m, n, opts.replicas, opts.seed)?;
            let totals: Vec<f64> = rows
                .par_iter()
                .map(|x| {
                    let values: Vec<f64> = points.iter().map(|&j| q.values[j] * grid.draw(j, x).abs_dev).collect();
                    pairwise_sum(&values) / n as f64
                })
                .collect();
            mean_and_stderr(&totals)
        }
    };

    let bound = report.k_prime.map(|k| k * report.a_pq_norm * quadratic);
    let cauchy_schwarz_bound = report
        .k_prime
        .filter(|_| q_mass > 0.0)
        .map(|k| k * report.a_pq_norm * linear * linear / q_mass);
    let tolerance = 3.0 * lhs_se + 1e-12;
    Ok(KbMaskedReport {
        stage: m,
        method: report.method,
        lhs,
        lhs_se,
        quadratic,
        linear,
        q_mass,
        k_prime: report.k_prime,
        a_pq_norm: report.a_pq_norm,
        holds: bound.map(|b| lhs + tolerance >= b),
        bound,
        cauchy_schwarz_bound,
        degenerate_points: report.degenerate_points.len(),
        message: report.message,
    })
}

/// Grid points `j` of the `n`-grid, evenly spread, avoiding the roots of
/// `1 - phi_m` by the degenerate gap.
pub fn spread_points(params: &OrnsteinParams, m: usize, n: usize, count: usize) -> Vec<usize> {
    let law = params.law(m);
    let mut out = Vec::with_capacity(count);
    let stride = (n / count.max(1)).max(1);
    let mut j = stride / 2;
    while out.len() < count && j < n {
        if 1.0 - law.phi_at(n, j) >= DEGENERATE_GAP {
            out.push(j);
        }
        j += stride;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{OffsetLaw, SpacerScale};
    use crate::spectral::DensityKind;

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    fn params(cut: u64, law: OffsetLaw) -> OrnsteinParams {
        OrnsteinParams::new(vec![cut], SpacerScale::Explicit(vec![big(2)]), vec![], vec![law]).unwrap()
    }

    #[test]
    fn variance_at_i_is_eight_ninths() {
        let p = params(4, OffsetLaw::Uniform);
        let opts = KbOptions { grid: 4, ..Default::default() };
        let r = kb_ratio(&p, 0, &[1], &opts).unwrap();
        assert_eq!(r.method, Method::Enumeration);
        assert!((r.points[0].tau_variance - 8.0 / 9.0).abs() < 1e-12);
        assert!(r.points[0].variance_ok);
    }

    #[test]
    fn sampled_variance_matches() {
        let p = params(4, OffsetLaw::Uniform);
        let opts = KbOptions { grid: 4, enumeration_limit: 0, replicas: 20_000, seed: 3 };
        let r = kb_ratio(&p, 0, &[1], &opts).unwrap();
        assert_eq!(r.method, Method::MonteCarlo);
        let s = &r.points[0];
        assert!(s.variance_ok, "{} vs {} (se {})", s.tau_variance, s.one_minus_phi, s.tau_variance_se);
    }

    #[test]
    fn enumeration_and_sampling_agree() {
        let p = params(5, OffsetLaw::Uniform);
        let exact = kb_ratio(&p, 0, &[3, 7], &KbOptions { grid: 32, ..Default::default() }).unwrap();
        let opts = KbOptions { grid: 32, enumeration_limit: 0, replicas: 20_000, seed: 1 };
        let sampled = kb_ratio(&p, 0, &[3, 7], &opts).unwrap();
        for (a, b) in exact.points.iter().zip(&sampled.points) {
            assert!((a.mean_abs_dev - b.mean_abs_dev).abs() < 4.0 * b.mean_abs_dev_se);
        }
    }

    #[test]
    fn point_mass_is_degenerate() {
        let p = params(4, OffsetLaw::PointMass(big(0)));
        let r = kb_ratio(&p, 0, &[1, 2, 3], &KbOptions { grid: 8, ..Default::default() }).unwrap();
        assert!(r.points.is_empty());
        assert_eq!(r.degenerate_points, vec![1, 2, 3]);
        assert_eq!(r.message.as_deref(), Some(DEGENERATE_MESSAGE));
        assert!(r.k_prime.is_none());
    }

    #[test]
    fn ratio_is_positive() {
        let p = params(8, OffsetLaw::Uniform);
        let points = spread_points(&p, 0, 256, 16);
        let r = kb_ratio(&p, 0, &points, &KbOptions { grid: 256, ..Default::default() }).unwrap();
        assert!(r.k_prime.unwrap() > 0.0);
        assert!((r.a_pq_norm - 42.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_thread_independent() {
        let p = params(12, OffsetLaw::Uniform);
        let opts = KbOptions { grid: 64, enumeration_limit: 0, replicas: 500, seed: 4 };
        let a = kb_ratio(&p, 0, &[5, 9], &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| kb_ratio(&p, 0, &[5, 9], &opts).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn masked_form_holds() {
        let p = params(6, OffsetLaw::Uniform);
        let n = 64;
        let q = GridDensity::constant(n, DensityKind::Root);
        let mask = MaskedFunctional::full(n);
        let r = kb_masked_integral(&p, 0, &q, &mask, &KbOptions { grid: n, ..Default::default() }).unwrap();
        assert_eq!(r.method, Method::Enumeration);
        assert_eq!(r.holds, Some(true));
        assert!(r.cauchy_schwarz_bound.unwrap() <= r.bound.unwrap() + 1e-12);
    }
}
