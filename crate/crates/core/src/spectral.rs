//! Partial Riesz products on uniform torus grids and their exact Fourier
//! coefficients.

use std::sync::Arc;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::construction::StageGeometry;
use crate::error::{Error, Result};
use crate::numeric::{next_pow2, pairwise_sum, residue};
use crate::trigpoly::{build_pk, real, ExactComplex, PkForm, SparseTrigPoly};

/// Smallest default grid.
pub const MIN_DEFAULT_GRID: usize = 1 << 14;
/// Largest default grid.
pub const MAX_DEFAULT_GRID: usize = 1 << 22;

/// Reusable evaluator of sparse polynomials on the `n`-point grid
/// `z_j = exp(2 pi i j / n)`.
#[derive(Clone)]
pub struct GridEvaluator {
    n: usize,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
    twiddles: Arc<Vec<Complex64>>,
}

impl std::fmt::Debug for GridEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridEvaluator").field("n", &self.n).finish()
    }
}

impl GridEvaluator {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "grid size must be positive");
        let mut planner = FftPlanner::new();
        let twiddles = (0..n)
            .map(|r| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * r as f64 / n as f64))
            .collect();
        Self {
            n,
            inverse: planner.plan_fft_inverse(n),
            forward: planner.plan_fft_forward(n),
            twiddles: Arc::new(twiddles),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Coefficients folded into residue bins modulo `n`.
    fn bins(&self, p: &SparseTrigPoly) -> Vec<Complex64> {
        let mut bins = vec![Complex64::zero(); self.n];
        for (f, c) in p.terms_f64() {
            bins[residue(f, self.n)] += c;
        }
        bins
    }

    /// Samples `sum_f c_f z_j^f`; frequencies are reduced modulo `n` exactly,
    /// then one inverse FFT produces all samples.
    pub fn eval(&self, p: &SparseTrigPoly) -> Vec<Complex64> {
        let mut buf = self.bins(p);
        self.inverse.process(&mut buf);
        buf
    }

    /// Same samples by direct summation over terms.
    pub fn eval_direct(&self, p: &SparseTrigPoly) -> Vec<Complex64> {
        let n = self.n;
        let terms: Vec<(usize, Complex64)> = p.terms_f64().map(|(f, c)| (residue(f, n), c)).collect();
        (0..n)
            .into_par_iter()
            .map(|j| {
                terms
                    .iter()
                    .map(|&(r, c)| c * self.twiddles[(r * j) % n])
                    .sum()
            })
            .collect()
    }

    /// `|P(z_j)|` for every grid point.
    pub fn modulus(&self, p: &SparseTrigPoly) -> Vec<f64> {
        self.eval(p).into_iter().map(|c| c.norm()).collect()
    }

    /// Discrete Fourier coefficients `(1/n) sum_j v_j z_j^{-k}` for `|k| <= window`.
    pub fn fourier_coeffs(&self, values: &[f64], window: usize) -> Result<Vec<Complex64>> {
        if values.len() != self.n {
            return Err(Error::GridMismatch(format!(
                "{} samples on a grid of {}",
                values.len(),
                self.n
            )));
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        Ok((-(window as i64)..=window as i64)
            .map(|k| buf[k.rem_euclid(self.n as i64) as usize] * scale)
            .collect())
    }
}

/// Samples of `p` on the `n`-point grid.
pub fn grid_eval(p: &SparseTrigPoly, n: usize) -> Vec<Complex64> {
    GridEvaluator::new(n).eval(p)
}

/// Whether a density holds `prod |P|^2` or `prod |P|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    Squared,
    Root,
}

/// Nonnegative samples of a partial Riesz product on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub values: Vec<f64>,
    pub kind: DensityKind,
    /// Stages of the subsequence, increasing.
    pub stages: Vec<usize>,
}

impl GridDensity {
    pub fn constant(n: usize, kind: DensityKind) -> Self {
        Self { values: vec![1.0; n], kind, stages: Vec::new() }
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    /// Grid mean, i.e. the quadrature of the density against `lambda`.
    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// `integral_F density d lambda` with `F` given as a grid mask.
    pub fn masked_integral(&self, mask: &[bool]) -> Result<f64> {
        if mask.len() != self.values.len() {
            return Err(Error::GridMismatch(format!(
                "mask of {} points on a grid of {}",
                mask.len(),
                self.values.len()
            )));
        }
        let kept: Vec<f64> = self
            .values
            .iter()
            .zip(mask)
            .map(|(v, &m)| if m { *v } else { 0.0 })
            .collect();
        Ok(pairwise_sum(&kept) / self.values.len() as f64)
    }

    /// Pointwise product with `factor`, recording `stage`.
    pub fn multiply(&mut self, factor: &[f64], stage: usize) {
        assert_eq!(factor.len(), self.values.len());
        self.values.iter_mut().zip(factor).for_each(|(v, f)| *v *= f);
        self.stages.push(stage);
    }

    /// Writes `j,value` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "j,value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(out, "{j},{v:e}")?;
        }
        Ok(())
    }

    pub fn summary(&self) -> DensitySummary {
        DensitySummary {
            grid_size: self.grid_size(),
            kind: self.kind,
            stages: self.stages.clone(),
            mean: self.mean(),
            sup: self.sup(),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DensitySummary {
    pub grid_size: usize,
    pub kind: DensityKind,
    pub stages: Vec<usize>,
    pub mean: f64,
    pub sup: f64,
}

/// Partial product over a subsequence of stages, in both kinds.
#[derive(Debug, Clone)]
pub struct RieszPartial {
    pub root: GridDensity,
    pub squared: GridDensity,
    /// `integral prod |P| d lambda` (grid quadrature).
    pub root_mean: f64,
    /// `integral prod |P|^2 d lambda`; exact when `n > 2 * spectral_span`.
    pub squared_mean: f64,
    pub squared_sup: f64,
    /// Largest frequency of `prod |P|^2`.
    pub spectral_span: BigInt,
    /// Set when `n <= 2 * spectral_span`.
    pub aliasing_risk: bool,
}

/// Largest frequency of `|P_k|^2`, i.e. the spread of the exponents of `P_k`.
pub fn autocorrelation_span(geometry: &StageGeometry) -> BigInt {
    let last = geometry.cut as usize - 1;
    geometry.copy_offset(last) - geometry.copy_offset(0)
}

/// Total span of `prod |P_{n_i}|^2`.
pub fn product_span(geometries: &[StageGeometry]) -> BigInt {
    geometries.iter().map(autocorrelation_span).sum()
}

/// Default grid: `max(2^14, next power of two above 4 * span of the
/// smallest-stage factor)`, capped at `2^22`.
pub fn default_grid_size(geometries: &[StageGeometry]) -> usize {
    let smallest = geometries.iter().min_by_key(|g| g.stage);
    let want = smallest
        .map(|g| next_pow2(&(4 * autocorrelation_span(g) + 1)))
        .unwrap_or(1);
    (want as usize).clamp(MIN_DEFAULT_GRID, MAX_DEFAULT_GRID)
}

/// Evaluates `prod |P_{n_i}|` and `prod |P_{n_i}|^2` over the given stages.
pub fn riesz_partial(geometries: &[StageGeometry], n: usize) -> RieszPartial {
    riesz_partial_with(&GridEvaluator::new(n), geometries)
}

pub fn riesz_partial_with(eval: &GridEvaluator, geometries: &[StageGeometry]) -> RieszPartial {
    let n = eval.size();
    let mut ordered: Vec<&StageGeometry> = geometries.iter().collect();
    ordered.sort_by_key(|g| g.stage);
    let mut root = GridDensity::constant(n, DensityKind::Root);
    for g in &ordered {
        let m = eval.modulus(&build_pk(g, PkForm::Ornstein));
        root.multiply(&m, g.stage);
    }
    let squared = GridDensity {
        values: root.values.iter().map(|v| v * v).collect(),
        kind: DensityKind::Squared,
        stages: root.stages.clone(),
    };
    let spectral_span = product_span(geometries);
    RieszPartial {
        root_mean: root.mean(),
        squared_mean: squared.mean(),
        squared_sup: squared.sup(),
        aliasing_risk: BigInt::from(n) <= 2 * &spectral_span,
        spectral_span,
        root,
        squared,
    }
}

/// Result of doubling the grid until `integral prod |P|` settles.
#[derive(Debug, Clone, Serialize)]
pub struct RootConvergence {
    pub grid_size: usize,
    pub root_mean: f64,
    /// `(n, integral prod |P|)` for every grid tried.
    pub history: Vec<(usize, f64)>,
    pub converged: bool,
}

/// Doubles `n` from `start` until two consecutive root means differ by less
/// than `tol`, or until `cap` is reached.
pub fn converge_root_mean(
    geometries: &[StageGeometry],
    start: usize,
    tol: f64,
    cap: usize,
) -> RootConvergence {
    let mut n = start.next_power_of_two();
    let mut history = vec![(n, riesz_partial(geometries, n).root_mean)];
    while n < cap {
        n *= 2;
        let value = riesz_partial(geometries, n).root_mean;
        let prev = history.last().unwrap().1;
        history.push((n, value));
        if (value - prev).abs() < tol {
            return RootConvergence { grid_size: n, root_mean: value, history, converged: true };
        }
    }
    let (grid_size, root_mean) = *history.last().unwrap();
    RootConvergence { grid_size, root_mean, history, converged: false }
}

/// How a correlation sequence was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Convolution,
    Tower,
    GridDft,
}

/// Values of a correlation window.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationValues {
    Exact(Vec<ExactComplex>),
    Float(Vec<Complex64>),
}

/// Fourier coefficients `sigma^(n)` for `|n| <= window`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeq {
    pub window: usize,
    pub values: CorrelationValues,
    pub provenance: Provenance,
}

impl CorrelationSeq {
    pub fn exact(window: usize, values: Vec<ExactComplex>, provenance: Provenance) -> Self {
        assert_eq!(values.len(), 2 * window + 1);
        Self { window, values: CorrelationValues::Exact(values), provenance }
    }

    fn index(&self, n: i64) -> Option<usize> {
        (n.unsigned_abs() as usize <= self.window).then(|| (n + self.window as i64) as usize)
    }

    /// Exact value at `n`, if the sequence is exact and `|n| <= window`.
    pub fn exact_at(&self, n: i64) -> Option<&ExactComplex> {
        match &self.values {
            CorrelationValues::Exact(v) => self.index(n).map(|i| &v[i]),
            CorrelationValues::Float(_) => None,
        }
    }

    pub fn at_f64(&self, n: i64) -> Option<Complex64> {
        let i = self.index(n)?;
        Some(match &self.values {
            CorrelationValues::Exact(v) => Complex64::new(
                crate::numeric::rational_to_f64(&v[i].re),
                crate::numeric::rational_to_f64(&v[i].im),
            ),
            CorrelationValues::Float(v) => v[i],
        })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.values, CorrelationValues::Exact(_))
    }

    /// `sigma^(-n) == conj(sigma^(n))`, exactly or within `tol` for floats.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        let w = self.window as i64;
        (0..=w).all(|n| match &self.values {
            CorrelationValues::Exact(_) => {
                *self.exact_at(-n).unwrap() == self.exact_at(n).unwrap().conj()
            }
            CorrelationValues::Float(_) => {
                (self.at_f64(-n).unwrap() - self.at_f64(n).unwrap().conj()).norm() <= tol
            }
        })
    }

    pub fn records(&self) -> Vec<CorrelationRecord> {
        let w = self.window as i64;
        (-w..=w)
            .map(|n| {
                let exact = self.exact_at(n).map(|c| {
                    if c.im.is_zero() {
                        c.re.to_string()
                    } else {
                        format!("{}+{}i", c.re, c.im)
                    }
                });
                let v = self.at_f64(n).unwrap();
                CorrelationRecord { n, re: v.re, im: v.im, exact }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CorrelationRecord {
    pub n: i64,
    pub re: f64,
    pub im: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
}

/// Default convolution window `2 h` of the first stage of the subsequence.
pub fn default_window(geometries: &[StageGeometry]) -> usize {
    geometries
        .iter()
        .min_by_key(|g| g.stage)
        .and_then(|g| num_traits::ToPrimitive::to_usize(&(2 * &g.height)))
        .unwrap_or(0)
}

/// Exact coefficients of `prod |P_{n_i}|^2` on `|n| <= window`.
///
/// Factors are multiplied from the highest stage down. After each product,
/// frequencies beyond `window + (span of the factors still to come)` are
/// dropped: no later factor can bring them back into the window.
pub fn product_fourier_coeffs(geometries: &[StageGeometry], window: usize) -> CorrelationSeq {
    let mut ordered: Vec<&StageGeometry> = geometries.iter().collect();
    ordered.sort_by_key(|g| std::cmp::Reverse(g.stage));
    let spans: Vec<BigInt> = ordered.iter().map(|g| autocorrelation_span(g)).collect();
    let mut remaining: BigInt = spans.iter().sum();

    let mut acc = SparseTrigPoly::one();
    for (g, span) in ordered.iter().zip(&spans) {
        remaining -= span;
        let keep = BigInt::from(window) + &remaining;
        let factor = build_pk(g, PkForm::Ornstein).modulus_squared();
        acc = acc.mul_windowed(&factor, &keep);
    }
    let w = window as i64;
    let values = (-w..=w)
        .map(|n| acc.coeff(&BigInt::from(n)).unwrap())
        .collect();
    CorrelationSeq::exact(window, values, Provenance::Convolution)
}

/// Fourier coefficients of a sampled density by forward DFT.
pub fn grid_fourier_coeffs(density: &GridDensity, window: usize) -> Result<CorrelationSeq> {
    let eval = GridEvaluator::new(density.grid_size());
    let values = eval.fourier_coeffs(&density.values, window)?;
    Ok(CorrelationSeq { window, values: CorrelationValues::Float(values), provenance: Provenance::GridDft })
}

/// Coefficient of `prod_{i} |P_i|^2` at `n`, exact.
pub fn product_coefficient(geometries: &[StageGeometry], n: i64) -> ExactComplex {
    let w = n.unsigned_abs() as usize;
    product_fourier_coeffs(geometries, w)
        .exact_at(n)
        .cloned()
        .unwrap_or_else(|| real(BigRational::zero()))
}

/// Value `1` as an exact coefficient.
pub fn exact_one() -> ExactComplex {
    real(BigRational::one())
}
