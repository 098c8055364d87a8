//! Exact sparse trigonometric polynomials over arbitrary-precision
//! frequencies.
//!
//! Coefficients are complex rationals. The stage polynomials `P_k` carry the
//! irrational factor `1/sqrt(p_k)`, which is kept symbolically as a squared
//! scale so that `|P_k|^2` stays exact.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::construction::{StageGeometry, StageLaw};
use crate::error::{Error, Result};
use crate::numeric::rational_to_f64;

pub type ExactComplex = Complex<BigRational>;

pub fn real(x: BigRational) -> ExactComplex {
    Complex::new(x, BigRational::zero())
}

fn exact_is_zero(c: &ExactComplex) -> bool {
    c.re.is_zero() && c.im.is_zero()
}

fn to_c64(c: &ExactComplex) -> Complex64 {
    Complex64::new(rational_to_f64(&c.re), rational_to_f64(&c.im))
}

/// Finite sum `sqrt(scale_sq) * sum_f c_f z^f`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTrigPoly {
    terms: BTreeMap<BigInt, ExactComplex>,
    scale_sq: BigRational,
}

/// Which exponent convention to use when building `P_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PkForm {
    /// `(1/sqrt p) sum_j z^{-(j h_k + s_k(j))}`.
    Spacer,
    /// `(1/sqrt p) sum_j z^{j (h_k + t_k) + x_{k,j}}`.
    Ornstein,
}

/// JSON-friendly term record: frequency as a decimal string.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TermRecord {
    pub frequency: String,
    pub re: f64,
    pub im: f64,
}

impl Default for SparseTrigPoly {
    fn default() -> Self {
        Self::zero()
    }
}

impl SparseTrigPoly {
    pub fn zero() -> Self {
        Self { terms: BTreeMap::new(), scale_sq: BigRational::one() }
    }

    pub fn one() -> Self {
        Self::monomial(BigInt::zero(), real(BigRational::one()))
    }

    pub fn monomial(frequency: BigInt, coeff: ExactComplex) -> Self {
        Self::from_terms([(frequency, coeff)])
    }

    /// Collects terms, merging repeated frequencies and dropping zeros.
    pub fn from_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (BigInt, ExactComplex)>,
    {
        let mut map: BTreeMap<BigInt, ExactComplex> = BTreeMap::new();
        for (f, c) in terms {
            let slot = map.entry(f).or_insert_with(ExactComplex::zero);
            *slot = &*slot + c;
        }
        map.retain(|_, c| !exact_is_zero(c));
        Self { terms: map, scale_sq: BigRational::one() }
    }

    pub fn from_real_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (BigInt, BigRational)>,
    {
        Self::from_terms(terms.into_iter().map(|(f, c)| (f, real(c))))
    }

    /// Multiplies the polynomial by `sqrt(scale_sq)`.
    pub fn with_scale_sq(mut self, scale_sq: BigRational) -> Self {
        assert!(scale_sq.is_positive(), "scale must be positive");
        self.scale_sq *= scale_sq;
        self
    }

    pub fn scale_sq(&self) -> &BigRational {
        &self.scale_sq
    }

    /// Whether the symbolic scale is 1, so raw coefficients are the true ones.
    pub fn is_unscaled(&self) -> bool {
        self.scale_sq.is_one()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Raw (unscaled) terms in increasing frequency order.
    pub fn terms(&self) -> impl Iterator<Item = (&BigInt, &ExactComplex)> {
        self.terms.iter()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = &BigInt> {
        self.terms.keys()
    }

    /// Raw coefficient at `f` (before the scale is applied).
    pub fn raw_coeff(&self, f: &BigInt) -> Option<&ExactComplex> {
        self.terms.get(f)
    }

    /// Exact coefficient at `f`; only defined when the polynomial is unscaled.
    pub fn coeff(&self, f: &BigInt) -> Option<ExactComplex> {
        assert!(self.is_unscaled(), "coefficient of a scaled polynomial is irrational");
        Some(self.terms.get(f).cloned().unwrap_or_else(ExactComplex::zero))
    }

    /// Coefficient at `f` as a float, scale included.
    pub fn coeff_f64(&self, f: &BigInt) -> Complex64 {
        let s = rational_to_f64(&self.scale_sq).sqrt();
        self.terms.get(f).map(|c| to_c64(c) * s).unwrap_or_default()
    }

    /// Largest `|f|` over the stored terms, 0 for the zero polynomial.
    pub fn span(&self) -> BigInt {
        let lo = self.terms.keys().next().map(|f| f.abs()).unwrap_or_default();
        let hi = self.terms.keys().next_back().map(|f| f.abs()).unwrap_or_default();
        lo.max(hi)
    }

    /// Iterates `(frequency, float coefficient with scale applied)`.
    pub fn terms_f64(&self) -> impl Iterator<Item = (&BigInt, Complex64)> + '_ {
        let s = rational_to_f64(&self.scale_sq).sqrt();
        self.terms.iter().map(move |(f, c)| (f, to_c64(c) * s))
    }

    /// `P(1/z)`: frequencies negated, coefficients kept.
    pub fn mirror(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|(f, c)| (-f, c.clone())).collect(),
            scale_sq: self.scale_sq.clone(),
        }
    }

    /// `P(z^m)`: every frequency multiplied by `m`.
    pub fn dilate(&self, m: &BigInt) -> Self {
        assert!(m.is_positive(), "dilation factor must be positive");
        Self {
            terms: self.terms.iter().map(|(f, c)| (f * m, c.clone())).collect(),
            scale_sq: self.scale_sq.clone(),
        }
    }

    /// Sum with another polynomial; both must share the same scale.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.scale_sq, other.scale_sq, "adding polynomials with different scales");
        let mut out = Self::from_terms(self.terms.iter().chain(other.terms.iter()).map(|(f, c)| (f.clone(), c.clone())));
        out.scale_sq = self.scale_sq.clone();
        out
    }

    /// Multiplies every raw coefficient by an exact rational.
    pub fn scale_by(&self, r: &BigRational) -> Self {
        let mut out = Self::from_terms(self.terms.iter().map(|(f, c)| (f.clone(), c * r.clone())));
        out.scale_sq = self.scale_sq.clone();
        out
    }

    /// Full product (convolution of coefficient sequences).
    pub fn mul(&self, other: &Self) -> Self {
        self.mul_impl(other, None)
    }

    /// Product truncated to frequencies `|f| <= window`.
    pub fn mul_windowed(&self, other: &Self, window: &BigInt) -> Self {
        self.mul_impl(other, Some(window))
    }

    fn mul_impl(&self, other: &Self, window: Option<&BigInt>) -> Self {
        let mut acc: BTreeMap<BigInt, ExactComplex> = BTreeMap::new();
        for (f, a) in &self.terms {
            for (g, b) in &other.terms {
                let h = f + g;
                if window.is_some_and(|w| h.abs() > *w) {
                    continue;
                }
                let slot = acc.entry(h).or_insert_with(ExactComplex::zero);
                *slot = &*slot + a * b;
            }
        }
        acc.retain(|_, c| !exact_is_zero(c));
        Self { terms: acc, scale_sq: &self.scale_sq * &other.scale_sq }
    }

    /// Autocorrelation `c(n) = sum_f c_f conj(c_{f-n})`, i.e. `|P|^2` as a
    /// trigonometric polynomial. The result is unscaled and exact.
    pub fn modulus_squared(&self) -> Self {
        let mut acc: BTreeMap<BigInt, ExactComplex> = BTreeMap::new();
        for (f, a) in &self.terms {
            for (g, b) in &self.terms {
                let slot = acc.entry(f - g).or_insert_with(ExactComplex::zero);
                *slot = &*slot + a * b.conj();
            }
        }
        acc.retain(|_, c| !exact_is_zero(c));
        let scale = self.scale_sq.clone();
        for c in acc.values_mut() {
            *c = &*c * scale.clone();
        }
        Self { terms: acc, scale_sq: BigRational::one() }
    }

    /// `c(-n) == conj(c(n))` for every stored frequency.
    pub fn is_hermitian(&self) -> bool {
        self.terms.iter().all(|(f, c)| {
            self.terms.get(&-f).is_some_and(|d| *d == c.conj())
        })
    }

    /// `integral |P|^2 d lambda = scale_sq * sum |c_f|^2`.
    pub fn l2_norm_sq(&self) -> BigRational {
        let s: BigRational = self.terms.values().map(|c| c.norm_sqr()).sum();
        s * &self.scale_sq
    }

    /// Sum of raw coefficients, i.e. the value at `z = 1` of an unscaled polynomial.
    pub fn coeff_sum(&self) -> ExactComplex {
        self.terms.values().fold(ExactComplex::zero(), |acc, c| acc + c)
    }

    pub fn to_records(&self) -> Vec<TermRecord> {
        self.terms_f64()
            .map(|(f, c)| TermRecord { frequency: f.to_string(), re: c.re, im: c.im })
            .collect()
    }
}

/// Builds the stage polynomial `P_k` from its geometry.
pub fn build_pk(geometry: &StageGeometry, form: PkForm) -> SparseTrigPoly {
    let one = real(BigRational::one());
    let terms = (0..geometry.cut as usize).map(|j| {
        let e = match form {
            PkForm::Spacer => -geometry.copy_offset(j),
            PkForm::Ornstein => {
                BigInt::from(j) * (&geometry.height + &geometry.spacing) + &geometry.offsets[j]
            }
        };
        (e, one.clone())
    });
    SparseTrigPoly::from_terms(terms)
        .with_scale_sq(BigRational::new(BigInt::one(), BigInt::from(geometry.cut)))
}

/// Builds `P_k` for stage `k` out of a list of geometries.
pub fn build_pk_at(geometries: &[StageGeometry], k: usize, form: PkForm) -> Result<SparseTrigPoly> {
    let g = geometries
        .iter()
        .find(|g| g.stage == k)
        .ok_or(Error::StageOutOfRange { stage: k, stages: geometries.len() })?;
    Ok(build_pk(g, form))
}

/// Where a `PhiFunction` comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiSource {
    Stage(usize),
    Limit,
}

/// `phi(z) = |sum_s xi(s) z^s|^2` with exact nonnegative coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiFunction {
    poly: SparseTrigPoly,
    pub source: PhiSource,
    /// Whether every nonzero coefficient is stored (false for windowed views).
    pub complete: bool,
}

impl PhiFunction {
    pub fn from_coefficients<I>(coeffs: I, source: PhiSource, complete: bool) -> Self
    where
        I: IntoIterator<Item = (BigInt, BigRational)>,
    {
        Self { poly: SparseTrigPoly::from_real_terms(coeffs), source, complete }
    }

    /// `phi == 1`, the degenerate point-mass case.
    pub fn constant_one(source: PhiSource) -> Self {
        Self { poly: SparseTrigPoly::one(), source, complete: true }
    }

    pub fn poly(&self) -> &SparseTrigPoly {
        &self.poly
    }

    pub fn coeff(&self, n: i64) -> BigRational {
        self.poly
            .raw_coeff(&BigInt::from(n))
            .map(|c| c.re.clone())
            .unwrap_or_default()
    }

    /// Sum of the stored coefficients, which is `phi(1)`.
    pub fn coeff_sum(&self) -> BigRational {
        self.poly.coeff_sum().re
    }

    pub fn is_nonnegative(&self) -> bool {
        self.poly.terms().all(|(_, c)| !c.re.is_negative() && c.im.is_zero())
    }

    /// `phi(z_j)` for `z_j = exp(2 pi i j / n)`.
    pub fn eval_grid(&self, n: usize) -> Vec<f64> {
        crate::spectral::grid_eval(&self.poly, n)
            .into_iter()
            .map(|c| c.re)
            .collect()
    }
}

/// Largest support for which `phi_of_distribution` builds all coefficients.
pub const MAX_PHI_SUPPORT: u64 = 1 << 16;

/// Full coefficient set of `phi_m` for a stage law.
pub fn phi_of_distribution(law: &StageLaw, stage: usize) -> Result<PhiFunction> {
    let support = law.support_size();
    if support > BigInt::from(MAX_PHI_SUPPORT) {
        return Err(Error::ResourceLimit(format!(
            "phi of a law with {support} atoms; use a windowed view"
        )));
    }
    if law.is_uniform() {
        // Closed form: (t + 1 - |n|) / (t + 1)^2 on |n| <= t.
        let t: BigInt = 2 * law.half_width();
        let mut n = -t.clone();
        let mut coeffs = Vec::new();
        while n <= t {
            coeffs.push((n.clone(), law.phi_coefficient(&n)));
            n += 1;
        }
        return Ok(PhiFunction::from_coefficients(coeffs, PhiSource::Stage(stage), true));
    }
    let atoms = law.atoms().expect("tables are materialized");
    let chi = SparseTrigPoly::from_real_terms(atoms);
    let poly = chi.modulus_squared();
    Ok(PhiFunction { poly, source: PhiSource::Stage(stage), complete: true })
}

/// `phi_m` restricted to `|n| <= window`; exact on that window for any law size.
pub fn phi_window(law: &StageLaw, stage: usize, window: u64) -> PhiFunction {
    let w = window as i64;
    let coeffs = (-w..=w).map(|n| {
        let n = BigInt::from(n);
        let c = law.phi_coefficient(&n);
        (n, c)
    });
    let complete = BigInt::from(window) >= 2 * law.half_width();
    PhiFunction::from_coefficients(coeffs, PhiSource::Stage(stage), complete)
}

/// The degenerate-case polynomials `F_p(z^m)` and `G_p(z^m)` with
/// `F_p = |p^{-1/2} sum_{k=1}^{p-1} z^k|^2` and `G_p = p^{-1} sum_{k=1}^{p-1} z^k`.
pub fn section6_polys(p: u64, dilation: &BigInt) -> Result<(SparseTrigPoly, SparseTrigPoly)> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("p = {p} must be at least 2")));
    }
    if !dilation.is_positive() {
        return Err(Error::InvalidArgument(format!("dilation {dilation} must be positive")));
    }
    let inv_p = BigRational::new(BigInt::one(), BigInt::from(p));
    let sum = SparseTrigPoly::from_real_terms((1..p).map(|k| (BigInt::from(k), BigRational::one())));
    let f = sum.clone().with_scale_sq(inv_p.clone()).modulus_squared();
    let g = sum.scale_by(&inv_p);
    Ok((f.dilate(dilation), g.dilate(dilation)))
}
