//! Exact cutting-and-stacking towers.
//!
//! The stage-`K` column is built interval by interval with rational
//! endpoints. `T` maps each level onto the next one and is undefined on the
//! top level. Correlations of the normalized base indicators are read off the
//! geometry, independently of the polynomial route, and the recursion
//! `d sigma_j = |P_j|^2 d sigma_{j+1}` is checked coefficient by coefficient.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::construction::{OrnsteinParams, SpacerRealization, StageGeometry, spacers_from_realization};
use crate::error::{Error, Result};
use crate::spectral::{CorrelationSeq, Provenance};
use crate::trigpoly::{build_pk, real, PkForm};

/// Largest number of levels a tower may hold.
pub const MAX_LEVELS: usize = 1 << 20;

/// Half-open interval `[lo, hi)` with rational endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    pub lo: BigRational,
    pub hi: BigRational,
}

impl Interval {
    pub fn new(lo: BigRational, hi: BigRational) -> Self {
        debug_assert!(lo < hi);
        Self { lo, hi }
    }

    pub fn width(&self) -> BigRational {
        &self.hi - &self.lo
    }

    /// Length of the intersection with `other`.
    pub fn overlap(&self, other: &Interval) -> BigRational {
        let lo = (&self.lo).max(&other.lo);
        let hi = (&self.hi).min(&other.hi);
        if lo < hi {
            hi - lo
        } else {
            BigRational::zero()
        }
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Splits into `parts` equal consecutive pieces.
    fn split(&self, parts: u64) -> Vec<Interval> {
        let w = self.width() / BigInt::from(parts);
        (0..parts)
            .map(|c| {
                let lo = &self.lo + &w * BigInt::from(c);
                let hi = &lo + &w;
                Interval { lo, hi }
            })
            .collect()
    }
}

/// Stage-`K` column of a rank-one construction.
#[derive(Debug, Clone)]
pub struct Tower {
    stage: usize,
    levels: Vec<Interval>,
    geometries: Vec<StageGeometry>,
    /// `h_0, ..., h_K`.
    heights: Vec<usize>,
    /// Width of `B_j` for `j = 0..=K`.
    base_widths: Vec<BigRational>,
    total_mass: BigRational,
    /// For each `j`, the stage-`K` levels lying inside `B_j`, increasing.
    base_levels: Vec<Vec<usize>>,
    /// Every level has width `w_K`; level `i` is `[slot_i w_K, (slot_i + 1) w_K)`.
    slots: Vec<usize>,
}

/// Builds the tower after the first `stages` cutting steps of a realization.
pub fn build_tower(params: &OrnsteinParams, omega: &SpacerRealization, stages: usize) -> Result<Tower> {
    if stages > params.stages() {
        return Err(Error::StageOutOfRange { stage: stages, stages: params.stages() });
    }
    let final_height = params.height(stages);
    let fits = final_height.to_usize().filter(|&h| h <= MAX_LEVELS);
    if fits.is_none() {
        return Err(Error::ResourceLimit(format!(
            "tower of height {final_height} exceeds {MAX_LEVELS} levels"
        )));
    }

    let geometries = (0..stages)
        .map(|k| spacers_from_realization(params, omega, k))
        .collect::<Result<Vec<_>>>()?;

    let mut levels = vec![Interval::new(BigRational::zero(), BigRational::one())];
    let mut total_mass = BigRational::one();
    let mut width = BigRational::one();
    let mut base_widths = vec![width.clone()];
    for g in &geometries {
        let pieces: Vec<Vec<Interval>> = levels.iter().map(|l| l.split(g.cut)).collect();
        width /= BigInt::from(g.cut);
        let mut next = Vec::new();
        for (column, spacers) in g.spacers.iter().enumerate() {
            next.extend(pieces.iter().map(|p| p[column].clone()));
            let count = spacers.to_usize().expect("spacer count fits in usize");
            for _ in 0..count {
                let lo = total_mass.clone();
                total_mass = &total_mass + &width;
                next.push(Interval::new(lo, total_mass.clone()));
            }
        }
        debug_assert_eq!(BigInt::from(next.len()), g.next_height());
        levels = next;
        base_widths.push(width.clone());
    }

    let heights = params.heights()[..=stages]
        .iter()
        .map(|h| h.to_usize().expect("checked above"))
        .collect();

    // B_j is the leftmost subinterval [0, w_j) of the unit interval. Every
    // stage-K level either lies inside it or misses it.
    let mut base_levels = Vec::with_capacity(stages + 1);
    for w in &base_widths {
        let base = Interval::new(BigRational::zero(), w.clone());
        let mut inside = Vec::new();
        for (i, level) in levels.iter().enumerate() {
            if base.contains(level) {
                inside.push(i);
            } else if !base.overlap(level).is_zero() {
                return Err(Error::InvalidArgument(format!(
                    "level {i} straddles the boundary of a base"
                )));
            }
        }
        base_levels.push(inside);
    }

    let slots = levels
        .iter()
        .map(|l| {
            let slot = &l.lo / &width;
            debug_assert!(slot.is_integer() && l.width() == width);
            slot.to_integer().to_usize().expect("slot below the height")
        })
        .collect();

    Ok(Tower { stage: stages, levels, geometries, heights, base_widths, total_mass, base_levels, slots })
}

/// Exact-rational correlation report of one tower query.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RecursionReport {
    pub stage: usize,
    pub window: usize,
    /// `max_n |sigma_j(n) - sum_m c_j(m) sigma_{j+1}(n - m)|`, as a fraction.
    pub residual: String,
    pub residual_is_zero: bool,
    pub checked: usize,
}

impl Tower {
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn height(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Interval] {
        &self.levels
    }

    pub fn heights(&self) -> &[usize] {
        &self.heights
    }

    /// Width `nu(B_j)`.
    pub fn base_width(&self, j: usize) -> &BigRational {
        &self.base_widths[j]
    }

    /// Total measure, including spacers.
    pub fn total_mass(&self) -> &BigRational {
        &self.total_mass
    }

    pub fn spacer_mass(&self) -> BigRational {
        &self.total_mass - BigRational::one()
    }

    pub fn geometry(&self, j: usize) -> &StageGeometry {
        &self.geometries[j]
    }

    /// Stage-`K` levels making up `B_j`.
    pub fn base_levels(&self, j: usize) -> &[usize] {
        &self.base_levels[j]
    }

    /// `T^n` applied to a level, if it stays inside the column.
    fn shift(&self, level: usize, n: usize) -> Option<&Interval> {
        self.levels.get(level + n)
    }

    /// Largest `n` for which `T^n` is defined on all of `B_j`.
    pub fn max_window(&self, j: usize) -> Result<usize> {
        if j > self.stage {
            return Err(Error::StageOutOfRange { stage: j, stages: self.stage + 1 });
        }
        let top = *self.base_levels[j].last().expect("bases are nonempty");
        Ok(self.height() - 1 - top)
    }

    /// The union `B_{j+1} ∪ T^{h_j + s_j(1)} B_{j+1} ∪ ...` as measured
    /// against `B_j`: returns `nu(B_j ∩ union)` and `nu(union)`.
    pub fn base_reconstruction(&self, j: usize) -> Result<(BigRational, BigRational)> {
        if j >= self.stage {
            return Err(Error::StageOutOfRange { stage: j, stages: self.stage });
        }
        let g = &self.geometries[j];
        let base = Interval::new(BigRational::zero(), self.base_widths[j].clone());
        let mut inside = BigRational::zero();
        let mut total = BigRational::zero();
        for copy in 0..g.cut as usize {
            let shift = g.copy_offset(copy).to_usize().expect("offset fits");
            for &level in &self.base_levels[j + 1] {
                let image = self
                    .shift(level, shift)
                    .ok_or_else(|| Error::InvalidArgument("copy leaves the column".into()))?;
                inside += base.overlap(image);
                total += image.width();
            }
        }
        Ok((inside, total))
    }

    /// `sigma_j(n) = nu(B_j ∩ T^{-n} B_j) / nu(B_j)` for `|n| <= window`.
    pub fn correlation(&self, j: usize, window: usize) -> Result<CorrelationSeq> {
        let max = self.max_window(j)?;
        if window > max {
            return Err(Error::WindowTooLarge { stage: j, requested: window, max });
        }
        let denom = BigInt::from(self.base_levels[j].len());
        let positive: Vec<BigRational> = self
            .hits(j, window)
            .into_iter()
            .map(|hit| BigRational::new(BigInt::from(hit), denom.clone()))
            .collect();
        let values = positive[1..]
            .iter()
            .rev()
            .chain(positive.iter())
            .map(|v| real(v.clone()))
            .collect();
        Ok(CorrelationSeq::exact(window, values, Provenance::Tower))
    }

    /// `|B_j| nu(B_j ∩ T^{-n} B_j) / nu(B_j)` for `n = 0..=window`: `B_j` is
    /// made of the first `|B_j|` slots, so overlaps are counts.
    fn hits(&self, j: usize, window: usize) -> Vec<usize> {
        let size = self.base_levels[j].len();
        (0..=window)
            .map(|n| self.base_levels[j].iter().filter(|&&level| self.slots[level + n] < size).count())
            .collect()
    }

    /// Checks `sigma_j(n) = sum_m c_j(m) sigma_{j+1}(n - m)` on `|n| <= window`,
    /// where `c_j` are the coefficients of `|P_j|^2`.
    pub fn recursion_check(&self, j: usize, window: usize) -> Result<RecursionReport> {
        if j >= self.stage {
            return Err(Error::StageOutOfRange { stage: j, stages: self.stage });
        }
        let c = build_pk(&self.geometries[j], PkForm::Ornstein).modulus_squared();
        let span = c.span().to_usize().expect("span fits");
        let next_max = self.max_window(j + 1)?;
        let max = self.max_window(j)?.min(next_max.saturating_sub(span));
        if window > max {
            return Err(Error::WindowTooLarge { stage: j, requested: window, max });
        }
        // Everything is brought to one denominator `d`; sums are exact in i128.
        let too_big = || Error::ResourceLimit(format!("stage {j} recursion overflows i128"));
        let terms: Vec<(i64, BigRational, BigRational)> = c
            .frequencies()
            .map(|f| {
                let v = c.coeff(f).expect("listed frequency");
                (f.to_i64().expect("span fits"), v.re, v.im)
            })
            .collect();
        let l = terms
            .iter()
            .fold(BigInt::one(), |acc, (_, re, im)| acc.lcm(re.denom()).lcm(im.denom()));
        let scaled = |x: &BigRational| (x * &l).to_integer().to_i128();
        let coeffs: Vec<(i64, i128, i128)> = terms
            .iter()
            .map(|(m, re, im)| Some((*m, scaled(re)?, scaled(im)?)))
            .collect::<Option<_>>()
            .ok_or_else(too_big)?;
        let size_j = BigInt::from(self.base_levels[j].len());
        let size_next = BigInt::from(self.base_levels[j + 1].len()) * &l;
        let d = size_j.lcm(&size_next);
        let lhs_factor = (&d / &size_j).to_i128().ok_or_else(too_big)?;
        let rhs_factor = (&d / &size_next).to_i128().ok_or_else(too_big)?;

        let lhs = self.hits(j, window);
        let next = self.hits(j + 1, window + span);
        let mut residual: i128 = 0;
        for n in -(window as i64)..=window as i64 {
            let (mut re, mut im) = (0i128, 0i128);
            for &(m, a, b) in &coeffs {
                let hit = next[(n - m).unsigned_abs() as usize] as i128;
                re += a * hit;
                im += b * hit;
            }
            let diff_re = lhs[n.unsigned_abs() as usize] as i128 * lhs_factor - re * rhs_factor;
            residual = residual.max(diff_re.abs()).max((im * rhs_factor).abs());
        }
        let residual = BigRational::new(BigInt::from(residual), d);
        Ok(RecursionReport {
            stage: j,
            window,
            residual_is_zero: residual.is_zero(),
            residual: residual.to_string(),
            checked: 2 * window + 1,
        })
    }

    /// Full valid window for `recursion_check` at stage `j`.
    pub fn recursion_window(&self, j: usize) -> Result<usize> {
        if j >= self.stage {
            return Err(Error::StageOutOfRange { stage: j, stages: self.stage });
        }
        let c = build_pk(&self.geometries[j], PkForm::Ornstein).modulus_squared();
        let span = c.span().to_usize().expect("span fits");
        Ok(self.max_window(j)?.min(self.max_window(j + 1)?.saturating_sub(span)))
    }

    /// JSON-friendly dump of the levels as rational strings.
    pub fn dump(&self) -> TowerDump {
        TowerDump {
            stage: self.stage,
            height: self.height(),
            total_mass: self.total_mass.to_string(),
            base_widths: self.base_widths.iter().map(|w| w.to_string()).collect(),
            levels: self.levels.iter().map(|l| [l.lo.to_string(), l.hi.to_string()]).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TowerDump {
    pub stage: usize,
    pub height: usize,
    pub total_mass: String,
    pub base_widths: Vec<String>,
    pub levels: Vec<[String; 2]>,
}

/// Runs `recursion_check` on the full valid window of every stage `j < K`.
pub fn recursion_check_all(tower: &Tower) -> Result<Vec<RecursionReport>> {
    (0..tower.stage())
        .map(|j| tower.recursion_check(j, tower.recursion_window(j)?))
        .collect()
}

/// Whether every value of a correlation sequence lies in `[0, 1]` and
/// vanishes on `0 < |n| < h`.
pub fn correlation_window_is_flat(seq: &CorrelationSeq, h: usize) -> bool {
    let w = seq.window as i64;
    (-w..=w).all(|n| {
        let v = seq.exact_at(n).unwrap();
        let in_range = !v.re.is_negative() && v.re <= BigRational::one() && v.im.is_zero();
        let flat = n == 0 || n.unsigned_abs() as usize >= h || v.re.is_zero();
        in_range && flat
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{sample_realization, OffsetLaw, SpacerScale};

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(big(n), big(d))
    }

    fn dyadic(stages: usize) -> (OrnsteinParams, SpacerRealization) {
        let params = OrnsteinParams::new(
            vec![2; stages],
            SpacerScale::Explicit(vec![big(0); stages]),
            vec![],
            vec![OffsetLaw::PointMass(big(0))],
        )
        .unwrap();
        let omega = sample_realization(&params, 0);
        (params, omega)
    }

    #[test]
    fn dyadic_two_stage_tower() {
        let (params, omega) = dyadic(2);
        let t = build_tower(&params, &omega, 2).unwrap();
        assert_eq!(t.height(), 4);
        assert!(t.levels().iter().all(|l| l.width() == rat(1, 4)));
        assert_eq!(t.total_mass(), &rat(1, 1));
    }

    #[test]
    fn one_stage_with_spacers() {
        let params = OrnsteinParams::new(
            vec![2],
            SpacerScale::Explicit(vec![big(2)]),
            vec![big(1)],
            vec![OffsetLaw::Uniform],
        )
        .unwrap();
        let omega = SpacerRealization::from_offsets(&params, vec![vec![big(0)]]).unwrap();
        let t = build_tower(&params, &omega, 1).unwrap();
        assert_eq!(t.height(), 7);
        assert_eq!(t.base_width(1), &rat(1, 2));
        assert_eq!(t.geometry(0).spacers, vec![big(2), big(3)]);
        assert_eq!(t.spacer_mass(), rat(5, 2));
        assert_eq!(t.total_mass(), &rat(7, 2));
    }

    #[test]
    fn base_reconstruction_is_a_partition() {
        let params = OrnsteinParams::new(
            vec![3, 2],
            SpacerScale::Explicit(vec![big(2), big(4)]),
            vec![big(1), big(2)],
            vec![OffsetLaw::Uniform],
        )
        .unwrap();
        let omega = sample_realization(&params, 5);
        let t = build_tower(&params, &omega, 2).unwrap();
        for j in 0..2 {
            let (inside, total) = t.base_reconstruction(j).unwrap();
            assert_eq!(inside, *t.base_width(j));
            assert_eq!(total, *t.base_width(j));
        }
    }

    #[test]
    fn correlation_at_zero_is_one() {
        let (params, omega) = dyadic(4);
        let t = build_tower(&params, &omega, 4).unwrap();
        for j in 0..=4 {
            let c = t.correlation(j, 0).unwrap();
            assert_eq!(c.exact_at(0).unwrap(), &real(rat(1, 1)));
        }
    }

    #[test]
    fn dyadic_lag_one_vanishes_at_stage_one() {
        let (params, omega) = dyadic(3);
        let t = build_tower(&params, &omega, 3).unwrap();
        let c = t.correlation(1, 1).unwrap();
        assert_eq!(c.exact_at(1).unwrap(), &real(rat(0, 1)));
    }

    #[test]
    fn window_past_the_top_is_rejected() {
        let (params, omega) = dyadic(3);
        let t = build_tower(&params, &omega, 3).unwrap();
        assert_eq!(t.max_window(0).unwrap(), 0);
        assert!(matches!(t.correlation(0, 1), Err(Error::WindowTooLarge { .. })));
    }

    #[test]
    fn dyadic_recursion_is_exact() {
        let (params, omega) = dyadic(5);
        let t = build_tower(&params, &omega, 5).unwrap();
        for r in recursion_check_all(&t).unwrap() {
            assert!(r.residual_is_zero, "stage {}: {}", r.stage, r.residual);
        }
    }

    #[test]
    fn single_stage_recursion() {
        let (params, omega) = dyadic(1);
        let t = build_tower(&params, &omega, 1).unwrap();
        let r = tower_zero_window(&t);
        assert!(r.residual_is_zero);
    }

    fn tower_zero_window(t: &Tower) -> RecursionReport {
        t.recursion_check(0, 0).unwrap()
    }

    #[test]
    fn oversized_tower_is_a_resource_error() {
        let params = OrnsteinParams::new(
            vec![1 << 12, 1 << 12],
            SpacerScale::Explicit(vec![big(0), big(0)]),
            vec![],
            vec![OffsetLaw::PointMass(big(0))],
        )
        .unwrap();
        let omega = sample_realization(&params, 0);
        assert!(matches!(build_tower(&params, &omega, 2), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn slot_counts_match_interval_overlaps() {
        let params = OrnsteinParams::new(
            vec![3, 2, 4],
            SpacerScale::Explicit(vec![big(2), big(4), big(2)]),
            vec![big(1), big(0), big(2)],
            vec![OffsetLaw::Uniform],
        )
        .unwrap();
        let omega = sample_realization(&params, 9);
        let t = build_tower(&params, &omega, 3).unwrap();
        for j in 0..=3 {
            let window = t.max_window(j).unwrap();
            let seq = t.correlation(j, window).unwrap();
            let base = Interval::new(BigRational::zero(), t.base_width(j).clone());
            for n in 0..=window {
                let direct: BigRational =
                    t.base_levels(j).iter().map(|&l| base.overlap(&t.levels()[l + n])).sum::<BigRational>()
                        / t.base_width(j);
                assert_eq!(seq.exact_at(n as i64).unwrap().re, direct, "stage {j} lag {n}");
            }
        }
    }

    #[test]
    fn mismatched_geometry_leaves_a_residual() {
        let params = OrnsteinParams::new(
            vec![3, 2],
            SpacerScale::Explicit(vec![big(4), big(2)]),
            vec![],
            vec![OffsetLaw::Uniform],
        )
        .unwrap();
        let omega = SpacerRealization::from_offsets(&params, vec![vec![big(-2), big(1)], vec![big(0)]]).unwrap();
        let mut t = build_tower(&params, &omega, 2).unwrap();
        t.geometries[0] = StageGeometry::new(&params, 0, &[big(2), big(-1)]).unwrap();
        let r = t.recursion_check(0, t.recursion_window(0).unwrap()).unwrap();
        assert!(!r.residual_is_zero);
    }
}
