use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

use riesz_core::construction::{all_geometries, sample_replica};
use riesz_core::singularity::{lemma34_gap, MaskedFunctional};
use riesz_core::spectral::{product_span, riesz_partial, GridEvaluator};
use riesz_core::tower::{build_tower, recursion_check_all};
use riesz_core::trigpoly::{build_pk, phi_of_distribution, real};
use riesz_core::{sample_realization, OffsetLaw, OrnsteinParams, PkForm, SpacerScale};

fn big(v: i64) -> BigInt {
    BigInt::from(v)
}

/// Small construction: cuts in 2..=max_cut, even spacings in 0..=max_t.
fn small_params(max_stages: usize, max_cut: u64, max_t: i64) -> impl Strategy<Value = OrnsteinParams> {
    (1..=max_stages)
        .prop_flat_map(move |k| {
            (
                prop::collection::vec(2..=max_cut, k),
                prop::collection::vec(0..=max_t / 2, k),
                prop::collection::vec(0..=4i64, k),
                prop::bool::ANY,
            )
        })
        .prop_map(|(cuts, half, tops, uniform)| {
            let t: Vec<BigInt> = half.iter().map(|h| big(2 * h)).collect();
            let law = if uniform { OffsetLaw::Uniform } else { OffsetLaw::PointMass(big(0)) };
            OrnsteinParams::new(cuts, SpacerScale::Explicit(t), tops.into_iter().map(big).collect(), vec![law])
                .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heights_follow_the_recursion(params in small_params(5, 6, 8)) {
        for k in 0..params.stages() {
            let next = BigInt::from(params.cut(k)) * (params.height(k) + params.spacing(k)) + params.top_spacer(k);
            prop_assert_eq!(params.height(k + 1), &next);
        }
    }

    #[test]
    fn forms_are_mirror_images(params in small_params(4, 6, 8), seed in any::<u64>()) {
        let omega = sample_realization(&params, seed);
        let eval = GridEvaluator::new(1 << 10);
        for g in all_geometries(&params, &omega).unwrap() {
            let spacer = build_pk(&g, PkForm::Spacer);
            let ornstein = build_pk(&g, PkForm::Ornstein);
            prop_assert_eq!(&spacer, &ornstein.mirror());
            let a = eval.modulus(&spacer);
            let b = eval.modulus(&ornstein);
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(diff < 1e-12);
        }
    }

    #[test]
    fn autocorrelation_is_normalized_and_flat(params in small_params(4, 6, 8), seed in any::<u64>()) {
        let omega = sample_realization(&params, seed);
        for g in all_geometries(&params, &omega).unwrap() {
            let c = build_pk(&g, PkForm::Ornstein).modulus_squared();
            prop_assert_eq!(c.coeff(&BigInt::zero()).unwrap(), real(BigRational::one()));
            let h: i64 = g.height.clone().try_into().unwrap();
            for n in 1..h {
                prop_assert!(c.raw_coeff(&big(n)).is_none());
                prop_assert!(c.raw_coeff(&big(-n)).is_none());
            }
            prop_assert!(c.is_hermitian());
        }
    }

    #[test]
    fn tower_recursion_is_exact(params in small_params(3, 3, 4), seed in any::<u64>()) {
        let omega = sample_realization(&params, seed);
        let tower = build_tower(&params, &omega, params.stages()).unwrap();
        for r in recursion_check_all(&tower).unwrap() {
            prop_assert!(r.residual_is_zero, "stage {} residual {}", r.stage, r.residual);
        }
    }

    #[test]
    fn phi_has_unit_mass(weights in prop::collection::vec(1u32..20, 1..6)) {
        let total: u32 = weights.iter().sum();
        let table: Vec<(BigInt, BigRational)> = weights
            .iter()
            .enumerate()
            .map(|(i, w)| (big(i as i64 - 2), BigRational::new(big(*w as i64), big(total as i64))))
            .collect();
        let params = OrnsteinParams::new(
            vec![2],
            SpacerScale::Explicit(vec![big(6)]),
            vec![],
            vec![OffsetLaw::Table(table)],
        )
        .unwrap();
        let phi = phi_of_distribution(params.law(0), 0).unwrap();
        prop_assert!(phi.is_nonnegative());
        prop_assert_eq!(phi.coeff_sum(), BigRational::one());
    }

    #[test]
    fn gap_inequality_on_partial_products(params in small_params(4, 4, 4), seed in any::<u64>(), eps in 0.0f64..0.9) {
        let omega = sample_replica(&params, seed, 1);
        let geoms = all_geometries(&params, &omega).unwrap();
        let (last, earlier) = geoms.split_last().unwrap();
        let span = product_span(&geoms);
        let n = (riesz_core::numeric::next_pow2(&(2 * span + 1)) as usize).max(64);
        let q = riesz_partial(earlier, n).root;
        let phi = phi_of_distribution(params.law(0), 0).unwrap();
        let mask = MaskedFunctional::f_epsilon(&phi, eps, n);
        let gap = lemma34_gap(&q, &build_pk(last, PkForm::Ornstein), &mask).unwrap();
        prop_assert!(gap.slack >= -1e-8, "slack {}", gap.slack);
    }

    #[test]
    fn replicas_are_reproducible(params in small_params(4, 6, 8), seed in any::<u64>(), r in 0u64..16) {
        prop_assert_eq!(sample_replica(&params, seed, r), sample_replica(&params, seed, r));
    }
}

#[test]
fn grid_mean_of_squared_modulus_is_one() {
    let params = OrnsteinParams::new(
        vec![3, 4, 2],
        SpacerScale::Explicit(vec![big(2), big(4), big(2)]),
        vec![big(1), big(0), big(3)],
        vec![OffsetLaw::Uniform],
    )
    .unwrap();
    let omega = sample_realization(&params, 11);
    let geoms = all_geometries(&params, &omega).unwrap();
    let n = riesz_core::numeric::next_pow2(&(2 * product_span(&geoms) + 1)) as usize;
    let partial = riesz_partial(&geoms, n);
    assert!(!partial.aliasing_risk);
    assert!((partial.squared_mean - 1.0).abs() < 1e-12);
}
