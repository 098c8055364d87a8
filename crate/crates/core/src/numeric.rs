//! Small numeric helpers shared by the modules.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::ToPrimitive;

pub fn big_to_f64(x: &BigInt) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn rational_to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `x mod n` in `0..n`, exact for arbitrary-precision `x`.
pub fn residue(x: &BigInt, n: usize) -> usize {
    x.mod_floor(&BigInt::from(n))
        .to_usize()
        .expect("residue fits in usize")
}

/// `exp(2 pi i r / n)` for `r = 0..n`.
pub fn twiddle_table(n: usize) -> Vec<num_complex::Complex64> {
    (0..n)
        .map(|r| num_complex::Complex64::from_polar(1.0, std::f64::consts::TAU * r as f64 / n as f64))
        .collect()
}

/// Pairwise (tree) summation; the result depends only on the slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean and standard error of the mean, with pairwise reductions.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Smallest power of two that is `>= x`, saturating at `2^63`.
pub fn next_pow2(x: &BigInt) -> u64 {
    match x.to_u64() {
        Some(v) if v <= 1 << 63 => v.max(1).next_power_of_two(),
        _ => 1 << 63,
    }
}
