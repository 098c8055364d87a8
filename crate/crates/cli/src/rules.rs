//! Sequence rules in `k`.
//!
//! Accepted forms, with integer constants and optional spaces:
//!
//! ```text
//! c            constant
//! a*k+b        affine (a, b optional: "k", "3k", "k-1", "2*k+4")
//! a*b^k+c      exponential (a, c optional: "2^k", "3*2^k", "2^k-1")
//! ```

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::Pow;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed rule {rule:?}: {reason}")]
pub struct RuleError {
    pub rule: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Rule {
    /// `a k + b`.
    Affine { a: i64, b: i64 },
    /// `a base^k + c`.
    Exponential { a: i64, base: i64, c: i64 },
}

impl Rule {
    pub fn eval(&self, k: usize) -> BigInt {
        match *self {
            Rule::Affine { a, b } => BigInt::from(a) * BigInt::from(k) + b,
            Rule::Exponential { a, base, c } => BigInt::from(a) * Pow::pow(BigInt::from(base), k) + c,
        }
    }

    pub fn take(&self, n: usize) -> Vec<BigInt> {
        (0..n).map(|k| self.eval(k)).collect()
    }
}

fn int(s: &str, rule: &str, reason: &'static str) -> Result<i64, RuleError> {
    s.parse().map_err(|_| RuleError { rule: rule.to_string(), reason })
}

/// Splits `body+c` / `body-c` at the last sign that is not leading.
fn split_offset<'a>(s: &'a str, rule: &str) -> Result<(&'a str, i64), RuleError> {
    match s.char_indices().skip(1).filter(|(_, ch)| *ch == '+' || *ch == '-').last() {
        Some((i, _)) => Ok((&s[..i], int(&s[i..].replace('+', ""), rule, "bad constant term")?)),
        None => Ok((s, 0)),
    }
}

/// Leading coefficient of `a*x`, `ax`, `-x` or `x`.
fn coefficient(s: &str, rule: &str) -> Result<i64, RuleError> {
    let s = s.strip_suffix('*').unwrap_or(s);
    match s {
        "" | "+" => Ok(1),
        "-" => Ok(-1),
        _ => int(s, rule, "bad coefficient"),
    }
}

impl FromStr for Rule {
    type Err = RuleError;

    fn from_str(rule: &str) -> Result<Self, Self::Err> {
        let s: String = rule.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err(RuleError { rule: rule.to_string(), reason: "empty rule" });
        }
        if let Ok(c) = s.parse::<i64>() {
            return Ok(Rule::Affine { a: 0, b: c });
        }
        if let Some(pos) = s.find("^k") {
            let (head, rest) = s.split_at(pos);
            let tail = &rest[2..];
            let c = if tail.is_empty() { 0 } else { int(&tail.replace('+', ""), rule, "bad constant term")? };
            let split = head.rfind(|ch: char| !ch.is_ascii_digit()).map(|i| i + 1).unwrap_or(0);
            let (coef, base) = head.split_at(split);
            let base = int(base, rule, "bad exponential base")?;
            return Ok(Rule::Exponential { a: coefficient(coef, rule)?, base, c });
        }
        let (body, b) = split_offset(&s, rule)?;
        let Some(coef) = body.strip_suffix('k') else {
            return Err(RuleError { rule: rule.to_string(), reason: "expected an affine or exponential form in k" });
        };
        Ok(Rule::Affine { a: coefficient(coef, rule)?, b })
    }
}

impl TryFrom<String> for Rule {
    type Error = RuleError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Rule> for String {
    fn from(r: Rule) -> Self {
        r.to_string()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Rule::Affine { a: 0, b } => write!(f, "{b}"),
            Rule::Affine { a, b } => write!(f, "{a}*k{b:+}"),
            Rule::Exponential { a, base, c } => write!(f, "{a}*{base}^k{c:+}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vals(rule: &str, n: usize) -> Vec<i64> {
        rule.parse::<Rule>().unwrap().take(n).iter().map(|v| v.try_into().unwrap()).collect()
    }

    #[test]
    fn constants_and_affine() {
        assert_eq!(vals("2", 3), vec![2, 2, 2]);
        assert_eq!(vals("k", 3), vec![0, 1, 2]);
        assert_eq!(vals("k + 3", 3), vec![3, 4, 5]);
        assert_eq!(vals("2*k-1", 3), vec![-1, 1, 3]);
        assert_eq!(vals("4k", 3), vec![0, 4, 8]);
        assert_eq!(vals("-k+10", 2), vec![10, 9]);
    }

    #[test]
    fn exponential() {
        assert_eq!(vals("2^k", 4), vec![1, 2, 4, 8]);
        assert_eq!(vals("3*2^k", 3), vec![3, 6, 12]);
        assert_eq!(vals("2^k - 1", 3), vec![0, 1, 3]);
        assert_eq!(vals("2 * 10^k + 4", 2), vec![6, 24]);
    }

    #[test]
    fn big_values_do_not_overflow() {
        let r: Rule = "2^k".parse().unwrap();
        assert_eq!(r.eval(200), BigInt::from(2).pow(200u32));
    }

    #[test]
    fn malformed() {
        for bad in ["", "k^2", "x+1", "2**k", "k+", "(k+3)^2", "h_{k-1}"] {
            assert!(bad.parse::<Rule>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn display_round_trips(a in -50i64..50, b in -50i64..50, base in 2i64..9) {
            for r in [Rule::Affine { a, b }, Rule::Exponential { a, base, c: b }] {
                let back: Rule = r.to_string().parse().unwrap();
                prop_assert_eq!(back.take(6), r.take(6));
            }
        }
    }
}
