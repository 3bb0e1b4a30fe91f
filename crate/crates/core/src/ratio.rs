//! Exact rational compression ratios.
//!
//! Ratios are kept as reduced fractions so that the budget identity
//! `k * layer_ratio == n_layers * overall_ratio` holds exactly, and rank
//! flooring is done in integer arithmetic.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio as Rational;
use num_traits::{CheckedDiv, CheckedMul, Signed};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A non-negative rational number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ratio(Rational<i64>);

impl Ratio {
    pub const ZERO: Ratio = Ratio(Rational::new_raw(0, 1));
    pub const ONE: Ratio = Ratio(Rational::new_raw(1, 1));

    pub fn new(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::InvalidArgument("ratio with zero denominator".into()));
        }
        let r = Rational::new(numer, denom);
        if r < Rational::from_integer(0) {
            return Err(Error::InvalidArgument(format!("negative ratio {numer}/{denom}")));
        }
        Ok(Ratio(r))
    }

    pub fn from_integer(n: i64) -> Self {
        Ratio(Rational::from_integer(n))
    }

    /// Closest fraction with denominator at most 10^6.
    pub fn approximate(x: f64) -> Result<Self> {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidArgument(format!("ratio {x} is not a finite non-negative number")));
        }
        let r = Rational::<i64>::approximate_float(x)
            .ok_or_else(|| Error::InvalidArgument(format!("cannot represent {x} as a ratio")))?;
        // approximate_float may produce huge denominators; cap them.
        let capped = limit_denominator(r, 1_000_000);
        Ok(Ratio(capped))
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_zero(&self) -> bool {
        self.numer() == 0
    }

    pub fn checked_mul(&self, other: Ratio) -> Option<Ratio> {
        self.0.checked_mul(&other.0).map(Ratio)
    }

    pub fn checked_div(&self, other: Ratio) -> Option<Ratio> {
        if other.is_zero() {
            return None;
        }
        self.0.checked_div(&other.0).map(Ratio)
    }

    pub fn mul_int(&self, k: usize) -> Option<Ratio> {
        self.checked_mul(Ratio::from_integer(i64::try_from(k).ok()?))
    }

    pub fn div_int(&self, k: usize) -> Option<Ratio> {
        self.checked_div(Ratio::from_integer(i64::try_from(k).ok()?))
    }

    /// `1 - self`, or `None` when `self > 1`.
    pub fn complement(&self) -> Option<Ratio> {
        if *self > Ratio::ONE {
            None
        } else {
            Some(Ratio(Rational::from_integer(1) - self.0))
        }
    }
}

/// Best rational approximation with bounded denominator (Stern-Brocot walk
/// along the continued fraction of `r`).
fn limit_denominator(r: Rational<i64>, max_denom: i64) -> Rational<i64> {
    if *r.denom() <= max_denom {
        return r;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    let (mut n, mut d) = (*r.numer(), *r.denom());
    loop {
        let a = n / d;
        let q2 = q0 + a * q1;
        if q2 > max_denom {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p0 + a * p1, q2);
        (n, d) = (d, n - a * d);
        if d == 0 {
            break;
        }
    }
    let k = (max_denom - q0) / q1;
    let bound1 = Rational::new(p0 + k * p1, q0 + k * q1);
    let bound2 = Rational::new(p1, q1);
    if (bound2 - r).abs() <= (bound1 - r).abs() {
        bound2
    } else {
        bound1
    }
}

impl FromStr for Ratio {
    type Err = Error;

    /// Accepts `p/q`, an exact decimal such as `0.2`, or a percentage such
    /// as `20%`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("cannot parse ratio {s:?}"));
        if let Some(pct) = s.strip_suffix('%') {
            let r: Ratio = pct.parse()?;
            return r.div_int(100).ok_or_else(bad);
        }
        if let Some((p, q)) = s.split_once('/') {
            let p: i64 = p.trim().parse().map_err(|_| bad())?;
            let q: i64 = q.trim().parse().map_err(|_| bad())?;
            return Ratio::new(p, q);
        }
        let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        let all_digits = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(int_part) || !all_digits(frac_part) || frac_part.len() > 15 {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
        let denom = 10i64.checked_pow(frac_part.len() as u32).ok_or_else(bad)?;
        Ratio::new(numer, denom)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!("0.2".parse::<Ratio>().unwrap(), Ratio::new(1, 5).unwrap());
        assert_eq!("0.25".parse::<Ratio>().unwrap(), Ratio::new(1, 4).unwrap());
        assert_eq!(".5".parse::<Ratio>().unwrap(), Ratio::new(1, 2).unwrap());
        assert_eq!("3".parse::<Ratio>().unwrap(), Ratio::from_integer(3));
        assert_eq!("20%".parse::<Ratio>().unwrap(), Ratio::new(1, 5).unwrap());
        assert_eq!("8/5".parse::<Ratio>().unwrap(), Ratio::new(16, 10).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        for s in ["", ".", "-0.2", "1e-3", "abc", "1/0", "0.2.3"] {
            assert!(s.parse::<Ratio>().is_err(), "{s:?} parsed");
        }
    }

    #[test]
    fn approximate_recovers_short_decimals() {
        assert_eq!(Ratio::approximate(0.2).unwrap(), Ratio::new(1, 5).unwrap());
        assert_eq!(Ratio::approximate(0.3).unwrap(), Ratio::new(3, 10).unwrap());
        assert_eq!(Ratio::approximate(0.05).unwrap(), Ratio::new(1, 20).unwrap());
    }

    #[test]
    fn budget_identity_is_exact() {
        let overall = Ratio::new(1, 5).unwrap();
        for k in 1..40 {
            let layer = overall.mul_int(32).unwrap().div_int(k).unwrap();
            assert_eq!(layer.mul_int(k).unwrap(), overall.mul_int(32).unwrap());
        }
    }

    #[test]
    fn serde_as_string() {
        let r = Ratio::new(8, 5).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, "\"8/5\"");
        assert_eq!(serde_json::from_str::<Ratio>(&json).unwrap(), r);
    }
}
