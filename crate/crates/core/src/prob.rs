//! Exact rational probabilities.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Signed exact rational, used for differences of probabilities.
pub type Rational = BigRational;

/// Builds a rational from machine integers.
pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Formats a rational with six significant digits.
pub fn decimal(r: &Rational) -> String {
    let x = r.to_f64().unwrap_or(f64::NAN);
    if x == 0.0 {
        return "0".to_string();
    }
    let s = format!("{:.5e}", x);
    // Re-render through f64 parsing so "4.00000e-1" becomes "0.4".
    let v: f64 = s.parse().unwrap_or(x);
    let mut out = format!("{}", v);
    if out.len() > 14 {
        out = s;
    }
    out
}

/// A probability held as an exact rational in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prob(Rational);

impl Prob {
    pub fn zero() -> Self {
        Prob(Rational::zero())
    }

    pub fn one() -> Self {
        Prob(Rational::one())
    }

    /// Returns `None` when `r` lies outside `[0, 1]`.
    pub fn new(r: Rational) -> Option<Self> {
        if r.is_negative() || r > Rational::one() {
            None
        } else {
            Some(Prob(r))
        }
    }

    /// `num / den` for counts; `den` must be nonzero and `num <= den`.
    pub fn from_counts(num: u64, den: u64) -> Self {
        assert!(den > 0 && num <= den, "invalid count ratio {num}/{den}");
        Prob(Rational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn value(&self) -> &Rational {
        &self.0
    }

    pub fn into_inner(self) -> Rational {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    /// Ratio of two probabilities; `None` if the denominator is zero.
    pub fn checked_div(&self, other: &Prob) -> Option<Prob> {
        if other.is_zero() {
            return None;
        }
        Prob::new(&self.0 / &other.0)
    }

    /// Exact difference, which may be negative.
    pub fn minus(&self, other: &Prob) -> Rational {
        &self.0 - &other.0
    }

    pub fn decimal(&self) -> String {
        decimal(&self.0)
    }
}

impl Default for Prob {
    fn default() -> Self {
        Prob::zero()
    }
}

impl Add for Prob {
    type Output = Prob;
    fn add(self, rhs: Prob) -> Prob {
        let sum = self.0 + rhs.0;
        debug_assert!(sum <= Rational::one(), "probability sum exceeds 1");
        Prob(sum)
    }
}

impl<'a> Add<&'a Prob> for Prob {
    type Output = Prob;
    fn add(self, rhs: &'a Prob) -> Prob {
        self + rhs.clone()
    }
}

impl Mul for Prob {
    type Output = Prob;
    fn mul(self, rhs: Prob) -> Prob {
        Prob(self.0 * rhs.0)
    }
}

impl<'a> Mul<&'a Prob> for &'a Prob {
    type Output = Prob;
    fn mul(self, rhs: &'a Prob) -> Prob {
        Prob(&self.0 * &rhs.0)
    }
}

impl Sum for Prob {
    fn sum<I: Iterator<Item = Prob>>(iter: I) -> Prob {
        iter.fold(Prob::zero(), |a, b| a + b)
    }
}

impl From<Prob> for Rational {
    fn from(p: Prob) -> Rational {
        p.0
    }
}

impl fmt::Display for Prob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for Prob {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let r = parse_rational(s)?;
        Prob::new(r).ok_or_else(|| format!("{s} is not a probability"))
    }
}

/// Parses `num/den` or a bare integer.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n: BigInt = n.parse().map_err(|_| format!("bad numerator in {s:?}"))?;
    let d: BigInt = d.parse().map_err(|_| format!("bad denominator in {s:?}"))?;
    if d.is_zero() {
        return Err(format!("zero denominator in {s:?}"));
    }
    Ok(Rational::new(n, d))
}

/// Renders a signed rational as `num/den`.
pub fn rational_string(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

impl Serialize for Prob {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Prob {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Serde adapter storing a [`Rational`] as a `"num/den"` string.
pub mod serde_rational {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rational_string(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}
