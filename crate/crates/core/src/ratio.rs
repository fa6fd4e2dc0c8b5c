//! Exact rational arithmetic for money and service-level fractions.
//!
//! Cost and quality figures are computed as `BigRational` values and only
//! rounded at presentation time, so derived numbers like `$0.61/day` never
//! accumulate float error. [`Fraction`] wraps a rational with a stable text
//! form for JSON documents.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Parse decimal text (`-12.305`) into an exact rational.
pub fn rational_from_decimal(s: &str) -> Result<BigRational> {
    let t = s.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    let digits_ok =
        !(int_part.is_empty() && frac_part.is_empty()) && int_part.chars().all(|c| c.is_ascii_digit()) && frac_part.chars().all(|c| c.is_ascii_digit());
    if !digits_ok {
        return Err(Error::InvalidArgument(format!("not a decimal number: {s:?}")));
    }
    let mut num: BigInt = if int_part.is_empty() { BigInt::zero() } else { int_part.parse().unwrap() };
    let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
    num *= &scale;
    if !frac_part.is_empty() {
        num += frac_part.parse::<BigInt>().unwrap();
    }
    if neg {
        num = -num;
    }
    Ok(BigRational::new(num, scale))
}

/// Exact rational from a float, via its shortest round-trip decimal form.
/// This reads `0.1` as 1/10, matching what the user wrote in JSON.
pub fn rational_from_f64(v: f64) -> Result<BigRational> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!("not a finite number: {v}")));
    }
    rational_from_decimal(&v.to_string())
}

/// Exact decimal expansion when the reduced denominator is `2^a * 5^b`,
/// else `None`.
pub fn rational_to_decimal(r: &BigRational) -> Option<String> {
    let mut den = r.denom().clone();
    let mut twos = 0u32;
    let mut fives = 0u32;
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if den != BigInt::from(1) {
        return None;
    }
    let scale = twos.max(fives);
    let scaled = r.numer() * BigInt::from(10u32).pow(scale) / r.denom();
    let neg = scaled.is_negative();
    let digits = scaled.abs().to_string();
    let mut padded = format!("{:0>width$}", digits, width = scale as usize + 1);
    let split = padded.len() - scale as usize;
    let frac = padded.split_off(split);
    let frac = frac.trim_end_matches('0');
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    out.push_str(&padded);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    Some(out)
}

/// Decimal text when exact, else `numer/denom`.
pub fn rational_display(r: &BigRational) -> String {
    rational_to_decimal(r).unwrap_or_else(|| format!("{}/{}", r.numer(), r.denom()))
}

/// Whole cents, rounding half up: `floor(r * 100 + 1/2)`.
pub fn cents_half_up(r: &BigRational) -> BigInt {
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    (r * BigRational::from_integer(BigInt::from(100)) + half).floor().to_integer()
}

/// Dollar text rounded half up to the cent, e.g. `$0.61`.
pub fn format_usd(r: &BigRational) -> String {
    let cents = cents_half_up(r);
    let neg = cents.is_negative();
    let mag = cents.abs();
    let dollars = &mag / BigInt::from(100);
    let rem = (&mag % BigInt::from(100)).to_u64().unwrap();
    format!("{}${}.{:02}", if neg { "-" } else { "" }, dollars, rem)
}

/// An exact fraction with a stable text form: exact decimal when the value
/// terminates (`0.8`), else `numer/denom` (`1/3`). Used for service-level
/// indicator values so equality checks are exact.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fraction(BigRational);

impl Fraction {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "fraction denominator must be non-zero");
        Fraction(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn zero() -> Self {
        Fraction(BigRational::zero())
    }

    pub fn one() -> Self {
        Fraction(BigRational::from_integer(BigInt::from(1)))
    }

    pub fn from_counts(num: u64, den: u64) -> Self {
        assert!(den != 0, "fraction denominator must be non-zero");
        Fraction(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_ratio(r: BigRational) -> Self {
        Fraction(r)
    }

    pub fn ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// `1 - self`.
    pub fn complement(&self) -> Self {
        Fraction(BigRational::from_integer(BigInt::from(1)) - &self.0)
    }

    /// Parse either form produced by `Display`: decimal text or `n/d`.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some((n, d)) = t.split_once('/') {
            let num: BigInt = n
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("not a fraction: {s:?}")))?;
            let den: BigInt = d
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("not a fraction: {s:?}")))?;
            if den.is_zero() {
                return Err(Error::InvalidArgument(format!("zero denominator: {s:?}")));
            }
            return Ok(Fraction(BigRational::new(num, den)));
        }
        Ok(Fraction(rational_from_decimal(t)?))
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&rational_display(&self.0))
    }
}

impl fmt::Debug for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fraction({self})")
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Fraction::parse(&s).map_err(serde::de::Error::custom)
    }
}
