//! Exact quantities: energy as a rational number of kWh, money as integer
//! minor units. No binary floating point is involved in either.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Rational = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("`{0}` is not a decimal number")]
pub struct ParseDecimalError(pub String);

/// Parses `[-]digits[.digits]` into an exact rational.
pub fn parse_decimal(s: &str) -> Result<Rational, ParseDecimalError> {
    let err = || ParseDecimalError(s.to_string());
    let t = s.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(err());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
        return Err(err());
    }
    let digits = format!("{int}{frac}");
    let numer: i128 = if digits.is_empty() {
        0
    } else {
        digits.parse().map_err(|_| err())?
    };
    let denom = 10i128.pow(frac.len() as u32);
    let r = Rational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Renders `value` in decimal with at least `min_frac` fractional digits.
/// Terminating expansions up to `max_frac` digits are exact; anything
/// longer is rounded half away from zero at `max_frac` digits.
pub fn format_decimal(value: &Rational, min_frac: usize, max_frac: usize) -> String {
    let neg = value.is_negative();
    let v = value.abs();
    let mut digits = max_frac;
    // Shortest exact representation, if there is one within max_frac.
    for d in min_frac..=max_frac {
        let scaled = v * Rational::from_integer(10i128.pow(d as u32));
        if scaled.is_integer() {
            digits = d;
            break;
        }
    }
    let scale = 10i128.pow(digits as u32);
    let scaled = round_half_up(&(v * Rational::from_integer(scale)));
    let int = scaled / scale;
    let frac = scaled % scale;
    let sign = if neg && scaled != 0 { "-" } else { "" };
    if digits == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac:0width$}", width = digits)
    }
}

/// Round half away from zero to an integer.
pub fn round_half_up(v: &Rational) -> i128 {
    let floor = v.abs().floor().to_integer();
    let rem = v.abs() - Rational::from_integer(floor);
    let mag = if rem >= Rational::new(1, 2) { floor + 1 } else { floor };
    if v.is_negative() {
        -mag
    } else {
        mag
    }
}

/// Energy in kWh, held exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Kwh(pub Rational);

impl Kwh {
    pub const ZERO: Kwh = Kwh(Ratio::new_raw(0, 1));

    /// `pulses / pulses_per_kwh`.
    pub fn from_pulses(pulses: u64, pulses_per_kwh: u32) -> Self {
        assert!(pulses_per_kwh > 0, "meter constant must be positive");
        Kwh(Rational::new(i128::from(pulses), i128::from(pulses_per_kwh)))
    }

    pub fn from_integer(kwh: i64) -> Self {
        Kwh(Rational::from_integer(i128::from(kwh)))
    }

    pub fn as_rational(&self) -> Rational {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn min(self, other: Kwh) -> Kwh {
        if self <= other {
            self
        } else {
            other
        }
    }

    /// Lossy, for display or statistics only.
    pub fn to_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl fmt::Display for Kwh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_decimal(&self.0, 3, 6))
    }
}

impl FromStr for Kwh {
    type Err = ParseDecimalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_decimal(s).map(Kwh)
    }
}

impl Add for Kwh {
    type Output = Kwh;
    fn add(self, rhs: Kwh) -> Kwh {
        Kwh(self.0 + rhs.0)
    }
}

impl AddAssign for Kwh {
    fn add_assign(&mut self, rhs: Kwh) {
        self.0 += rhs.0;
    }
}

impl Sub for Kwh {
    type Output = Kwh;
    fn sub(self, rhs: Kwh) -> Kwh {
        Kwh(self.0 - rhs.0)
    }
}

impl Sum for Kwh {
    fn sum<I: Iterator<Item = Kwh>>(iter: I) -> Kwh {
        iter.fold(Kwh::ZERO, Add::add)
    }
}

impl Serialize for Kwh {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Kwh {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Money in minor units (hundredths).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(pub i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_minor(units: i64) -> Self {
        Money(units)
    }

    pub fn minor_units(self) -> i64 {
        self.0
    }

    /// Rounds an exact amount half-up to the nearest hundredth.
    pub fn round_from(amount: &Rational) -> Self {
        let cents = round_half_up(&(amount * Rational::from_integer(100)));
        Money(i64::try_from(cents).expect("money amount out of range"))
    }

    pub fn as_rational(self) -> Rational {
        Rational::new(i128::from(self.0), 100)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", a / 100, a % 100)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseMoneyError {
    #[error(transparent)]
    Decimal(#[from] ParseDecimalError),
    #[error("`{0}` has more than two decimal places")]
    TooPrecise(String),
}

impl FromStr for Money {
    type Err = ParseMoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let r = parse_decimal(s)? * Rational::from_integer(100);
        if !r.is_integer() {
            return Err(ParseMoneyError::TooPrecise(s.to_string()));
        }
        let v = i64::try_from(r.to_integer()).map_err(|_| ParseDecimalError(s.to_string()))?;
        Ok(Money(v))
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl Mul<Rational> for Kwh {
    type Output = Rational;
    fn mul(self, rate: Rational) -> Rational {
        self.0 * rate
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
