use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{format_decimal, parse_decimal, Kwh, Money, Rational};

/// Price per kWh, exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rate(pub Rational);

impl Rate {
    pub fn parse(s: &str) -> Result<Self, TariffError> {
        parse_decimal(s)
            .map(Rate)
            .map_err(|_| TariffError::BadNumber(s.to_string()))
    }
}

impl std::fmt::Display for Rate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_decimal(&self.0, 2, 18))
    }
}

impl Serialize for Rate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Rate::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slab {
    /// Cumulative upper bound; `None` for the last, open-ended slab.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up_to_kwh: Option<Kwh>,
    pub rate: Rate,
}

#[derive(Debug, Error)]
pub enum TariffError {
    #[error("tariff has no slabs")]
    NoSlabs,
    #[error("slab {index}: upper bound {bound} does not exceed the previous bound")]
    NotIncreasing { index: usize, bound: String },
    #[error("slab {0}: only the last slab may be unbounded")]
    UnboundedInMiddle(usize),
    #[error("the last slab must be unbounded")]
    LastBounded,
    #[error("slab {0}: rate is negative")]
    NegativeRate(usize),
    #[error("fixed charge is negative")]
    NegativeFixedCharge,
    #[error("currency code is empty")]
    NoCurrency,
    #[error("`{0}` is not a decimal number")]
    BadNumber(String),
    #[error("tariff file: {0}")]
    Parse(String),
    #[error("reading tariff file {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Slab tariff. Construct through [`Tariff::new`] or the loaders, which
/// validate, so every `Tariff` value in circulation is well-formed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tariff {
    currency: String,
    fixed_charge: Money,
    slabs: Vec<Slab>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TariffFile {
    currency: String,
    fixed_charge: Money,
    slabs: Vec<Slab>,
}

impl<'de> Deserialize<'de> for Tariff {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = TariffFile::deserialize(d)?;
        Tariff::new(raw.currency, raw.fixed_charge, raw.slabs).map_err(serde::de::Error::custom)
    }
}

impl Tariff {
    pub fn new(currency: impl Into<String>, fixed_charge: Money, slabs: Vec<Slab>) -> Result<Self, TariffError> {
        let t = Self {
            currency: currency.into(),
            fixed_charge,
            slabs,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), TariffError> {
        if self.currency.trim().is_empty() {
            return Err(TariffError::NoCurrency);
        }
        if self.fixed_charge < Money::ZERO {
            return Err(TariffError::NegativeFixedCharge);
        }
        let last = self.slabs.len().checked_sub(1).ok_or(TariffError::NoSlabs)?;
        let mut prev = Kwh::ZERO;
        for (i, slab) in self.slabs.iter().enumerate() {
            if slab.rate.0 < Rational::from_integer(0) {
                return Err(TariffError::NegativeRate(i));
            }
            match slab.up_to_kwh {
                Some(_) if i == last => return Err(TariffError::LastBounded),
                Some(bound) => {
                    if bound <= prev {
                        return Err(TariffError::NotIncreasing {
                            index: i,
                            bound: bound.to_string(),
                        });
                    }
                    prev = bound;
                }
                None if i != last => return Err(TariffError::UnboundedInMiddle(i)),
                None => {}
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TariffError> {
        toml::from_str(text).map_err(|e| TariffError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TariffError> {
        let text = std::fs::read_to_string(path).map_err(|source| TariffError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Three slabs (0-75 @ 3.00, 75-200 @ 4.00, above @ 5.00) and a 10.00
    /// fixed charge. Illustrative numbers, not any utility's schedule.
    pub fn fixture() -> Self {
        Self::from_toml_str(FIXTURE_TOML).expect("fixture tariff is valid")
    }

    /// One unbounded slab at `rate`, no fixed charge.
    pub fn flat(rate: &str) -> Result<Self, TariffError> {
        Self::new(
            "XXX",
            Money::ZERO,
            vec![Slab {
                up_to_kwh: None,
                rate: Rate::parse(rate)?,
            }],
        )
    }

    pub fn currency(&self) -> &str {
        &self.currency
    }

    pub fn fixed_charge(&self) -> Money {
        self.fixed_charge
    }

    pub fn slabs(&self) -> &[Slab] {
        &self.slabs
    }
}

pub const FIXTURE_TOML: &str = r#"# Fixture tariff for tests and demos. Not a real utility schedule.
currency = "BDT"
fixed_charge = "10.00"

[[slabs]]
up_to_kwh = "75"
rate = "3.00"

[[slabs]]
up_to_kwh = "200"
rate = "4.00"

[[slabs]]
rate = "5.00"
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_loads() {
        let t = Tariff::fixture();
        assert_eq!(t.slabs().len(), 3);
        assert_eq!(t.fixed_charge(), Money(1000));
        assert_eq!(t.slabs()[1].up_to_kwh, Some(Kwh::from_integer(200)));
    }

    #[test]
    fn invalid_tariffs_rejected_at_load() {
        let bad = [
            ("currency = \"X\"\nfixed_charge = \"0\"\nslabs = []", "no slabs"),
            (
                "currency = \"X\"\nfixed_charge = \"0\"\n[[slabs]]\nup_to_kwh = \"10\"\nrate = \"1\"",
                "last slab must be unbounded",
            ),
            (
                "currency = \"X\"\nfixed_charge = \"0\"\n[[slabs]]\nrate = \"1\"\n[[slabs]]\nrate = \"2\"",
                "only the last slab",
            ),
            (
                "currency = \"X\"\nfixed_charge = \"0\"\n[[slabs]]\nup_to_kwh = \"10\"\nrate = \"1\"\n[[slabs]]\nup_to_kwh = \"10\"\nrate = \"1\"\n[[slabs]]\nrate = \"1\"",
                "does not exceed",
            ),
            (
                "currency = \"X\"\nfixed_charge = \"0\"\n[[slabs]]\nrate = \"-1\"",
                "negative",
            ),
            (
                "currency = \"X\"\nfixed_charge = \"-1.00\"\n[[slabs]]\nrate = \"1\"",
                "negative",
            ),
            (
                "currency = \"X\"\nfixed_charge = \"0\"\n[[slabs]]\nrate = \"1.x\"",
                "not a decimal",
            ),
        ];
        for (text, needle) in bad {
            let err = Tariff::from_toml_str(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{err} should mention {needle}");
        }
    }

    #[test]
    fn serde_round_trip() {
        let t = Tariff::fixture();
        let json = serde_json::to_string(&t).unwrap();
        let back: Tariff = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
