//! Exact integer money.
//!
//! All value is held as a count of pence. The wire form is a decimal string
//! with exactly two fractional digits ("12.50"), which is also how amounts
//! appear in journals. There is no floating point anywhere in this module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The only currency supported.
pub const CURRENCY: &str = "GBP";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MoneyError {
    #[error("arithmetic overflow")]
    Overflow,
    #[error("result would be negative")]
    NegativeResult,
    #[error("malformed amount {0:?}: expected digits with exactly two decimal places")]
    Malformed(String),
    #[error("unsupported currency {0:?}")]
    UnsupportedCurrency(String),
}

/// A non-negative amount of pence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

/// A signed change in pence, used for journal postings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Delta(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_pence(pence: i64) -> Result<Self, MoneyError> {
        if pence < 0 {
            return Err(MoneyError::NegativeResult);
        }
        Ok(Money(pence))
    }

    /// Panics on negative input. Intended for literals in fixtures and tests.
    pub const fn pence(pence: i64) -> Self {
        assert!(pence >= 0, "money literal must be non-negative");
        Money(pence)
    }

    pub fn minor_units(self) -> i64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Money) -> Result<Money, MoneyError> {
        money_add(self, other.0)
    }

    pub fn checked_sub(self, other: Money) -> Result<Money, MoneyError> {
        money_add(self, other.0.checked_neg().ok_or(MoneyError::Overflow)?)
    }

    /// Saturating difference, floored at zero.
    pub fn saturating_sub(self, other: Money) -> Money {
        Money(self.0.saturating_sub(other.0).max(0))
    }

    pub fn as_delta(self) -> Delta {
        Delta(self.0)
    }

    pub fn negated(self) -> Delta {
        Delta(-self.0)
    }

    /// Parses the canonical wire form: one or more digits, a dot, two digits.
    pub fn parse_decimal(s: &str) -> Result<Money, MoneyError> {
        parse_pence(s, false).and_then(Money::from_pence)
    }
}

/// Adds a signed delta to a balance. Never wraps; never goes below zero.
pub fn money_add(a: Money, delta: i64) -> Result<Money, MoneyError> {
    let sum = a.0.checked_add(delta).ok_or(MoneyError::Overflow)?;
    if sum < 0 {
        return Err(MoneyError::NegativeResult);
    }
    Ok(Money(sum))
}

/// Sums balances, reporting overflow instead of wrapping.
pub fn checked_sum<I: IntoIterator<Item = Money>>(items: I) -> Result<Money, MoneyError> {
    items
        .into_iter()
        .try_fold(Money::ZERO, |acc, m| acc.checked_add(m))
}

/// Validates a currency tag against the single supported currency.
pub fn check_currency(code: &str) -> Result<(), MoneyError> {
    if code == CURRENCY {
        Ok(())
    } else {
        Err(MoneyError::UnsupportedCurrency(code.to_string()))
    }
}

impl Delta {
    pub const fn pence(pence: i64) -> Self {
        Delta(pence)
    }

    pub fn minor_units(self) -> i64 {
        self.0
    }

    pub fn checked_add(self, other: Delta) -> Result<Delta, MoneyError> {
        self.0.checked_add(other.0).map(Delta).ok_or(MoneyError::Overflow)
    }
}

fn parse_pence(s: &str, allow_sign: bool) -> Result<i64, MoneyError> {
    let malformed = || MoneyError::Malformed(s.to_string());
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) if allow_sign => (true, rest),
        _ => (false, s),
    };
    let (whole, frac) = body.split_once('.').ok_or_else(malformed)?;
    if whole.is_empty()
        || frac.len() != 2
        || !whole.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(malformed());
    }
    let whole: i64 = whole.parse().map_err(|_| MoneyError::Overflow)?;
    let frac: i64 = frac.parse().map_err(|_| malformed())?;
    let magnitude = whole
        .checked_mul(100)
        .and_then(|w| w.checked_add(frac))
        .ok_or(MoneyError::Overflow)?;
    Ok(if negative { -magnitude } else { magnitude })
}

fn format_pence(f: &mut fmt::Formatter<'_>, pence: i64) -> fmt::Result {
    let sign = if pence < 0 { "-" } else { "" };
    let abs = pence.unsigned_abs();
    write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        format_pence(f, self.0)
    }
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        format_pence(f, self.0)
    }
}

impl FromStr for Money {
    type Err = MoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Money::parse_decimal(s)
    }
}

impl FromStr for Delta {
    type Err = MoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pence(s, true).map(Delta)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for Delta {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Delta {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `{"amount":"12.50","currency":"GBP"}` as used by the balance endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Amount {
    pub amount: Money,
    pub currency: Currency,
}

impl From<Money> for Amount {
    fn from(amount: Money) -> Self {
        Amount {
            amount,
            currency: Currency,
        }
    }
}

/// Serialized as the literal "GBP"; anything else fails to deserialize.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Currency;

impl Serialize for Currency {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(CURRENCY)
    }
}

impl<'de> Deserialize<'de> for Currency {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        check_currency(&s).map_err(serde::de::Error::custom)?;
        Ok(Currency)
    }
}
