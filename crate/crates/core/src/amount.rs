//! Raw on-chain token quantities.
//!
//! Amounts are unsigned 256-bit integers in the token's smallest unit. All
//! arithmetic is checked; nothing wraps.

use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use ruint::Uint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::MathError;

pub type U256 = Uint<256, 4>;
pub type U512 = Uint<512, 8>;

/// A token quantity in raw (decimals-scaled) units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(U256);

impl Amount {
    pub const ZERO: Amount = Amount(U256::ZERO);
    pub const ONE: Amount = Amount(U256::from_limbs([1, 0, 0, 0]));
    pub const MAX: Amount = Amount(U256::MAX);

    pub const fn new(value: U256) -> Self {
        Amount(value)
    }

    pub const fn raw(self) -> U256 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0.is_zero()
    }

    pub fn checked_add(self, rhs: Amount) -> Result<Amount, MathError> {
        self.0.checked_add(rhs.0).map(Amount).ok_or(MathError::Overflow)
    }

    pub fn checked_sub(self, rhs: Amount) -> Result<Amount, MathError> {
        self.0.checked_sub(rhs.0).map(Amount).ok_or(MathError::Underflow)
    }

    pub fn saturating_sub(self, rhs: Amount) -> Amount {
        Amount(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_mul_u64(self, rhs: u64) -> Result<Amount, MathError> {
        self.0
            .checked_mul(U256::from(rhs))
            .map(Amount)
            .ok_or(MathError::Overflow)
    }

    /// `10^exp`, failing when it does not fit.
    pub fn pow10(exp: u32) -> Result<Amount, MathError> {
        U256::from(10u64)
            .checked_pow(U256::from(exp))
            .map(Amount)
            .ok_or(MathError::Overflow)
    }

    /// Nearest double. Lossy above 2^53.
    pub fn to_f64(self) -> f64 {
        f64::from(self.0)
    }

    /// Largest amount not exceeding `value`. Negative and NaN inputs map to
    /// zero; values beyond 2^256 are an overflow.
    pub fn from_f64_floor(value: f64) -> Result<Amount, MathError> {
        if !(value > 0.0) {
            return Ok(Amount::ZERO);
        }
        if !value.is_finite() || value >= 2f64.powi(256) {
            return Err(MathError::Overflow);
        }
        let (mantissa, exp) = decompose(value);
        let m = U256::from(mantissa);
        if exp >= 0 {
            Ok(Amount(m << (exp as usize)))
        } else {
            let shift = (-exp) as usize;
            if shift >= 256 {
                return Ok(Amount::ZERO);
            }
            Ok(Amount(m >> shift))
        }
    }

    /// `floor(self * weight)` computed exactly for `weight` in `[0, 1]`.
    ///
    /// The weight's binary expansion is used as-is, so the result does not
    /// depend on how `self` rounds to a double.
    pub fn mul_weight_floor(self, weight: f64) -> Amount {
        if !(weight > 0.0) {
            return Amount::ZERO;
        }
        if weight >= 1.0 {
            return self;
        }
        let (mantissa, exp) = decompose(weight);
        // weight < 1 so exp < 0.
        let shift = (-exp) as usize;
        let wide: U512 = self.0.widening_mul(U256::from(mantissa));
        let floored = if shift >= 512 { U512::ZERO } else { wide >> shift };
        // floor(a * w) <= a, always fits.
        Amount(floored.to::<U256>())
    }

    /// `self * num / den` with a 512-bit intermediate, floored.
    pub fn mul_div_floor(self, num: Amount, den: Amount) -> Result<Amount, MathError> {
        if den.is_zero() {
            return Err(MathError::DivisionByZero);
        }
        let wide: U512 = self.0.widening_mul(num.0);
        let q = wide / U512::from(den.0);
        narrow(q)
    }

    /// `self / other` as a double. Both operands round to the nearest double
    /// first, so the relative error stays within a few ulps at any magnitude.
    pub fn ratio(self, other: Amount) -> f64 {
        if other.is_zero() {
            return f64::INFINITY;
        }
        self.to_f64() / other.to_f64()
    }
}

/// Splits a positive finite double into `mantissa * 2^exp` with an integer
/// mantissa below 2^53.
fn decompose(value: f64) -> (u64, i32) {
    let bits = value.to_bits();
    let exponent = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    if exponent == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1u64 << 52), exponent - 1075)
    }
}

pub(crate) fn narrow(value: U512) -> Result<Amount, MathError> {
    if value.bit_len() > 256 {
        return Err(MathError::Overflow);
    }
    Ok(Amount(value.to::<U256>()))
}

impl From<u64> for Amount {
    fn from(v: u64) -> Self {
        Amount(U256::from(v))
    }
}

impl From<u128> for Amount {
    fn from(v: u128) -> Self {
        Amount(U256::from(v))
    }
}

impl From<U256> for Amount {
    fn from(v: U256) -> Self {
        Amount(v)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Error for text that is not a plain base-10 unsigned integer.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid amount {0:?}: expected a base-10 integer string")]
pub struct ParseAmountError(pub String);

impl FromStr for Amount {
    type Err = ParseAmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseAmountError(s.to_string()));
        }
        U256::from_str_radix(s, 10)
            .map(Amount)
            .map_err(|_| ParseAmountError(s.to_string()))
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;

        impl serde::de::Visitor<'_> for Visitor {
            type Value = Amount;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal integer string")
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Amount, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_str(Visitor)
    }
}

impl Sum for Amount {
    /// Panics on overflow; use [`Amount::checked_add`] where sums are untrusted.
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Self {
        iter.fold(Amount::ZERO, |acc, a| {
            acc.checked_add(a).expect("amount sum overflow")
        })
    }
}
