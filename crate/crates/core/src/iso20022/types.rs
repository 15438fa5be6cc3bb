//! Identifier and money primitives shared by the message codec and the ledgers.

use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::CodecError;

/// Largest number of digits an ISO 20022 amount may carry.
pub const MAX_TOTAL_DIGITS: u32 = 18;

/// Business Identifier Code of a financial institution (the `BICFI` element).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BicCode(String);

impl BicCode {
    pub fn new(value: impl Into<String>) -> Result<Self, CodecError> {
        let value = value.into();
        let valid_len = value.len() == 8 || value.len() == 11;
        let charset_ok = value.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit());
        let prefix_ok = value.bytes().take(6).all(|b| b.is_ascii_uppercase());
        if valid_len && charset_ok && prefix_ok {
            Ok(Self(value))
        } else {
            Err(CodecError::InvalidBic(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BicCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for BicCode {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for BicCode {
    type Error = CodecError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<BicCode> for String {
    fn from(bic: BicCode) -> Self {
        bic.0
    }
}

/// ISO 4217 alphabetic currency code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CurrencyCode([u8; 3]);

impl CurrencyCode {
    pub fn new(code: &str) -> Result<Self, CodecError> {
        let bytes = code.as_bytes();
        if bytes.len() == 3 && bytes.iter().all(u8::is_ascii_uppercase) {
            Ok(Self([bytes[0], bytes[1], bytes[2]]))
        } else {
            Err(CodecError::InvalidCurrency(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        // Constructed only from ASCII uppercase letters.
        std::str::from_utf8(&self.0).expect("currency code is ascii")
    }

    /// Number of minor units (decimal places) the currency settles in.
    pub fn minor_units(&self) -> u32 {
        match self.as_str() {
            "BIF" | "CLP" | "DJF" | "GNF" | "ISK" | "JPY" | "KMF" | "KRW" | "PYG" | "RWF" | "UGX" | "VND" | "VUV"
            | "XAF" | "XOF" | "XPF" => 0,
            "BHD" | "IQD" | "JOD" | "KWD" | "LYD" | "OMR" | "TND" => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for CurrencyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurrencyCode {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for CurrencyCode {
    type Error = CodecError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<CurrencyCode> for String {
    fn from(code: CurrencyCode) -> Self {
        code.as_str().to_string()
    }
}

/// A non-negative exact amount in a given currency.
///
/// The stored value is always rescaled to the currency's minor units so that
/// formatting is canonical (`250.00`, never `250` or `250.0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "AmountRepr", into = "AmountRepr")]
pub struct MoneyAmount {
    pub currency: CurrencyCode,
    value: Decimal,
}

impl MoneyAmount {
    pub fn new(currency: CurrencyCode, value: Decimal) -> Result<Self, CodecError> {
        let minor = currency.minor_units();
        if value.is_sign_negative() && !value.is_zero() {
            return Err(CodecError::InvalidAmount(format!("{value} {currency} is negative")));
        }
        if value.normalize().scale() > minor {
            return Err(CodecError::InvalidAmount(format!(
                "{value} has more than {minor} fractional digits for {currency}"
            )));
        }
        let mut value = value.abs();
        value.rescale(minor);
        if digit_count(&value) > MAX_TOTAL_DIGITS {
            return Err(CodecError::InvalidAmount(format!(
                "{value} exceeds {MAX_TOTAL_DIGITS} digits"
            )));
        }
        Ok(Self { currency, value })
    }

    pub fn zero(currency: CurrencyCode) -> Self {
        let mut value = Decimal::ZERO;
        value.rescale(currency.minor_units());
        Self { currency, value }
    }

    /// Parses amount text as found in XML or config files. The text must be a
    /// plain unsigned decimal with no more fractional digits than the currency
    /// allows.
    pub fn parse(currency: CurrencyCode, text: &str) -> Result<Self, CodecError> {
        let value = parse_plain_decimal(text)?;
        if value.scale() > currency.minor_units() {
            return Err(CodecError::InvalidAmount(format!(
                "'{text}' has more than {} fractional digits for {currency}",
                currency.minor_units()
            )));
        }
        Self::new(currency, value)
    }

    pub fn value(&self) -> Decimal {
        self.value
    }

    pub fn is_positive(&self) -> bool {
        self.value > Decimal::ZERO
    }

    pub fn checked_add(&self, other: &Self) -> Option<Self> {
        if self.currency != other.currency {
            return None;
        }
        Self::new(self.currency, self.value.checked_add(other.value)?).ok()
    }

    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        if self.currency != other.currency || other.value > self.value {
            return None;
        }
        Self::new(self.currency, self.value - other.value).ok()
    }
}

impl fmt::Display for MoneyAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.currency)
    }
}

#[derive(Serialize, Deserialize)]
struct AmountRepr {
    currency: CurrencyCode,
    value: String,
}

impl TryFrom<AmountRepr> for MoneyAmount {
    type Error = CodecError;

    fn try_from(repr: AmountRepr) -> Result<Self, Self::Error> {
        Self::parse(repr.currency, &repr.value)
    }
}

impl From<MoneyAmount> for AmountRepr {
    fn from(amount: MoneyAmount) -> Self {
        Self {
            currency: amount.currency,
            value: amount.value.to_string(),
        }
    }
}

/// Parses `digits[.digits]` exactly. Signs, exponents and blanks are rejected.
pub fn parse_plain_decimal(text: &str) -> Result<Decimal, CodecError> {
    let bad = || CodecError::InvalidAmount(format!("'{text}' is not a plain decimal"));
    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (text, None),
    };
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || frac_part.is_some_and(|f| !all_digits(f)) {
        return Err(bad());
    }
    let digits = int_part.trim_start_matches('0').len() + frac_part.map_or(0, str::len);
    if digits > MAX_TOTAL_DIGITS as usize {
        return Err(CodecError::InvalidAmount(format!(
            "'{text}' exceeds {MAX_TOTAL_DIGITS} digits"
        )));
    }
    Decimal::from_str_exact(text).map_err(|_| bad())
}

/// Formats a decimal with exactly `scale` fractional digits.
pub fn format_scaled(value: Decimal, scale: u32) -> String {
    let mut v = value;
    v.rescale(scale);
    v.to_string()
}

fn digit_count(value: &Decimal) -> u32 {
    let mantissa = value.mantissa().unsigned_abs();
    if mantissa == 0 {
        1
    } else {
        mantissa.ilog10() + 1
    }
}
