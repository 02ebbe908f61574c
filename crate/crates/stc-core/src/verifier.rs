//! Rule-based answer canonicalization and exact equivalence checking.
//!
//! Numeric answers (`\frac{a}{b}`, `a/b`, signed integers, finite decimals)
//! compare by exact rational value with no floating tolerance, so
//! `Rational(1,2) = Decimal(0.5) = Decimal(0.50)`. Anything else becomes
//! normalized symbolic text compared by string equality. No symbolic algebra
//! is attempted.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{One, Pow, Signed, Zero};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifierError {
    #[error("empty answer text")]
    EmptyAnswer,
}

/// Canonical form of a final answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonicalAnswer {
    Integer(BigInt),
    /// Lowest terms, positive denominator, denominator > 1.
    Rational(BigRational),
    /// Exact value `digits * 10^(-scale)` with at least one fractional digit.
    Decimal { digits: BigInt, scale: u32 },
    /// Whitespace-collapsed, outer-delimiter-stripped text.
    SymbolicText(String),
}

impl CanonicalAnswer {
    /// Exact rational value for the numeric kinds.
    fn numeric_value(&self) -> Option<BigRational> {
        match self {
            CanonicalAnswer::Integer(i) => Some(BigRational::from_integer(i.clone())),
            CanonicalAnswer::Rational(r) => Some(r.clone()),
            CanonicalAnswer::Decimal { digits, scale } => {
                let den = BigInt::from(10u32).pow(*scale);
                Some(BigRational::new(digits.clone(), den))
            }
            CanonicalAnswer::SymbolicText(_) => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, CanonicalAnswer::SymbolicText(_))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CanonicalAnswer::Integer(_) => "integer",
            CanonicalAnswer::Rational(_) => "rational",
            CanonicalAnswer::Decimal { .. } => "decimal",
            CanonicalAnswer::SymbolicText(_) => "symbolic",
        }
    }
}

impl fmt::Display for CanonicalAnswer {
    /// Canonical rendering; feeding it back through [`canonicalize`] is a
    /// fixed point.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CanonicalAnswer::Integer(i) => write!(f, "{i}"),
            CanonicalAnswer::Rational(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            CanonicalAnswer::Decimal { digits, scale } => {
                let negative = digits.is_negative();
                let abs = digits.abs().to_string();
                let scale = *scale as usize;
                let padded = if abs.len() <= scale {
                    format!("{}{}", "0".repeat(scale - abs.len() + 1), abs)
                } else {
                    abs
                };
                let split = padded.len() - scale;
                let sign = if negative { "-" } else { "" };
                write!(f, "{sign}{}.{}", &padded[..split], &padded[split..])
            }
            CanonicalAnswer::SymbolicText(t) => write!(f, "{t}"),
        }
    }
}

/// Strips one layer of surrounding `$...$` or `\(...\)` delimiters.
fn strip_outer_delimiters(text: &str) -> Option<&str> {
    let t = text.trim();
    if t.len() >= 2 && t.starts_with('$') && t.ends_with('$') {
        return Some(&t[1..t.len() - 1]);
    }
    if t.len() >= 4 && t.starts_with("\\(") && t.ends_with("\\)") {
        return Some(&t[2..t.len() - 2]);
    }
    None
}

fn parse_signed_integer(text: &str) -> Option<BigInt> {
    let t = text.strip_prefix('+').unwrap_or(text);
    if t.is_empty() || t == "-" {
        return None;
    }
    let digits = t.strip_prefix('-').unwrap_or(t);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    t.parse::<BigInt>().ok()
}

/// Parses `a.b`, `.b`, or `a.` decimals. Returns (digits, scale).
fn parse_decimal(text: &str) -> Option<(BigInt, u32)> {
    let (sign, t) = match text.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, text.strip_prefix('+').unwrap_or(text)),
    };
    let dot = t.find('.')?;
    let (int_part, frac_part) = (&t[..dot], &t[dot + 1..]);
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let joined = format!("{int_part}{frac_part}");
    let digits: BigInt = if joined.is_empty() {
        return None;
    } else {
        joined.parse().ok()?
    };
    Some((digits * sign, frac_part.len() as u32))
}

/// Parses `\frac{a}{b}` with optional leading sign, and `a/b`.
fn parse_fraction(text: &str) -> Option<(BigInt, BigInt)> {
    let (sign, t) = match text.strip_prefix('-') {
        Some(rest) => (-1, rest.trim_start()),
        None => (1, text.strip_prefix('+').unwrap_or(text)),
    };
    if let Some(rest) = t.strip_prefix("\\frac") {
        let rest = rest.trim_start();
        let rest = rest.strip_prefix('{')?;
        let close = rest.find('}')?;
        let numer = parse_signed_integer(rest[..close].trim())?;
        let rest = rest[close + 1..].trim_start();
        let rest = rest.strip_prefix('{')?;
        let close = rest.find('}')?;
        let denom = parse_signed_integer(rest[..close].trim())?;
        if !rest[close + 1..].trim().is_empty() {
            return None;
        }
        return Some((numer * sign, denom));
    }
    let slash = t.find('/')?;
    let numer = parse_signed_integer(t[..slash].trim())?;
    let denom = parse_signed_integer(t[slash + 1..].trim())?;
    Some((numer * sign, denom))
}

/// Canonicalizes raw answer text: strips `$`, `\(`/`\)`, and whitespace, then
/// parses exact numeric forms, falling back to normalized symbolic text.
pub fn canonicalize(answer: &str) -> Result<CanonicalAnswer, VerifierError> {
    let mut text = answer.trim();
    if text.is_empty() {
        return Err(VerifierError::EmptyAnswer);
    }
    while let Some(stripped) = strip_outer_delimiters(text) {
        text = stripped.trim();
    }
    if text.is_empty() {
        return Err(VerifierError::EmptyAnswer);
    }

    if let Some(i) = parse_signed_integer(text) {
        return Ok(CanonicalAnswer::Integer(i));
    }
    if let Some((digits, scale)) = parse_decimal(text) {
        if scale == 0 {
            return Ok(CanonicalAnswer::Integer(digits));
        }
        return Ok(CanonicalAnswer::Decimal { digits, scale });
    }
    if let Some((numer, denom)) = parse_fraction(text) {
        if !denom.is_zero() {
            let ratio = BigRational::new(numer, denom);
            if ratio.denom().is_one() {
                return Ok(CanonicalAnswer::Integer(ratio.numer().clone()));
            }
            return Ok(CanonicalAnswer::Rational(ratio));
        }
    }

    let collapsed: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    Ok(CanonicalAnswer::SymbolicText(collapsed))
}

/// Exact equivalence: numeric kinds compare by value, symbolic text by
/// normalized string equality, numeric vs. symbolic is never equal.
pub fn answers_equal(a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
    match (a.numeric_value(), b.numeric_value()) {
        (Some(x), Some(y)) => x == y,
        (None, None) => match (a, b) {
            (CanonicalAnswer::SymbolicText(s), CanonicalAnswer::SymbolicText(t)) => s == t,
            _ => unreachable!("non-numeric kinds are symbolic"),
        },
        _ => false,
    }
}
