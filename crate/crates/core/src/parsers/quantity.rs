//! Temperature and pressure values as they appear in extracted text.
//!
//! Accepted shape: optional sign, one decimal number, optional unit token.
//! Values are normalised to kelvin and gigapascal. Range checks belong to
//! the anomaly rules, so negative numbers parse fine here.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Kelvin,
    Gigapascal,
}

impl Unit {
    fn symbol(self) -> &'static str {
        match self {
            Unit::Kelvin => "K",
            Unit::Gigapascal => "GPa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub magnitude: f64,
    pub unit: Unit,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.magnitude, self.unit.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuantityError {
    #[error("empty value")]
    Empty,
    #[error("no numeric value in {0:?}")]
    NoNumber(String),
    #[error("more than one number in {0:?}")]
    MultipleNumbers(String),
    #[error("invalid characters {residue:?} in {input:?}")]
    InvalidCharacters { input: String, residue: String },
    #[error("unknown unit {unit:?} in {input:?}")]
    UnknownUnit { input: String, unit: String },
}

impl QuantityError {
    /// Short machine-readable reason code.
    pub fn reason(&self) -> &'static str {
        match self {
            QuantityError::Empty => "empty",
            QuantityError::NoNumber(_) => "no_number",
            QuantityError::MultipleNumbers(_) => "multiple_numbers",
            QuantityError::InvalidCharacters { .. } => "invalid_characters",
            QuantityError::UnknownUnit { .. } => "unknown_unit",
        }
    }
}

/// (unit token, scale, offset) applied as `value * scale + offset`.
type UnitRule = (&'static str, f64, f64);

const TEMPERATURE_UNITS: &[UnitRule] = &[("K", 1.0, 0.0), ("mK", 1e-3, 0.0), ("°C", 1.0, 273.15)];
const PRESSURE_UNITS: &[UnitRule] = &[("GPa", 1.0, 0.0), ("kbar", 0.1, 0.0), ("MPa", 1e-3, 0.0)];

pub fn parse_temperature(raw: &str) -> Result<Quantity, QuantityError> {
    parse_with(raw, TEMPERATURE_UNITS, Unit::Kelvin)
}

pub fn parse_pressure(raw: &str) -> Result<Quantity, QuantityError> {
    parse_with(raw, PRESSURE_UNITS, Unit::Gigapascal)
}

fn parse_with(raw: &str, units: &[UnitRule], unit: Unit) -> Result<Quantity, QuantityError> {
    let input = raw.trim();
    if input.is_empty() {
        return Err(QuantityError::Empty);
    }
    let Some((number, rest)) = split_number(input) else {
        return Err(if input.chars().any(|c| c.is_ascii_digit()) {
            QuantityError::InvalidCharacters {
                input: input.to_string(),
                residue: input.chars().take_while(|c| !c.is_ascii_digit()).collect(),
            }
        } else {
            QuantityError::NoNumber(input.to_string())
        });
    };
    let rest = rest.trim();
    let value: f64 = number.parse().map_err(|_| QuantityError::NoNumber(input.to_string()))?;

    let (scale, offset) = if rest.is_empty() {
        (1.0, 0.0)
    } else if let Some((_, scale, offset)) = units.iter().find(|(token, _, _)| *token == rest) {
        (*scale, *offset)
    } else if rest.chars().any(|c| c.is_ascii_digit()) {
        return Err(QuantityError::MultipleNumbers(input.to_string()));
    } else if rest.chars().all(|c| c.is_alphabetic() || c == '°') {
        return Err(QuantityError::UnknownUnit {
            input: input.to_string(),
            unit: rest.to_string(),
        });
    } else {
        return Err(QuantityError::InvalidCharacters {
            input: input.to_string(),
            residue: rest.to_string(),
        });
    };

    let magnitude = value * scale + offset;
    if !magnitude.is_finite() {
        return Err(QuantityError::NoNumber(input.to_string()));
    }
    Ok(Quantity { magnitude, unit })
}

/// Splits a leading signed decimal off `s`. The returned number string uses
/// an ASCII sign so it can go straight to `f64::from_str`.
fn split_number(s: &str) -> Option<(String, &str)> {
    let mut chars = s.char_indices().peekable();
    let mut number = String::new();
    if let Some(&(_, c)) = chars.peek() {
        match c {
            '+' => {
                chars.next();
            }
            '-' | '\u{2212}' => {
                number.push('-');
                chars.next();
            }
            _ => {}
        }
    }
    let mut digits = 0;
    let mut seen_dot = false;
    let mut end = s.len();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_ascii_digit() {
            digits += 1;
            number.push(c);
        } else if c == '.' && !seen_dot {
            seen_dot = true;
            number.push(c);
        } else {
            end = i;
            break;
        }
        chars.next();
    }
    if digits == 0 {
        return None;
    }
    Some((number, &s[end..]))
}
