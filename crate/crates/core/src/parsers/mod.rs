//! Value parsers: temperatures, pressures and chemical formulas.
//!
//! All functions here are pure and safe to call from any thread.

pub mod elements;
mod formula;
mod quantity;

pub use formula::{normalize_formula, parse_composition, Composition, VARIABLES};
pub use quantity::{parse_pressure, parse_temperature, Quantity, QuantityError, Unit};
