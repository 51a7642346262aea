//! Aggregate scores as printed in the evaluation tables, and the shipped
//! per-document table they are derived from.

#![allow(dead_code)]

use std::path::PathBuf;

pub fn table7_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/table7.csv")
}

/// (method, P, R, F1, docs)
pub const BY_METHOD: [(&str, f64, f64, f64, usize); 2] =
    [("pdf", 87.83, 45.61, 52.67, 15), ("interface", 93.38, 92.51, 92.02, 15)];

/// (curator, P, R, F1, docs, pages). The per-document table labels the
/// PhD curator "PS"; the aggregate tables call the same person "PD".
pub const BY_CURATOR: [(&str, f64, f64, f64, usize, u64); 3] = [
    ("MS", 90.03, 60.26, 64.50, 10, 96),
    ("PS", 83.33, 65.69, 69.45, 10, 100),
    ("SR", 98.45, 81.22, 83.08, 10, 96),
];

/// (curator, method, P, R, F1, docs, pages)
pub const BY_CURATOR_METHOD: [(&str, &str, f64, f64, f64, usize, u64); 6] = [
    ("MS", "pdf", 94.58, 36.55, 48.67, 6, 46),
    ("MS", "interface", 83.19, 95.83, 88.25, 4, 50),
    ("PS", "pdf", 70.00, 48.51, 50.78, 5, 49),
    ("PS", "interface", 96.67, 82.86, 88.11, 5, 51),
    ("SR", "pdf", 100.00, 55.56, 61.03, 4, 51),
    ("SR", "interface", 97.42, 98.33, 97.78, 6, 45),
];

pub const TOLERANCE: f64 = 0.01;

pub fn within(actual: f64, printed: f64) -> bool {
    (actual - printed).abs() <= TOLERANCE + 1e-9
}
