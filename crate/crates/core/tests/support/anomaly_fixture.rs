//! Twelve records straddling every anomaly threshold, with the rules each
//! one must trip.

#![allow(dead_code)]

use curation_core::anomaly::AnomalyRule;
use curation_core::ingestion::{CandidateRecord, ExtractionPayload, PayloadPassage};

use AnomalyRule::{FormulaUnprocessable as Formula, PressureInvalid as Pressure, TcInvalid as Tc};

pub const DOCUMENT_ID: &str = "0c7d3163ea";

/// (formula, tc_raw, pressure_raw, expected rules)
pub const CASES: [(&str, &str, Option<&str>, &[AnomalyRule]); 12] = [
    ("MgB2", "-1 K", None, &[Tc]),
    ("MgB2", "0 K", None, &[]),
    ("MgB2", "273 K", None, &[]),
    ("MgB2", "273.1 K", None, &[Tc]),
    ("MgB2", "41]", None, &[Tc]),
    ("LaH10", "250 K", Some("0 GPa"), &[]),
    ("LaH10", "250 K", Some("250 GPa"), &[]),
    ("LaH10", "250 K", Some("250.1 GPa"), &[Pressure]),
    ("LaH10", "250 K", Some("very high"), &[Pressure]),
    ("Ba1-xKxFe2As2", "38 K", None, &[]),
    ("the sample", "20 K", None, &[Formula]),
    ("Qq7??", "300 K", Some("n/a"), &[Tc, Formula, Pressure]),
];

pub fn payload() -> ExtractionPayload {
    ExtractionPayload {
        document_id: DOCUMENT_ID.into(),
        page_count: 9,
        passages: vec![PayloadPassage {
            passage_id: "p1".into(),
            text: "Threshold fixture passage.".into(),
            spans: vec![],
            layout_tokens: vec![],
        }],
        candidate_records: CASES
            .iter()
            .map(|(formula, tc, pressure, _)| CandidateRecord {
                material_raw: (*formula).into(),
                formula: Some((*formula).into()),
                tc_raw: (*tc).into(),
                pressure_raw: pressure.map(Into::into),
                passage_id: "p1".into(),
            })
            .collect(),
    }
}

/// Record ids assigned on ingest into an empty store, in case order.
pub fn record_id(index: usize) -> String {
    format!("rec-{:06}", index + 1)
}
