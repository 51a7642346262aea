//! Rule-based anomaly screening.
//!
//! A record is anomalous when its critical temperature is unparseable or
//! outside [0, 273] K, its applied pressure is unparseable or outside
//! [0, 250] GPa, or its formula cannot be processed by the composition
//! parser. Both interval bounds are inclusive. Records of one document that
//! give the same material several distinct T_c values are reported
//! separately and never change state.
//!
//! Everything in this module is pure; state changes happen in
//! [`crate::workflow::Stage::scan`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{is_visible, DocumentId, MaterialRecord, RecordId};
use crate::parallel::map_batch;
use crate::parsers::{normalize_formula, parse_composition, parse_pressure, parse_temperature, Composition};

pub const MIN_TC_KELVIN: f64 = 0.0;
pub const MAX_TC_KELVIN: f64 = 273.0;
pub const MIN_PRESSURE_GPA: f64 = 0.0;
pub const MAX_PRESSURE_GPA: f64 = 250.0;

/// Two T_c values closer than this are the same value.
pub const TC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyRule {
    TcInvalid,
    FormulaUnprocessable,
    PressureInvalid,
    MultiTc,
}

impl fmt::Display for AnomalyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyRule::TcInvalid => "tc_invalid",
            AnomalyRule::FormulaUnprocessable => "formula_unprocessable",
            AnomalyRule::PressureInvalid => "pressure_invalid",
            AnomalyRule::MultiTc => "multi_tc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyFlag {
    pub rule: AnomalyRule,
    pub detail: String,
}

impl AnomalyFlag {
    fn new(rule: AnomalyRule, detail: impl Into<String>) -> Self {
        AnomalyFlag {
            rule,
            detail: detail.into(),
        }
    }
}

fn check_tc(raw: &str) -> Option<AnomalyFlag> {
    match parse_temperature(raw) {
        Err(e) => Some(AnomalyFlag::new(AnomalyRule::TcInvalid, format!("tc_raw {raw:?}: {e}"))),
        Ok(q) if q.magnitude < MIN_TC_KELVIN => Some(AnomalyFlag::new(
            AnomalyRule::TcInvalid,
            format!("T_c {} K is negative", q.magnitude),
        )),
        Ok(q) if q.magnitude > MAX_TC_KELVIN => Some(AnomalyFlag::new(
            AnomalyRule::TcInvalid,
            format!("T_c {} K exceeds {MAX_TC_KELVIN} K", q.magnitude),
        )),
        Ok(_) => None,
    }
}

fn check_pressure(raw: &str) -> Option<AnomalyFlag> {
    match parse_pressure(raw) {
        Err(e) => Some(AnomalyFlag::new(
            AnomalyRule::PressureInvalid,
            format!("pressure_raw {raw:?}: {e}"),
        )),
        Ok(q) if !(MIN_PRESSURE_GPA..=MAX_PRESSURE_GPA).contains(&q.magnitude) => Some(AnomalyFlag::new(
            AnomalyRule::PressureInvalid,
            format!(
                "pressure {} GPa outside [{MIN_PRESSURE_GPA}, {MAX_PRESSURE_GPA}] GPa",
                q.magnitude
            ),
        )),
        Ok(_) => None,
    }
}

fn check_formula(raw: &str) -> Option<AnomalyFlag> {
    match parse_composition(raw) {
        Composition::ParseError { reason } => Some(AnomalyFlag::new(
            AnomalyRule::FormulaUnprocessable,
            format!("formula {raw:?}: {reason}"),
        )),
        _ => None,
    }
}

/// Flags raised by the three per-record rules, in rule order. Empty when
/// the record is clean.
pub fn check_record(record: &MaterialRecord) -> Vec<AnomalyFlag> {
    let pressure = record.pressure_raw.as_deref().filter(|p| !p.trim().is_empty());
    [
        check_tc(&record.tc_raw),
        check_formula(&record.formula),
        pressure.and_then(check_pressure),
    ]
    .into_iter()
    .flatten()
    .collect()
}

/// [`check_record`] over a batch; output is index-aligned with the input.
pub fn check_batch(records: &[MaterialRecord]) -> Vec<Vec<AnomalyFlag>> {
    map_batch(records, check_record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTcGroup {
    pub document_id: DocumentId,
    pub material: String,
    pub tc_values: Vec<f64>,
    pub record_ids: Vec<RecordId>,
}

/// Groups visible records by (document, normalised formula) and reports the
/// groups carrying two or more distinct T_c values. Records without a
/// parseable T_c are skipped.
pub fn detect_multi_tc(records: &[MaterialRecord]) -> Vec<MultiTcGroup> {
    let mut groups: BTreeMap<(DocumentId, String), Vec<(f64, &RecordId)>> = BTreeMap::new();
    for record in records.iter().filter(|r| is_visible(r)) {
        let tc = record
            .tc_kelvin
            .or_else(|| parse_temperature(&record.tc_raw).ok().map(|q| q.magnitude));
        let Some(tc) = tc else { continue };
        let material = if record.formula.trim().is_empty() {
            normalize_formula(&record.material_raw)
        } else {
            normalize_formula(&record.formula)
        };
        groups
            .entry((record.document_id.clone(), material))
            .or_default()
            .push((tc, &record.record_id));
    }

    groups
        .into_iter()
        .filter_map(|((document_id, material), members)| {
            let mut values: Vec<f64> = members.iter().map(|(tc, _)| *tc).collect();
            values.sort_by(f64::total_cmp);
            values.dedup_by(|a, b| (*a - *b).abs() <= TC_TOLERANCE);
            (values.len() >= 2).then(|| {
                let mut record_ids: Vec<RecordId> = members.into_iter().map(|(_, id)| id.clone()).collect();
                record_ids.sort();
                MultiTcGroup {
                    document_id,
                    material,
                    tc_values: values,
                    record_ids,
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCounts {
    pub tc_invalid: usize,
    pub formula_unprocessable: usize,
    pub pressure_invalid: usize,
    pub multi_tc: usize,
}

impl RuleCounts {
    pub fn bump(&mut self, rule: AnomalyRule) {
        match rule {
            AnomalyRule::TcInvalid => self.tc_invalid += 1,
            AnomalyRule::FormulaUnprocessable => self.formula_unprocessable += 1,
            AnomalyRule::PressureInvalid => self.pressure_invalid += 1,
            AnomalyRule::MultiTc => self.multi_tc += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFinding {
    pub record_id: RecordId,
    pub flags: Vec<AnomalyFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanError {
    pub record_id: RecordId,
    pub error: String,
}

/// Outcome of a scan. `flagged` lists every record with at least one rule
/// hit; `transitioned` only those whose state changed during this scan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub scanned: usize,
    pub counts: RuleCounts,
    pub flagged: Vec<ScanFinding>,
    pub transitioned: Vec<RecordId>,
    pub multi_tc: Vec<MultiTcGroup>,
    pub errors: Vec<ScanError>,
}
