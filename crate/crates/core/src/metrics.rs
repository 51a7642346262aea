//! Curation quality scores.
//!
//! Per-document precision, recall and F1 come from TP/FP/FN counts as
//! percentages. Aggregates are macro averages of per-document scores. When a
//! row carries printed scores (a transcribed evaluation table) those are
//! what gets averaged; the counts-derived scores are still available for
//! consistency checks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::map_batch;

/// Agreement threshold between printed and recomputed percentages.
pub const SCORE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("negative count: tp={tp}, fp={fp}, fn={fn_}")]
    NegativeCount { tp: i64, fp: i64, fn_: i64 },
    #[error("cannot average an empty set of scores")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Interface,
    Pdf,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Interface => "interface",
            Method::Pdf => "pdf",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "interface" => Ok(Method::Interface),
            "pdf" => Ok(Method::Pdf),
            other => Err(format!("unknown method {other:?} (expected interface or pdf)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalScores {
    pub fn rounded(&self) -> EvalScores {
        EvalScores {
            precision: round_half_up(self.precision),
            recall: round_half_up(self.recall),
            f1: round_half_up(self.f1),
        }
    }
}

impl fmt::Display for EvalScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P {} R {} F1 {}",
            format_pct(self.precision),
            format_pct(self.recall),
            format_pct(self.f1)
        )
    }
}

/// Rounds a percentage to two decimals, halves going up. The relative
/// nudge absorbs binary representation error, so 83.195 becomes 83.20.
pub fn round_half_up(x: f64) -> f64 {
    let scaled = x * 100.0;
    (scaled + 0.5 + scaled.abs() * 1e-12).floor() / 100.0
}

pub fn format_pct(x: f64) -> String {
    format!("{:.2}", round_half_up(x))
}

pub fn score_counts(tp: i64, fp: i64, fn_: i64) -> Result<EvalScores, MetricsError> {
    if tp < 0 || fp < 0 || fn_ < 0 {
        return Err(MetricsError::NegativeCount { tp, fp, fn_ });
    }
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    let precision = if tp + fp == 0.0 { 100.0 } else { 100.0 * tp / (tp + fp) };
    let recall = if tp + fn_ == 0.0 {
        100.0
    } else {
        100.0 * tp / (tp + fn_)
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalScores { precision, recall, f1 })
}

pub fn macro_average(scores: &[EvalScores]) -> Result<EvalScores, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = scores.len() as f64;
    let sum = |f: fn(&EvalScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(EvalScores {
        precision: sum(|s| s.precision),
        recall: sum(|s| s.recall),
        f1: sum(|s| s.f1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub document_id: String,
    pub pages: u32,
    pub method: Method,
    pub curator: String,
    pub tp: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    /// Scores as printed in the source table, when transcribed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub printed: Option<EvalScores>,
}

impl EvalRow {
    pub fn computed(&self) -> EvalScores {
        score_counts(self.tp.into(), self.fp.into(), self.fn_.into()).expect("unsigned counts")
    }

    /// The score used in aggregates: printed when present.
    pub fn scores(&self) -> EvalScores {
        self.printed.unwrap_or_else(|| self.computed())
    }
}

/// Counts-derived scores for a batch, index-aligned with the input.
pub fn score_rows(rows: &[EvalRow]) -> Vec<EvalScores> {
    map_batch(rows, EvalRow::computed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    Curator,
    Method,
}

impl FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "curator" => Ok(GroupKey::Curator),
            "method" => Ok(GroupKey::Method),
            other => Err(format!("unknown group key {other:?} (expected curator or method)")),
        }
    }
}

/// Parses a comma-separated key list such as `curator,method`.
pub fn parse_group_keys(s: &str) -> Result<Vec<GroupKey>, String> {
    let mut keys: Vec<GroupKey> = s
        .split(',')
        .filter(|k| !k.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    keys.sort();
    keys.dedup();
    Ok(keys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub docs: usize,
    pub pages: u64,
    pub scores: EvalScores,
}

impl GroupSummary {
    pub fn label(&self) -> String {
        match (&self.curator, self.method) {
            (Some(c), Some(m)) => format!("{c}/{m}"),
            (Some(c), None) => c.clone(),
            (None, Some(m)) => m.to_string(),
            (None, None) => "all".into(),
        }
    }
}

/// Macro averages per group, ordered by key. No keys means one group.
pub fn group_scores(rows: &[EvalRow], keys: &[GroupKey]) -> Result<Vec<GroupSummary>, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let by_curator = keys.contains(&GroupKey::Curator);
    let by_method = keys.contains(&GroupKey::Method);
    let mut groups: BTreeMap<(Option<&str>, Option<Method>), Vec<&EvalRow>> = BTreeMap::new();
    for row in rows {
        let key = (
            by_curator.then_some(row.curator.as_str()),
            by_method.then_some(row.method),
        );
        groups.entry(key).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|((curator, method), members)| {
            let scores: Vec<EvalScores> = members.iter().map(|r| r.scores()).collect();
            Ok(GroupSummary {
                curator: curator.map(str::to_string),
                method,
                docs: members.len(),
                pages: members.iter().map(|r| u64::from(r.pages)).sum(),
                scores: macro_average(&scores)?,
            })
        })
        .collect()
}

/// A row whose printed scores disagree with its counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMismatch {
    pub document_id: String,
    pub curator: String,
    pub method: Method,
    pub tp: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    pub printed: EvalScores,
    pub computed: EvalScores,
    /// Which of precision, recall, f1 are off.
    pub fields: Vec<String>,
}

impl fmt::Display for ScoreMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} (tp={}, fp={}, fn={}): printed {} / computed {} [{}]",
            self.document_id,
            self.curator,
            self.method,
            self.tp,
            self.fp,
            self.fn_,
            self.printed,
            self.computed,
            self.fields.join(", ")
        )
    }
}

/// Compares printed scores with counts-derived ones. Rows without printed
/// scores are skipped.
pub fn check_printed_scores(rows: &[EvalRow]) -> Vec<ScoreMismatch> {
    let computed = score_rows(rows);
    rows.iter()
        .zip(computed)
        .filter_map(|(row, computed)| {
            let printed = row.printed?;
            let fields: Vec<String> = [
                ("precision", printed.precision, computed.precision),
                ("recall", printed.recall, computed.recall),
                ("f1", printed.f1, computed.f1),
            ]
            .into_iter()
            .filter(|(_, p, c)| (p - c).abs() > SCORE_TOLERANCE + 1e-9)
            .map(|(name, _, _)| name.to_string())
            .collect();
            (!fields.is_empty()).then(|| ScoreMismatch {
                document_id: row.document_id.clone(),
                curator: row.curator.clone(),
                method: row.method,
                tp: row.tp,
                fp: row.fp,
                fn_: row.fn_,
                printed,
                computed,
                fields,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    document_id: String,
    pages: i64,
    method: String,
    curator: String,
    tp: i64,
    fp: i64,
    #[serde(rename = "fn")]
    fn_: i64,
    #[serde(default)]
    precision: Option<f64>,
    #[serde(default)]
    recall: Option<f64>,
    #[serde(default)]
    f1: Option<f64>,
}

const REQUIRED_COLUMNS: [&str; 7] = ["document_id", "pages", "method", "curator", "tp", "fp", "fn"];

/// Parses an evaluation table. Columns `precision,recall,f1` are optional
/// and, when all three are filled, become the row's printed scores.
pub fn parse_eval_table(input: &str) -> Result<Vec<EvalRow>, MetricsError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input.as_bytes());
    let headers = reader.headers().map_err(|e| MetricsError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if let Some(missing) = REQUIRED_COLUMNS.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(MetricsError::Malformed {
            line: 1,
            message: format!("missing column {missing}"),
        });
    }

    let mut rows = Vec::new();
    for result in reader.deserialize::<CsvRow>() {
        let raw = result.map_err(|e| MetricsError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rows.len() as u64 + 2;
        let bad = |message: String| MetricsError::Malformed { line, message };
        let count = |name: &str, v: i64| {
            u32::try_from(v).map_err(|_| bad(format!("{name} must be a non-negative integer, got {v}")))
        };
        let printed = match (raw.precision, raw.recall, raw.f1) {
            (Some(precision), Some(recall), Some(f1)) => {
                let s = EvalScores { precision, recall, f1 };
                if [precision, recall, f1].iter().any(|v| !(0.0..=100.0).contains(v)) {
                    return Err(bad(format!("printed scores out of range: {s}")));
                }
                Some(s)
            }
            (None, None, None) => None,
            _ => return Err(bad("precision, recall and f1 must be given together".into())),
        };
        if raw.document_id.is_empty() {
            return Err(bad("empty document_id".into()));
        }
        rows.push(EvalRow {
            pages: count("pages", raw.pages)?,
            method: raw.method.parse().map_err(bad)?,
            curator: raw.curator,
            tp: count("tp", raw.tp)?,
            fp: count("fp", raw.fp)?,
            fn_: count("fn", raw.fn_)?,
            document_id: raw.document_id,
            printed,
        });
    }
    Ok(rows)
}

pub fn load_eval_table(path: impl AsRef<Path>) -> Result<Vec<EvalRow>, MetricsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_eval_table(&text)
}
