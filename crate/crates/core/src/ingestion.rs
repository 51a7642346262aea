//! Intake of upstream extraction output.
//!
//! A payload describes one document: its page count, text passages with
//! entity spans, and the candidate records extracted from those passages.
//! Each `ingest` call writes exactly one processing log entry. A rejected
//! payload stores nothing else.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::collector::LayoutToken;
use crate::model::{
    char_slice, make_record, validate_spans, DocumentId, EntityLabel, PassageId, RecordFields, Span, Timestamp,
};
use crate::parallel::map_batch;
use crate::store::{Document, Op, Passage, Store, StoreError};
use crate::workflow::{with_parsed_quantities, Stage};

/// Documents longer than this are rejected.
pub const MAX_PAGE_COUNT: u32 = 100;

pub const REASON_NO_TEXT: &str = "no_text";
pub const REASON_TOO_BIG: &str = "too_big";
pub const REASON_SCHEMA: &str = "schema";
pub const REASON_DUPLICATE: &str = "duplicate";
pub const REASON_CAPTURE_FAILED: &str = "capture_failed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessingOutcome {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessingCounts {
    pub passages: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingLogEntry {
    pub document_id: String,
    pub outcome: ProcessingOutcome,
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub counts: ProcessingCounts,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpan {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadPassage {
    pub passage_id: String,
    pub text: String,
    #[serde(default)]
    pub spans: Vec<PayloadSpan>,
    #[serde(default)]
    pub layout_tokens: Vec<LayoutToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub material_raw: String,
    /// Defaults to the material mention.
    #[serde(default)]
    pub formula: Option<String>,
    pub tc_raw: String,
    #[serde(default)]
    pub pressure_raw: Option<String>,
    pub passage_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionPayload {
    pub document_id: String,
    pub page_count: u32,
    #[serde(default)]
    pub passages: Vec<PayloadPassage>,
    #[serde(default)]
    pub candidate_records: Vec<CandidateRecord>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A payload checked for everything that does not need the store.
#[derive(Debug)]
pub enum Prepared {
    Accepted {
        document_id: DocumentId,
        page_count: u32,
        passages: Vec<Passage>,
        candidates: Vec<RecordFields>,
    },
    Rejected {
        document_id: String,
        reason: &'static str,
        detail: String,
    },
}

fn reject(document_id: &str, reason: &'static str, detail: impl Into<String>) -> Prepared {
    Prepared::Rejected {
        document_id: document_id.to_string(),
        reason,
        detail: detail.into(),
    }
}

/// Schema, size and text checks for one raw payload. Pure.
pub fn prepare(raw: &Value) -> Prepared {
    let doc_hint = raw
        .get("document_id")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let payload: ExtractionPayload = match serde_json::from_value(raw.clone()) {
        Ok(p) => p,
        Err(e) => return reject(&doc_hint, REASON_SCHEMA, e.to_string()),
    };
    prepare_payload(payload)
}

pub fn prepare_payload(payload: ExtractionPayload) -> Prepared {
    let doc = payload.document_id.clone();
    let document_id = match DocumentId::parse(&doc) {
        Ok(id) => id,
        Err(e) => return reject(&doc, REASON_SCHEMA, e.to_string()),
    };

    let mut seen = HashSet::new();
    let mut passages = Vec::with_capacity(payload.passages.len());
    for p in payload.passages {
        if !seen.insert(p.passage_id.clone()) {
            return reject(&doc, REASON_SCHEMA, format!("duplicate passage id {}", p.passage_id));
        }
        let mut spans = Vec::with_capacity(p.spans.len());
        for s in p.spans {
            let Some(actual) = char_slice(&p.text, s.start, s.end) else {
                return reject(
                    &doc,
                    REASON_SCHEMA,
                    format!("passage {}: span [{}, {}) out of bounds", p.passage_id, s.start, s.end),
                );
            };
            if s.text.as_deref().is_some_and(|t| t != actual) {
                return reject(
                    &doc,
                    REASON_SCHEMA,
                    format!("passage {}: span [{}, {}) text mismatch", p.passage_id, s.start, s.end),
                );
            }
            spans.push(Span {
                start: s.start,
                end: s.end,
                label: s.label,
                text: actual.to_string(),
            });
        }
        if let Err(e) = validate_spans(&p.text, &spans) {
            return reject(&doc, REASON_SCHEMA, format!("passage {}: {e}", p.passage_id));
        }
        passages.push(Passage {
            passage_id: PassageId(p.passage_id),
            text: p.text,
            spans,
            layout_tokens: p.layout_tokens,
        });
    }

    let mut candidates = Vec::with_capacity(payload.candidate_records.len());
    for (i, c) in payload.candidate_records.into_iter().enumerate() {
        if !seen.contains(&c.passage_id) {
            return reject(
                &doc,
                REASON_SCHEMA,
                format!("candidate {i} references unknown passage {}", c.passage_id),
            );
        }
        if c.material_raw.trim().is_empty() {
            return reject(&doc, REASON_SCHEMA, format!("candidate {i} has an empty material"));
        }
        candidates.push(RecordFields {
            formula: c.formula.unwrap_or_else(|| c.material_raw.clone()),
            material_raw: c.material_raw,
            tc_raw: c.tc_raw,
            pressure_raw: c.pressure_raw.filter(|p| !p.trim().is_empty()),
            passage_id: PassageId(c.passage_id),
        });
    }

    if payload.page_count > MAX_PAGE_COUNT {
        return reject(
            &doc,
            REASON_TOO_BIG,
            format!("{} pages (limit {MAX_PAGE_COUNT})", payload.page_count),
        );
    }
    if passages.iter().all(|p| p.text.trim().is_empty()) {
        return reject(&doc, REASON_NO_TEXT, "document contains no text");
    }

    Prepared::Accepted {
        document_id,
        page_count: payload.page_count,
        passages,
        candidates,
    }
}

fn failed(document_id: String, reason: &str, detail: String, now: Timestamp) -> ProcessingLogEntry {
    ProcessingLogEntry {
        document_id,
        outcome: ProcessingOutcome::Failed,
        reason: Some(reason.to_string()),
        detail: Some(detail),
        counts: ProcessingCounts::default(),
        timestamp: now,
    }
}

fn commit_prepared(store: &mut Store, prepared: Prepared, now: Timestamp) -> Result<ProcessingLogEntry, StoreError> {
    let entry = match prepared {
        Prepared::Rejected {
            document_id,
            reason,
            detail,
        } => failed(document_id, reason, detail, now),
        Prepared::Accepted {
            document_id,
            page_count,
            passages,
            candidates,
        } => {
            if store.document(&document_id).is_some() {
                failed(
                    document_id.to_string(),
                    REASON_DUPLICATE,
                    "document already ingested".into(),
                    now,
                )
            } else {
                let mut ops = Vec::with_capacity(candidates.len() + 2);
                let counts = ProcessingCounts {
                    passages: passages.len(),
                    records: candidates.len(),
                };
                ops.push(Op::InsertDocument(Document {
                    document_id: document_id.clone(),
                    page_count,
                    passages,
                    ingested_at: now,
                }));
                let base = store.record_count();
                for (i, fields) in candidates.into_iter().enumerate() {
                    let id = crate::model::RecordId(format!("rec-{:06}", base + i + 1));
                    let record = make_record(id, document_id.as_str(), fields, now)?;
                    ops.push(Op::InsertRecord(with_parsed_quantities(record)));
                }
                let entry = ProcessingLogEntry {
                    document_id: document_id.to_string(),
                    outcome: ProcessingOutcome::Ok,
                    reason: None,
                    detail: None,
                    counts,
                    timestamp: now,
                };
                ops.push(Op::ProcessingLog(entry.clone()));
                store.commit(ops)?;
                return Ok(entry);
            }
        }
    };
    store.append_processing_log(entry.clone())?;
    Ok(entry)
}

/// Splits a batch file into raw payloads. `.jsonl` holds one payload per
/// line; `.json` holds one payload or an array of them. Unparseable input
/// becomes a `Value::String` carrying the parse error, which `prepare`
/// rejects as a schema failure.
fn read_payloads(path: &Path) -> Result<Vec<Value>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let is_jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let parse = |s: &str| serde_json::from_str::<Value>(s).unwrap_or_else(|e| Value::String(e.to_string()));
    if is_jsonl {
        return Ok(text.lines().filter(|l| !l.trim().is_empty()).map(parse).collect());
    }
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(match parse(&text) {
        Value::Array(items) => items,
        other => vec![other],
    })
}

fn batch_files(path: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let unreadable = |source| IngestError::Unreadable {
        path: path.to_path_buf(),
        source,
    };
    let meta = fs::metadata(path).map_err(unreadable)?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(unreadable)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json" || e == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

impl Stage {
    /// Ingests one raw JSON payload.
    pub fn ingest(&self, raw: &Value) -> Result<ProcessingLogEntry, StoreError> {
        let prepared = prepare(raw);
        let now = self.now();
        self.write(|store| commit_prepared(store, prepared, now))
    }

    pub fn ingest_payload(&self, payload: ExtractionPayload) -> Result<ProcessingLogEntry, StoreError> {
        let prepared = prepare_payload(payload);
        let now = self.now();
        self.write(|store| commit_prepared(store, prepared, now))
    }

    /// Ingests every payload under `path` (a file, or a directory of
    /// `.json`/`.jsonl` files in name order). Payload checks run in
    /// parallel; commits happen in input order.
    pub fn ingest_batch(&self, path: impl AsRef<Path>) -> Result<Vec<ProcessingLogEntry>, IngestError> {
        let mut raws = Vec::new();
        for file in batch_files(path.as_ref())? {
            raws.extend(read_payloads(&file)?);
        }
        let prepared = map_batch(&raws, prepare);
        let now = self.now();
        let entries = self.write(|store| {
            prepared
                .into_iter()
                .map(|p| commit_prepared(store, p, now))
                .collect::<Result<Vec<_>, _>>()
        })?;
        Ok(entries)
    }

    pub fn processing_log(&self, document_id: Option<&str>) -> Vec<ProcessingLogEntry> {
        self.read(|store| {
            store
                .processing_log()
                .iter()
                .filter(|e| document_id.is_none_or(|d| e.document_id == d))
                .cloned()
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CurationState, FixedClock};
    use crate::workflow::StageConfig;
    use chrono::{TimeZone, Utc};
    use serde_json::json;
    use std::sync::Arc;

    fn stage() -> Stage {
        let clock = FixedClock(Utc.with_ymd_and_hms(2024, 2, 2, 10, 0, 0).unwrap());
        Stage::in_memory(Arc::new(clock), StageConfig::default())
    }

    fn payload(doc: &str, pages: u32) -> Value {
        json!({
            "document_id": doc,
            "page_count": pages,
            "passages": [
                {"passage_id": "p1", "text": "MgB2 becomes superconducting at 39 K.",
                 "spans": [{"start": 0, "end": 4, "label": "material"}, {"start": 32, "end": 36, "label": "tcValue"}]},
                {"passage_id": "p2", "text": "Under 15 GPa the Tc of MgB2 drops to 12 K.", "spans": []}
            ],
            "candidate_records": [
                {"material_raw": "MgB2", "tc_raw": "39 K", "passage_id": "p1"},
                {"material_raw": "MgB2", "tc_raw": "12 K", "pressure_raw": "15 GPa", "passage_id": "p2"},
                {"material_raw": "MgB2", "formula": "MgB2", "tc_raw": "12 K", "passage_id": "p2"}
            ]
        })
    }

    #[test]
    fn accepted_payload_creates_new_records() {
        let stage = stage();
        let entry = stage.ingest(&payload("0aa1b3161f", 5)).unwrap();
        assert_eq!(entry.outcome, ProcessingOutcome::Ok);
        assert_eq!(
            entry.counts,
            ProcessingCounts {
                passages: 2,
                records: 3
            }
        );
        stage.read(|s| {
            assert_eq!(s.record_count(), 3);
            assert!(s.records().all(|r| r.state == CurationState::NEW));
            let r2 = s.record(&"rec-000002".into()).unwrap();
            assert_eq!(r2.tc_kelvin, Some(12.0));
            assert_eq!(r2.pressure_gpa, Some(15.0));
            let spans = &s.passage(&r2.document_id, &"p1".into()).unwrap().spans;
            assert_eq!(spans[1].text, "39 K");
            assert_eq!(s.processing_log().len(), 1);
        });
    }

    #[test]
    fn rejections_are_logged_and_leave_nothing_behind() {
        let stage = stage();
        let too_big = stage.ingest(&payload("0021fd339f", 101)).unwrap();
        assert_eq!(too_big.reason.as_deref(), Some(REASON_TOO_BIG));

        let no_text = stage
            .ingest(&json!({"document_id": "039105663f", "page_count": 3, "passages": []}))
            .unwrap();
        assert_eq!(no_text.reason.as_deref(), Some(REASON_NO_TEXT));

        let blank = stage
            .ingest(&json!({"document_id": "02c4f00127", "page_count": 3,
                "passages": [{"passage_id": "p", "text": "  "}]}))
            .unwrap();
        assert_eq!(blank.reason.as_deref(), Some(REASON_NO_TEXT));

        let schema = stage
            .ingest(&json!({"document_id": "nothex", "page_count": 1}))
            .unwrap();
        assert_eq!(schema.reason.as_deref(), Some(REASON_SCHEMA));
        let schema = stage.ingest(&json!({"page_count": 1})).unwrap();
        assert_eq!(schema.reason.as_deref(), Some(REASON_SCHEMA));

        let mut dangling = payload("021c413172", 4);
        dangling["candidate_records"][0]["passage_id"] = json!("p9");
        assert_eq!(stage.ingest(&dangling).unwrap().reason.as_deref(), Some(REASON_SCHEMA));

        let mut bad_span = payload("021c413172", 4);
        bad_span["passages"][0]["spans"][0]["end"] = json!(400);
        assert_eq!(stage.ingest(&bad_span).unwrap().reason.as_deref(), Some(REASON_SCHEMA));

        stage.read(|s| {
            assert_eq!(s.record_count(), 0);
            assert_eq!(s.documents().count(), 0);
            assert_eq!(s.processing_log().len(), 7);
            assert!(s
                .processing_log()
                .iter()
                .all(|e| e.outcome == ProcessingOutcome::Failed && e.reason.is_some()));
        });
    }

    #[test]
    fn duplicate_document_is_rejected() {
        let stage = stage();
        stage.ingest(&payload("0aa1b3161f", 5)).unwrap();
        let again = stage.ingest(&payload("0aa1b3161f", 5)).unwrap();
        assert_eq!(again.reason.as_deref(), Some(REASON_DUPLICATE));
        assert_eq!(stage.read(|s| s.record_count()), 3);
    }

    #[test]
    fn batch_continues_past_failures() {
        let dir = tempfile::tempdir().unwrap();
        let lines = [
            payload("0aa1b3161f", 5).to_string(),
            "{not json".to_string(),
            payload("0021fd339f", 5).to_string(),
            payload("0aa1b3161f", 5).to_string(),
        ];
        fs::write(dir.path().join("batch.jsonl"), lines.join("\n")).unwrap();
        fs::write(dir.path().join("empty.json"), "").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

        let stage = stage();
        let entries = stage.ingest_batch(dir.path()).unwrap();
        let reasons: Vec<Option<&str>> = entries.iter().map(|e| e.reason.as_deref()).collect();
        assert_eq!(reasons, vec![None, Some(REASON_SCHEMA), None, Some(REASON_DUPLICATE)]);

        assert!(stage.ingest_batch(dir.path().join("empty.json")).unwrap().is_empty());
        assert!(matches!(
            stage.ingest_batch(dir.path().join("missing.json")),
            Err(IngestError::Unreadable { .. })
        ));
    }
}
