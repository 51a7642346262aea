//! Training examples captured from corrections.
//!
//! Every update or removal snapshots the source passage of the corrected
//! record (text, entity spans, layout tokens) as a pending example. Examples
//! move forward only: pending -> sent -> exported, with deletion possible
//! before export.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_spans, DocumentId, EntityLabel, ExampleId, ModelError, RecordId, Span, Timestamp};
use crate::store::{Passage, Store, StoreError};
use crate::workflow::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutToken {
    pub text: String,
    pub page: u32,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleStatus {
    Pending,
    Sent,
    Exported,
    Deleted,
}

impl fmt::Display for ExampleStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExampleStatus::Pending => "pending",
            ExampleStatus::Sent => "sent",
            ExampleStatus::Exported => "exported",
            ExampleStatus::Deleted => "deleted",
        })
    }
}

impl std::str::FromStr for ExampleStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ExampleStatus::Pending),
            "sent" => Ok(ExampleStatus::Sent),
            "exported" => Ok(ExampleStatus::Exported),
            "deleted" => Ok(ExampleStatus::Deleted),
            other => Err(format!("unknown example status {other:?}")),
        }
    }
}

impl ExampleStatus {
    pub fn can_become(self, next: ExampleStatus) -> bool {
        use ExampleStatus::*;
        matches!(
            (self, next),
            (Pending, Sent) | (Pending, Exported) | (Sent, Exported) | (Pending, Deleted) | (Sent, Deleted)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub example_id: ExampleId,
    pub document_id: DocumentId,
    pub passage_text: String,
    pub spans: Vec<Span>,
    pub layout_tokens: Vec<LayoutToken>,
    pub status: ExampleStatus,
    pub source_record_id: RecordId,
    pub captured_at: Timestamp,
}

impl TrainingExample {
    /// Snapshot of `passage` taken on behalf of `source`.
    pub fn capture(
        example_id: ExampleId,
        document_id: DocumentId,
        passage: &Passage,
        source: RecordId,
        at: Timestamp,
    ) -> Self {
        TrainingExample {
            example_id,
            document_id,
            passage_text: passage.text.clone(),
            spans: passage.spans.clone(),
            layout_tokens: passage.layout_tokens.clone(),
            status: ExampleStatus::Pending,
            source_record_id: source,
            captured_at: at,
        }
    }
}

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("unknown training example {0}")]
    UnknownExample(ExampleId),
    #[error("training example {id} cannot go from {from} to {to}")]
    InvalidTransition {
        id: ExampleId,
        from: ExampleStatus,
        to: ExampleStatus,
    },
    #[error("invalid export document: {0}")]
    InvalidExport(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleFilter {
    #[serde(default)]
    pub status: Option<ExampleStatus>,
    #[serde(default)]
    pub document_id: Option<DocumentId>,
    /// Include deleted examples when no status is requested.
    #[serde(default)]
    pub include_deleted: bool,
}

impl ExampleFilter {
    pub fn status(status: ExampleStatus) -> Self {
        ExampleFilter {
            status: Some(status),
            ..Default::default()
        }
    }

    pub fn matches(&self, example: &TrainingExample) -> bool {
        let status_ok = match self.status {
            Some(s) => example.status == s,
            None => self.include_deleted || example.status != ExampleStatus::Deleted,
        };
        status_ok && self.document_id.as_ref().is_none_or(|d| *d == example.document_id)
    }
}

/// What to export: explicit ids, or everything matching a filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExportSelection {
    Ids(Vec<ExampleId>),
    Filter(ExampleFilter),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSpan {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
}

/// One entry of the interchange document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportEntry {
    pub example_id: ExampleId,
    pub document_id: DocumentId,
    pub text: String,
    pub spans: Vec<ExportSpan>,
    pub layout_tokens: Vec<LayoutToken>,
    pub source_record_id: RecordId,
    pub captured_at: Timestamp,
}

impl From<&TrainingExample> for ExportEntry {
    fn from(e: &TrainingExample) -> Self {
        ExportEntry {
            example_id: e.example_id.clone(),
            document_id: e.document_id.clone(),
            text: e.passage_text.clone(),
            spans: e
                .spans
                .iter()
                .map(|s| ExportSpan {
                    start: s.start,
                    end: s.end,
                    label: s.label,
                })
                .collect(),
            layout_tokens: e.layout_tokens.clone(),
            source_record_id: e.source_record_id.clone(),
            captured_at: e.captured_at,
        }
    }
}

impl ExportEntry {
    /// Rebuilds full spans (with their text) from the passage, enforcing the
    /// span invariants.
    pub fn spans_with_text(&self) -> Result<Vec<Span>, ModelError> {
        let spans: Vec<Span> = self
            .spans
            .iter()
            .map(|s| Span {
                start: s.start,
                end: s.end,
                label: s.label,
                text: crate::model::char_slice(&self.text, s.start, s.end)
                    .unwrap_or_default()
                    .to_string(),
            })
            .collect();
        let len = self.text.chars().count();
        if let Some(bad) = self.spans.iter().find(|s| s.start >= s.end || s.end > len) {
            return Err(ModelError::SpanOutOfBounds {
                start: bad.start,
                end: bad.end,
                len,
            });
        }
        validate_spans(&self.text, &spans)?;
        Ok(spans)
    }
}

/// Serialises an export document (pretty JSON array, trailing newline).
pub fn render_export(entries: &[ExportEntry]) -> String {
    let mut out = serde_json::to_string_pretty(entries).expect("export entries serialise");
    out.push('\n');
    out
}

pub fn parse_export(doc: &str) -> Result<Vec<ExportEntry>, CollectorError> {
    let entries: Vec<ExportEntry> =
        serde_json::from_str(doc).map_err(|e| CollectorError::InvalidExport(e.to_string()))?;
    for entry in &entries {
        entry
            .spans_with_text()
            .map_err(|e| CollectorError::InvalidExport(format!("{}: {e}", entry.example_id)))?;
    }
    Ok(entries)
}

impl Stage {
    pub fn list_examples(&self, filter: &ExampleFilter) -> Vec<TrainingExample> {
        self.read(|store| store.examples().filter(|e| filter.matches(e)).cloned().collect())
    }

    pub fn get_example(&self, id: &ExampleId) -> Result<TrainingExample, CollectorError> {
        self.read(|store| store.example(id).cloned())
            .ok_or_else(|| CollectorError::UnknownExample(id.clone()))
    }

    fn move_example(&self, id: &ExampleId, to: ExampleStatus) -> Result<TrainingExample, CollectorError> {
        self.write(|store| {
            let mut example = store
                .example(id)
                .cloned()
                .ok_or_else(|| CollectorError::UnknownExample(id.clone()))?;
            if !example.status.can_become(to) {
                return Err(CollectorError::InvalidTransition {
                    id: id.clone(),
                    from: example.status,
                    to,
                });
            }
            example.status = to;
            store.put_example(example.clone())?;
            Ok(example)
        })
    }

    pub fn mark_sent(&self, id: &ExampleId) -> Result<TrainingExample, CollectorError> {
        self.move_example(id, ExampleStatus::Sent)
    }

    pub fn delete_example(&self, id: &ExampleId) -> Result<(), CollectorError> {
        self.move_example(id, ExampleStatus::Deleted).map(|_| ())
    }

    /// The entries an export of `selection` would produce, without marking
    /// anything.
    pub fn preview_export(&self, selection: &ExportSelection) -> Result<Vec<ExportEntry>, CollectorError> {
        self.read(|store| select_for_export(store, selection))
            .map(|selected| selected.iter().map(ExportEntry::from).collect())
    }

    /// Builds the interchange document for the selection and marks the
    /// selected examples exported. Deleted examples are never exported;
    /// already-exported ones are re-emitted unchanged. Entries are ordered by
    /// capture time, then id.
    pub fn export_examples(&self, selection: &ExportSelection) -> Result<Vec<ExportEntry>, CollectorError> {
        self.write(|store| {
            let selected = select_for_export(store, selection)?;
            let entries: Vec<ExportEntry> = selected.iter().map(ExportEntry::from).collect();
            let changed: Vec<TrainingExample> = selected
                .into_iter()
                .filter(|e| e.status != ExampleStatus::Exported)
                .map(|mut e| {
                    e.status = ExampleStatus::Exported;
                    e
                })
                .collect();
            if !changed.is_empty() {
                store.put_examples(changed)?;
            }
            Ok(entries)
        })
    }
}

fn select_for_export(store: &Store, selection: &ExportSelection) -> Result<Vec<TrainingExample>, CollectorError> {
    let mut selected: Vec<TrainingExample> = match selection {
        ExportSelection::Ids(ids) => ids
            .iter()
            .map(|id| {
                store
                    .example(id)
                    .cloned()
                    .ok_or_else(|| CollectorError::UnknownExample(id.clone()))
            })
            .collect::<Result<_, _>>()?,
        ExportSelection::Filter(filter) => store.examples().filter(|e| filter.matches(e)).cloned().collect(),
    };
    selected.retain(|e| e.status != ExampleStatus::Deleted);
    selected.sort_by(|a, b| (a.captured_at, &a.example_id).cmp(&(b.captured_at, &b.example_id)));
    selected.dedup_by(|a, b| a.example_id == b.example_id);
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_is_forward_only() {
        use ExampleStatus::*;
        assert!(Pending.can_become(Sent));
        assert!(Sent.can_become(Exported));
        assert!(Pending.can_become(Deleted));
        assert!(!Sent.can_become(Sent));
        assert!(!Sent.can_become(Pending));
        assert!(!Exported.can_become(Deleted));
        assert!(!Deleted.can_become(Sent));
    }

    #[test]
    fn export_parse_rejects_bad_spans() {
        let doc = r#"[{"example_id":"ex-1","document_id":"0aa1b3161f","text":"MgB2","spans":[{"start":0,"end":9,"label":"material"}],
            "layout_tokens":[],"source_record_id":"rec-1","captured_at":"2024-01-01T00:00:00Z"}]"#;
        assert!(matches!(parse_export(doc), Err(CollectorError::InvalidExport(_))));
        assert!(parse_export("[]").unwrap().is_empty());
    }
}
