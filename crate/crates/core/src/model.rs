//! Shared domain types: curation state, error types, records and entity spans.
//!
//! Everything here is an immutable value object. Mutation of stored records
//! goes through [`crate::workflow`] and [`crate::store`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// UTC timestamp, truncated to whole seconds.
pub type Timestamp = DateTime<Utc>;

pub fn truncate_to_seconds(ts: Timestamp) -> Timestamp {
    ts.trunc_subsecs(0)
}

/// Source of "now" for everything that stamps records and logs.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        truncate_to_seconds(Utc::now())
    }
}

/// Always returns the same instant. Used for reproducible stores.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub Timestamp);

impl Clock for FixedClock {
    fn now(&self) -> Timestamp {
        self.0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("material mention must not be empty")]
    EmptyMaterial,
    #[error("malformed document id {0:?}: expected 10 lowercase hex characters")]
    MalformedDocumentId(String),
    #[error("state ({agent}, {status}) is not a valid curation state")]
    InvalidState { agent: Agent, status: Status },
    #[error("span [{start}, {end}) is out of bounds for a passage of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("span [{start}, {end}) text {expected:?} does not match passage text {actual:?}")]
    SpanTextMismatch {
        start: usize,
        end: usize,
        expected: String,
        actual: String,
    },
    #[error("spans [{0}, {1}) and [{2}, {3}) overlap")]
    OverlappingSpans(usize, usize, usize, usize),
    #[error("unknown {kind} {value:?}")]
    UnknownVariant { kind: &'static str, value: String },
}

/// Generates the lowercase-string round trip shared by all the closed enums.
macro_rules! string_enum {
    ($name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(ModelError::UnknownVariant { kind: $kind, value: other.to_string() }),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    Automatic,
    Manual,
}

string_enum!(Agent, "agent", {
    Automatic => "automatic",
    Manual => "manual",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    New,
    Curated,
    Validated,
    Invalid,
    Obsolete,
    Removed,
}

string_enum!(Status, "status", {
    New => "new",
    Curated => "curated",
    Validated => "validated",
    Invalid => "invalid",
    Obsolete => "obsolete",
    Removed => "removed",
});

impl Status {
    /// Internal statuses are hidden from every listing.
    pub fn is_internal(self) -> bool {
        matches!(self, Status::Obsolete | Status::Removed)
    }
}

/// An (agent, status) pair. Construction rejects combinations that the
/// workflow can never produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct CurationState {
    agent: Agent,
    status: Status,
}

impl CurationState {
    pub const NEW: CurationState = CurationState {
        agent: Agent::Automatic,
        status: Status::New,
    };

    pub fn new(agent: Agent, status: Status) -> Result<Self, ModelError> {
        let ok = match status {
            Status::New => agent == Agent::Automatic,
            Status::Curated | Status::Validated | Status::Removed => agent == Agent::Manual,
            Status::Invalid | Status::Obsolete => true,
        };
        if ok {
            Ok(CurationState { agent, status })
        } else {
            Err(ModelError::InvalidState { agent, status })
        }
    }

    pub(crate) const fn manual(status: Status) -> Self {
        CurationState {
            agent: Agent::Manual,
            status,
        }
    }

    pub fn agent(&self) -> Agent {
        self.agent
    }

    pub fn status(&self) -> Status {
        self.status
    }
}

impl fmt::Display for CurationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.agent, self.status)
    }
}

impl<'de> Deserialize<'de> for CurationState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            agent: Agent,
            status: Status,
        }
        let raw = Raw::deserialize(deserializer)?;
        CurationState::new(raw.agent, raw.status).map_err(serde::de::Error::custom)
    }
}

/// Reason a curator (or the anomaly detector) attaches to a modification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    FromTable,
    Extraction,
    Linking,
    TcClassification,
    CompositionResolution,
    ValueResolution,
    AnomalyDetection,
    CurationAmends,
}

string_enum!(ErrorType, "error type", {
    FromTable => "from_table",
    Extraction => "extraction",
    Linking => "linking",
    TcClassification => "tc_classification",
    CompositionResolution => "composition_resolution",
    ValueResolution => "value_resolution",
    AnomalyDetection => "anomaly_detection",
    CurationAmends => "curation_amends",
});

/// Label set of the upstream entity extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityLabel {
    #[serde(rename = "class")]
    Class,
    #[serde(rename = "material")]
    Material,
    #[serde(rename = "me_method")]
    MeMethod,
    #[serde(rename = "pressure")]
    Pressure,
    #[serde(rename = "tc")]
    Tc,
    #[serde(rename = "tcValue")]
    TcValue,
}

string_enum!(EntityLabel, "entity label", {
    Class => "class",
    Material => "material",
    MeMethod => "me_method",
    Pressure => "pressure",
    Tc => "tc",
    TcValue => "tcValue",
});

/// Ten lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DocumentId(String);

impl DocumentId {
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        let ok = raw.len() == 10 && raw.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if ok {
            Ok(DocumentId(raw.to_string()))
        } else {
            Err(ModelError::MalformedDocumentId(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DocumentId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        DocumentId::parse(&value)
    }
}

impl From<DocumentId> for String {
    fn from(value: DocumentId) -> Self {
        value.0
    }
}

impl fmt::Display for DocumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

macro_rules! opaque_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                $name(value.to_string())
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                $name(value)
            }
        }
    };
}

opaque_id!(RecordId);
opaque_id!(PassageId);
opaque_id!(ExampleId);
opaque_id!(UserId);

/// A labelled character interval `[start, end)` of a passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
    pub text: String,
}

/// Character-indexed substring; `None` when the range is out of bounds.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let from = indices.nth(start)?;
    let to = if end == start {
        from
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[from..to])
}

/// Checks the span invariants of a whole passage: bounds, text equality and
/// pairwise non-overlap.
pub fn validate_spans(passage: &str, spans: &[Span]) -> Result<(), ModelError> {
    let len = passage.chars().count();
    for span in spans {
        if span.start >= span.end || span.end > len {
            return Err(ModelError::SpanOutOfBounds {
                start: span.start,
                end: span.end,
                len,
            });
        }
        let actual = char_slice(passage, span.start, span.end).unwrap_or_default();
        if actual != span.text {
            return Err(ModelError::SpanTextMismatch {
                start: span.start,
                end: span.end,
                expected: span.text.clone(),
                actual: actual.to_string(),
            });
        }
    }
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(ModelError::OverlappingSpans(
                pair[0].start,
                pair[0].end,
                pair[1].start,
                pair[1].end,
            ));
        }
    }
    Ok(())
}

/// One material / T_c / pressure tuple extracted from a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRecord {
    pub record_id: RecordId,
    pub document_id: DocumentId,
    pub material_raw: String,
    pub formula: String,
    pub tc_raw: String,
    pub tc_kelvin: Option<f64>,
    pub pressure_raw: Option<String>,
    pub pressure_gpa: Option<f64>,
    pub passage_id: PassageId,
    pub state: CurationState,
    pub error_type: Option<ErrorType>,
    pub previous_version: Option<RecordId>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
    pub last_editor: Option<UserId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

/// Extracted values of a record before it is given an identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFields {
    pub material_raw: String,
    pub formula: String,
    pub tc_raw: String,
    #[serde(default)]
    pub pressure_raw: Option<String>,
    pub passage_id: PassageId,
}

/// Builds a freshly extracted record in state (automatic, new). Parsed
/// quantities are left empty.
pub fn make_record(
    record_id: RecordId,
    document_id: &str,
    fields: RecordFields,
    at: Timestamp,
) -> Result<MaterialRecord, ModelError> {
    let document_id = DocumentId::parse(document_id)?;
    if fields.material_raw.trim().is_empty() {
        return Err(ModelError::EmptyMaterial);
    }
    let at = truncate_to_seconds(at);
    Ok(MaterialRecord {
        record_id,
        document_id,
        material_raw: fields.material_raw,
        formula: fields.formula,
        tc_raw: fields.tc_raw,
        tc_kelvin: None,
        pressure_raw: fields.pressure_raw,
        pressure_gpa: None,
        passage_id: fields.passage_id,
        state: CurationState::NEW,
        error_type: None,
        previous_version: None,
        created_at: at,
        updated_at: at,
        last_editor: None,
        extra: BTreeMap::new(),
    })
}

pub fn is_visible(record: &MaterialRecord) -> bool {
    !record.state.status().is_internal()
}
