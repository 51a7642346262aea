//! Embedded, file-backed persistence.
//!
//! The store keeps its whole state in memory and persists every mutation as
//! one JSON line ("commit") appended to `journal.jsonl`. Reopening replays the
//! journal. A commit is the unit of atomicity: it is validated as a whole
//! before it is written, and a torn final line left by a crash is ignored on
//! replay.
//!
//! Only one writer may use a store directory at a time.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{LayoutToken, TrainingExample};
use crate::ingestion::ProcessingLogEntry;
use crate::model::{
    is_visible, validate_spans, DocumentId, ErrorType, ExampleId, MaterialRecord, ModelError, PassageId, RecordId,
    Span, Status, Timestamp,
};
use crate::workflow::CurationLogEntry;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const DUMP_FORMAT_VERSION: u32 = 1;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("duplicate {kind} id {id}")]
    Duplicate { kind: &'static str, id: String },
    #[error("record {record} points at missing or non-obsolete previous version {previous}")]
    BrokenChain { record: RecordId, previous: RecordId },
    #[error("record {0} would fork its version chain")]
    ForkedChain(RecordId),
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error("unknown {kind} {id}")]
    Unknown { kind: &'static str, id: String },
    #[error("record {record} changed immutable field {field}")]
    ImmutableField { record: RecordId, field: &'static str },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid entity: {0}")]
    Invalid(#[from] ModelError),
    #[error("load requires an empty store")]
    NotEmpty,
    #[error("malformed dump line {line}: {message}")]
    MalformedDump { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: PassageId,
    pub text: String,
    #[serde(default)]
    pub spans: Vec<Span>,
    #[serde(default)]
    pub layout_tokens: Vec<LayoutToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub document_id: DocumentId,
    pub page_count: u32,
    pub passages: Vec<Passage>,
    pub ingested_at: Timestamp,
}

impl Document {
    pub fn passage(&self, id: &PassageId) -> Option<&Passage> {
        self.passages.iter().find(|p| &p.passage_id == id)
    }
}

/// One atomic mutation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum Op {
    InsertRecord(MaterialRecord),
    ReplaceRecord(MaterialRecord),
    InsertDocument(Document),
    PutExample(TrainingExample),
    ProcessingLog(ProcessingLogEntry),
    CurationLog(CurationLogEntry),
}

#[derive(Debug, Serialize, Deserialize)]
struct Commit {
    seq: u64,
    ops: Vec<Op>,
}

/// One line of a `dump`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DumpLine {
    Meta { format_version: u32 },
    Document(Document),
    Record(MaterialRecord),
    TrainingExample(TrainingExample),
    ProcessingLog(ProcessingLogEntry),
    CurationLog(CurationLogEntry),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    Material,
    TcKelvin,
    PressureGpa,
    DocumentId,
    UpdatedAt,
}

impl std::str::FromStr for SortKey {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "material" => SortKey::Material,
            "tc_kelvin" | "tc" => SortKey::TcKelvin,
            "pressure_gpa" | "pressure" => SortKey::PressureGpa,
            "document_id" => SortKey::DocumentId,
            "updated_at" => SortKey::UpdatedAt,
            other => return Err(StoreError::InvalidQuery(format!("unknown sort key {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    #[default]
    Asc,
    Desc,
}

/// Table-view query. All filters are optional and combine with AND.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Query {
    pub status: Option<Status>,
    pub error_type: Option<ErrorType>,
    pub document_id: Option<String>,
    /// Case-insensitive substring of the material mention or formula.
    pub material: Option<String>,
    pub tc_min: Option<f64>,
    pub tc_max: Option<f64>,
    pub pressure_min: Option<f64>,
    pub pressure_max: Option<f64>,
    pub sort: Option<String>,
    pub order: Option<SortOrder>,
    /// 1-based.
    pub page: Option<usize>,
    pub size: Option<usize>,
}

pub const DEFAULT_PAGE_SIZE: usize = 50;

impl Query {
    fn sort_key(&self) -> Result<SortKey, StoreError> {
        self.sort.as_deref().map_or(Ok(SortKey::DocumentId), str::parse)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let size = self.size.unwrap_or(DEFAULT_PAGE_SIZE);
        if !(1..=MAX_PAGE_SIZE).contains(&size) {
            return Err(StoreError::InvalidQuery(format!(
                "page size {size} outside [1, {MAX_PAGE_SIZE}]"
            )));
        }
        if self.page == Some(0) {
            return Err(StoreError::InvalidQuery("pages start at 1".into()));
        }
        if let Some(doc) = &self.document_id {
            DocumentId::parse(doc)?;
        }
        self.sort_key().map(|_| ())
    }

    fn matches(&self, r: &MaterialRecord) -> bool {
        fn in_range(v: Option<f64>, lo: Option<f64>, hi: Option<f64>) -> bool {
            if lo.is_none() && hi.is_none() {
                return true;
            }
            v.is_some_and(|v| lo.is_none_or(|lo| v >= lo) && hi.is_none_or(|hi| v <= hi))
        }
        let material_ok = self.material.as_ref().is_none_or(|needle| {
            let needle = needle.to_lowercase();
            r.material_raw.to_lowercase().contains(&needle) || r.formula.to_lowercase().contains(&needle)
        });
        is_visible(r)
            && self.status.is_none_or(|s| r.state.status() == s)
            && self.error_type.is_none_or(|e| r.error_type == Some(e))
            && self.document_id.as_ref().is_none_or(|d| r.document_id.as_str() == d)
            && material_ok
            && in_range(r.tc_kelvin, self.tc_min, self.tc_max)
            && in_range(r.pressure_gpa, self.pressure_min, self.pressure_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub rows: Vec<T>,
    pub total: usize,
    pub page: usize,
    pub size: usize,
}

fn cmp_opt_f64(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    match (a, b) {
        (Some(a), Some(b)) => a.total_cmp(&b),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
struct State {
    records: IndexMap<RecordId, MaterialRecord>,
    documents: IndexMap<DocumentId, Document>,
    examples: IndexMap<ExampleId, TrainingExample>,
    processing_log: Vec<ProcessingLogEntry>,
    curation_log: Vec<CurationLogEntry>,
    /// previous -> next version.
    next_version: HashMap<RecordId, RecordId>,
}

impl State {
    fn root_of(&self, id: &RecordId) -> RecordId {
        let mut current = id.clone();
        while let Some(prev) = self.records.get(&current).and_then(|r| r.previous_version.clone()) {
            current = prev;
        }
        current
    }

    fn check(&self, op: &Op, pending: &HashMap<RecordId, MaterialRecord>) -> Result<(), StoreError> {
        let lookup = |id: &RecordId| pending.get(id).or_else(|| self.records.get(id));
        match op {
            Op::InsertRecord(r) => {
                if lookup(&r.record_id).is_some() {
                    return Err(StoreError::Duplicate {
                        kind: "record",
                        id: r.record_id.to_string(),
                    });
                }
                if r.material_raw.trim().is_empty() {
                    return Err(ModelError::EmptyMaterial.into());
                }
                if let Some(prev) = &r.previous_version {
                    match lookup(prev) {
                        Some(p) if p.state.status() == Status::Obsolete => {}
                        _ => {
                            return Err(StoreError::BrokenChain {
                                record: r.record_id.clone(),
                                previous: prev.clone(),
                            })
                        }
                    }
                    let forked = self.next_version.contains_key(prev)
                        || pending.values().any(|p| p.previous_version.as_ref() == Some(prev));
                    if forked {
                        return Err(StoreError::ForkedChain(r.record_id.clone()));
                    }
                }
            }
            Op::ReplaceRecord(r) => {
                let old = lookup(&r.record_id).ok_or_else(|| StoreError::UnknownRecord(r.record_id.clone()))?;
                if old.previous_version != r.previous_version {
                    return Err(StoreError::ImmutableField {
                        record: r.record_id.clone(),
                        field: "previous_version",
                    });
                }
                if old.document_id != r.document_id {
                    return Err(StoreError::ImmutableField {
                        record: r.record_id.clone(),
                        field: "document_id",
                    });
                }
            }
            Op::InsertDocument(d) => {
                if self.documents.contains_key(&d.document_id) {
                    return Err(StoreError::Duplicate {
                        kind: "document",
                        id: d.document_id.to_string(),
                    });
                }
                for p in &d.passages {
                    validate_spans(&p.text, &p.spans)?;
                }
            }
            Op::PutExample(e) => validate_spans(&e.passage_text, &e.spans)?,
            Op::ProcessingLog(_) | Op::CurationLog(_) => {}
        }
        Ok(())
    }

    fn validate(&self, ops: &[Op]) -> Result<(), StoreError> {
        let mut pending: HashMap<RecordId, MaterialRecord> = HashMap::new();
        for op in ops {
            self.check(op, &pending)?;
            if let Op::InsertRecord(r) | Op::ReplaceRecord(r) = op {
                pending.insert(r.record_id.clone(), r.clone());
            }
        }
        Ok(())
    }

    fn apply(&mut self, op: Op) {
        match op {
            Op::InsertRecord(r) => {
                if let Some(prev) = &r.previous_version {
                    self.next_version.insert(prev.clone(), r.record_id.clone());
                }
                self.records.insert(r.record_id.clone(), r);
            }
            Op::ReplaceRecord(r) => {
                self.records.insert(r.record_id.clone(), r);
            }
            Op::InsertDocument(d) => {
                self.documents.insert(d.document_id.clone(), d);
            }
            Op::PutExample(e) => {
                self.examples.insert(e.example_id.clone(), e);
            }
            Op::ProcessingLog(e) => self.processing_log.push(e),
            Op::CurationLog(e) => self.curation_log.push(e),
        }
    }
}

struct Journal {
    path: PathBuf,
    file: File,
    sync: bool,
}

/// The record/passage/example/log store.
pub struct Store {
    state: State,
    journal: Option<Journal>,
    seq: u64,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("records", &self.state.records.len())
            .field("path", &self.journal.as_ref().map(|j| &j.path))
            .finish()
    }
}

impl Store {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Store {
            state: State::default(),
            journal: None,
            seq: 0,
        }
    }

    /// Opens (or creates) the store in directory `dir` and replays its journal.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, true)
    }

    /// Like [`Store::open`]; `sync` controls whether each commit is fsynced.
    pub fn open_with(dir: impl AsRef<Path>, sync: bool) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(JOURNAL_FILE);
        let mut store = Store::in_memory();
        let mut valid_len: u64 = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
            let mut lines = reader.split(b'\n').peekable();
            let mut line_no = 0;
            while let Some(line) = lines.next() {
                line_no += 1;
                let bytes = line.map_err(io_err(&path))?;
                let is_last = lines.peek().is_none();
                let commit: Commit = match serde_json::from_slice(&bytes) {
                    Ok(c) => c,
                    // A crash mid-append leaves a torn tail; everything before it is intact.
                    Err(_) if is_last => break,
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            line: line_no,
                            message: e.to_string(),
                        })
                    }
                };
                store.state.validate(&commit.ops).map_err(|e| StoreError::Corrupt {
                    line: line_no,
                    message: e.to_string(),
                })?;
                store.seq = commit.seq;
                for op in commit.ops {
                    store.state.apply(op);
                }
                valid_len += bytes.len() as u64 + 1;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        if file.metadata().map_err(io_err(&path))?.len() > valid_len {
            file.set_len(valid_len).map_err(io_err(&path))?;
        }
        store.journal = Some(Journal { path, file, sync });
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.path.as_path())
    }

    /// Validates and durably applies `ops` as one unit.
    pub fn commit(&mut self, ops: Vec<Op>) -> Result<(), StoreError> {
        if ops.is_empty() {
            return Ok(());
        }
        self.state.validate(&ops)?;
        let commit = Commit { seq: self.seq + 1, ops };
        if let Some(journal) = &mut self.journal {
            let mut line = serde_json::to_vec(&commit).expect("commit serialises");
            line.push(b'\n');
            journal.file.write_all(&line).map_err(io_err(&journal.path))?;
            journal.file.flush().map_err(io_err(&journal.path))?;
            if journal.sync {
                journal.file.sync_data().map_err(io_err(&journal.path))?;
            }
        }
        self.seq = commit.seq;
        for op in commit.ops {
            self.state.apply(op);
        }
        Ok(())
    }

    pub fn put_version(&mut self, record: MaterialRecord) -> Result<(), StoreError> {
        let op = if self.state.records.contains_key(&record.record_id) {
            Op::ReplaceRecord(record)
        } else {
            Op::InsertRecord(record)
        };
        self.commit(vec![op])
    }

    pub fn put_example(&mut self, example: TrainingExample) -> Result<(), StoreError> {
        self.commit(vec![Op::PutExample(example)])
    }

    pub fn put_examples(&mut self, examples: Vec<TrainingExample>) -> Result<(), StoreError> {
        self.commit(examples.into_iter().map(Op::PutExample).collect())
    }

    pub fn append_processing_log(&mut self, entry: ProcessingLogEntry) -> Result<(), StoreError> {
        self.commit(vec![Op::ProcessingLog(entry)])
    }

    pub fn append_curation_log(&mut self, entry: CurationLogEntry) -> Result<(), StoreError> {
        self.commit(vec![Op::CurationLog(entry)])
    }

    // --- reads -------------------------------------------------------------

    pub fn record(&self, id: &RecordId) -> Option<&MaterialRecord> {
        self.state.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &MaterialRecord> {
        self.state.records.values()
    }

    pub fn record_count(&self) -> usize {
        self.state.records.len()
    }

    pub fn next_record_id(&self) -> RecordId {
        RecordId(format!("rec-{:06}", self.state.records.len() + 1))
    }

    pub fn next_example_id(&self) -> ExampleId {
        ExampleId(format!("ex-{:06}", self.state.examples.len() + 1))
    }

    /// Root (oldest) record id of the chain containing `id`.
    pub fn chain_root(&self, id: &RecordId) -> Result<RecordId, StoreError> {
        if !self.state.records.contains_key(id) {
            return Err(StoreError::UnknownRecord(id.clone()));
        }
        Ok(self.state.root_of(id))
    }

    /// Every version of the chain containing `id`, oldest first.
    pub fn chain(&self, id: &RecordId) -> Result<Vec<&MaterialRecord>, StoreError> {
        let mut current = self.chain_root(id)?;
        let mut out = vec![&self.state.records[&current]];
        while let Some(next) = self.state.next_version.get(&current) {
            out.push(&self.state.records[next]);
            current = next.clone();
        }
        Ok(out)
    }

    /// Newest version of the chain containing `id`, regardless of visibility.
    pub fn head(&self, id: &RecordId) -> Result<&MaterialRecord, StoreError> {
        Ok(self.chain(id)?.pop().expect("chains are never empty"))
    }

    /// Latest visible version of the chain containing `id`; `None` once the
    /// chain ends in a removal.
    pub fn get_latest(&self, id: &RecordId) -> Result<Option<&MaterialRecord>, StoreError> {
        let head = self.head(id)?;
        Ok(is_visible(head).then_some(head))
    }

    pub fn query_records(&self, q: &Query) -> Result<Page<MaterialRecord>, StoreError> {
        q.validate()?;
        let key = q.sort_key()?;
        let order = q.order.unwrap_or_default();
        let size = q.size.unwrap_or(DEFAULT_PAGE_SIZE);
        let page = q.page.unwrap_or(1);

        let mut rows: Vec<&MaterialRecord> = self.state.records.values().filter(|r| q.matches(r)).collect();
        rows.sort_by(|a, b| {
            let primary = match key {
                SortKey::Material => a.material_raw.cmp(&b.material_raw),
                SortKey::TcKelvin => cmp_opt_f64(a.tc_kelvin, b.tc_kelvin),
                SortKey::PressureGpa => cmp_opt_f64(a.pressure_gpa, b.pressure_gpa),
                SortKey::DocumentId => std::cmp::Ordering::Equal,
                SortKey::UpdatedAt => a.updated_at.cmp(&b.updated_at),
            };
            let primary = if order == SortOrder::Desc {
                primary.reverse()
            } else {
                primary
            };
            let doc = a.document_id.cmp(&b.document_id);
            let doc = if key == SortKey::DocumentId && order == SortOrder::Desc {
                doc.reverse()
            } else {
                doc
            };
            primary.then(doc).then_with(|| a.record_id.cmp(&b.record_id))
        });
        let total = rows.len();
        let rows = rows
            .into_iter()
            .skip((page - 1).saturating_mul(size))
            .take(size)
            .cloned()
            .collect();
        Ok(Page {
            rows,
            total,
            page,
            size,
        })
    }

    pub fn document(&self, id: &DocumentId) -> Option<&Document> {
        self.state.documents.get(id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.state.documents.values()
    }

    pub fn passage(&self, document: &DocumentId, passage: &PassageId) -> Option<&Passage> {
        self.document(document).and_then(|d| d.passage(passage))
    }

    pub fn example(&self, id: &ExampleId) -> Option<&TrainingExample> {
        self.state.examples.get(id)
    }

    pub fn examples(&self) -> impl Iterator<Item = &TrainingExample> {
        self.state.examples.values()
    }

    pub fn processing_log(&self) -> &[ProcessingLogEntry] {
        &self.state.processing_log
    }

    pub fn curation_log(&self) -> &[CurationLogEntry] {
        &self.state.curation_log
    }

    /// Curation log entries of the chain containing `id`, in insertion order.
    pub fn curation_log_for(&self, id: &RecordId) -> Result<Vec<&CurationLogEntry>, StoreError> {
        let root = self.chain_root(id)?;
        Ok(self.state.curation_log.iter().filter(|e| e.chain_id == root).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.state.records.is_empty()
            && self.state.documents.is_empty()
            && self.state.examples.is_empty()
            && self.state.processing_log.is_empty()
            && self.state.curation_log.is_empty()
    }

    pub fn status_counts(&self) -> BTreeMap<Status, usize> {
        let mut out = BTreeMap::new();
        for r in self.state.records.values() {
            *out.entry(r.state.status()).or_insert(0) += 1;
        }
        out
    }

    // --- dump / load -------------------------------------------------------

    pub fn dump_lines(&self) -> Vec<DumpLine> {
        let mut out = vec![DumpLine::Meta {
            format_version: DUMP_FORMAT_VERSION,
        }];
        out.extend(self.state.documents.values().cloned().map(DumpLine::Document));
        out.extend(self.state.records.values().cloned().map(DumpLine::Record));
        out.extend(self.state.examples.values().cloned().map(DumpLine::TrainingExample));
        out.extend(self.state.processing_log.iter().cloned().map(DumpLine::ProcessingLog));
        out.extend(self.state.curation_log.iter().cloned().map(DumpLine::CurationLog));
        out
    }

    /// Newline-delimited JSON of every entity. Byte-stable for equal stores.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for line in self.dump_lines() {
            out.push_str(&serde_json::to_string(&line).expect("dump line serialises"));
            out.push('\n');
        }
        out
    }

    /// Loads a dump into this (empty) store as a single commit.
    pub fn load(&mut self, ndjson: &str) -> Result<usize, StoreError> {
        if !self.is_empty() {
            return Err(StoreError::NotEmpty);
        }
        let mut records = Vec::new();
        let mut ops = Vec::new();
        for (i, line) in ndjson.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: DumpLine = serde_json::from_str(line).map_err(|e| StoreError::MalformedDump {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                DumpLine::Meta { format_version } if format_version != DUMP_FORMAT_VERSION => {
                    return Err(StoreError::MalformedDump {
                        line: i + 1,
                        message: format!("unsupported format version {format_version}"),
                    })
                }
                DumpLine::Meta { .. } => {}
                DumpLine::Document(d) => ops.push(Op::InsertDocument(d)),
                DumpLine::Record(r) => records.push(Op::InsertRecord(r)),
                DumpLine::TrainingExample(e) => ops.push(Op::PutExample(e)),
                DumpLine::ProcessingLog(e) => ops.push(Op::ProcessingLog(e)),
                DumpLine::CurationLog(e) => ops.push(Op::CurationLog(e)),
            }
        }
        // Documents first, then records in dump order so chains link up.
        let split = ops.iter().take_while(|op| matches!(op, Op::InsertDocument(_))).count();
        let tail = ops.split_off(split);
        let count = ops.len() + records.len() + tail.len();
        ops.extend(records);
        ops.extend(tail);
        self.commit(ops)?;
        Ok(count)
    }
}
