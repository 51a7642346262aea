//! The curation state machine.
//!
//! | status    | allowed manual actions                       |
//! |-----------|----------------------------------------------|
//! | new       | mark_valid, mark_invalid, update, remove     |
//! | curated   | mark_valid, mark_invalid, update, remove     |
//! | validated | mark_invalid, update, remove                 |
//! | invalid   | mark_valid, update, remove                   |
//! | obsolete  | none                                         |
//! | removed   | none                                         |
//!
//! An update never edits a record in place: the current version becomes
//! obsolete and a new (manual, curated) version is linked to it. Updates and
//! removals require an error type and capture a training example. Each
//! successful action appends exactly one curation log entry, and all of it
//! is committed atomically.

use std::fmt;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{check_batch, detect_multi_tc, ScanError, ScanFinding, ScanReport};
use crate::collector::TrainingExample;
use crate::ingestion::{ProcessingLogEntry, ProcessingOutcome};
use crate::model::{
    Agent, Clock, CurationState, DocumentId, ErrorType, MaterialRecord, ModelError, PassageId, RecordId, Status,
    Timestamp, UserId,
};
use crate::parsers::{parse_pressure, parse_temperature};
use crate::store::{Op, Store, StoreError};

/// User recorded on log entries written by the anomaly scan.
pub const ANOMALY_DETECTION_USER: &str = "anomaly-detection";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    MarkValid,
    MarkInvalid,
    Update,
    Remove,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [
        ActionKind::MarkValid,
        ActionKind::MarkInvalid,
        ActionKind::Update,
        ActionKind::Remove,
    ];

    pub fn requires_error_type(self) -> bool {
        matches!(self, ActionKind::Update | ActionKind::Remove)
    }

    pub fn captures_training_data(self) -> bool {
        matches!(self, ActionKind::Update | ActionKind::Remove)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::MarkValid => "mark_valid",
            ActionKind::MarkInvalid => "mark_invalid",
            ActionKind::Update => "update",
            ActionKind::Remove => "remove",
        })
    }
}

/// Field changes carried by an update. Absent fields keep their value; an
/// empty `pressure_raw` clears the pressure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordPatch {
    pub material_raw: Option<String>,
    pub formula: Option<String>,
    pub tc_raw: Option<String>,
    pub pressure_raw: Option<String>,
    pub passage_id: Option<PassageId>,
}

impl RecordPatch {
    pub fn is_empty(&self) -> bool {
        self.material_raw.is_none()
            && self.formula.is_none()
            && self.tc_raw.is_none()
            && self.pressure_raw.is_none()
            && self.passage_id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationAction {
    pub kind: ActionKind,
    #[serde(default)]
    pub payload: Option<RecordPatch>,
    #[serde(default)]
    pub error_type: Option<ErrorType>,
    pub user: UserId,
}

impl CurationAction {
    pub fn mark_valid(user: &str) -> Self {
        Self::bare(ActionKind::MarkValid, None, user)
    }

    pub fn mark_invalid(user: &str) -> Self {
        Self::bare(ActionKind::MarkInvalid, None, user)
    }

    pub fn remove(error_type: ErrorType, user: &str) -> Self {
        Self::bare(ActionKind::Remove, Some(error_type), user)
    }

    pub fn update(patch: RecordPatch, error_type: ErrorType, user: &str) -> Self {
        CurationAction {
            kind: ActionKind::Update,
            payload: Some(patch),
            error_type: Some(error_type),
            user: user.into(),
        }
    }

    fn bare(kind: ActionKind, error_type: Option<ErrorType>, user: &str) -> Self {
        CurationAction {
            kind,
            payload: None,
            error_type,
            user: user.into(),
        }
    }
}

/// What a curation log entry records; anomaly flagging is logged alongside
/// the manual actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogAction {
    MarkValid,
    MarkInvalid,
    Update,
    Remove,
    AnomalyDetection,
}

impl From<ActionKind> for LogAction {
    fn from(kind: ActionKind) -> Self {
        match kind {
            ActionKind::MarkValid => LogAction::MarkValid,
            ActionKind::MarkInvalid => LogAction::MarkInvalid,
            ActionKind::Update => LogAction::Update,
            ActionKind::Remove => LogAction::Remove,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationLogEntry {
    pub record_id: RecordId,
    /// Oldest record of the version chain; groups entries per chain.
    pub chain_id: RecordId,
    pub action: LogAction,
    pub user: UserId,
    pub error_type: Option<ErrorType>,
    pub timestamp: Timestamp,
    pub update_count_after: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    /// Record the action was applied to.
    pub record_id: RecordId,
    pub new_state: CurationState,
    /// Set on update: the freshly created version.
    pub new_record_id: Option<RecordId>,
    pub training_captured: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub record: MaterialRecord,
    pub log: Vec<CurationLogEntry>,
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error("record {record} is not the latest version (latest is {latest})")]
    StaleVersion { record: RecordId, latest: RecordId },
    #[error("{action} is not allowed in state {state}")]
    ForbiddenTransition { action: ActionKind, state: CurationState },
    #[error("{0} requires an error type")]
    MissingErrorType(ActionKind),
    #[error("update requires a non-empty payload")]
    EmptyPayload,
    #[error("record {record} was last corrected by {user}; a different curator must validate it")]
    SameCurator { record: RecordId, user: UserId },
    #[error("invalid payload: {0}")]
    InvalidPayload(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Manual actions permitted from a state.
pub fn allowed_actions(state: CurationState) -> Vec<ActionKind> {
    use ActionKind::*;
    match state.status() {
        Status::New | Status::Curated => vec![MarkValid, MarkInvalid, Update, Remove],
        Status::Validated => vec![MarkInvalid, Update, Remove],
        Status::Invalid => vec![MarkValid, Update, Remove],
        Status::Obsolete | Status::Removed => vec![],
    }
}

/// State an allowed action leads to (for update, the state of the new
/// version).
pub fn target_state(kind: ActionKind) -> CurationState {
    CurationState::manual(match kind {
        ActionKind::MarkValid => Status::Validated,
        ActionKind::MarkInvalid => Status::Invalid,
        ActionKind::Update => Status::Curated,
        ActionKind::Remove => Status::Removed,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Require a different curator for validation after a correction.
    pub double_round: bool,
}

/// Which records a scan covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanSelection {
    All,
    Document(DocumentId),
    Status(Status),
    Ids(Vec<RecordId>),
}

/// The staging area: a store plus the workflow rules that mutate it.
///
/// Reads share the store; every mutation holds the write lock for its whole
/// check-mutate-log step, which makes actions linearizable per chain.
pub struct Stage {
    store: RwLock<Store>,
    clock: Arc<dyn Clock>,
    config: StageConfig,
}

impl fmt::Debug for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stage")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Stage {
    pub fn new(store: Store, clock: Arc<dyn Clock>, config: StageConfig) -> Self {
        Stage {
            store: RwLock::new(store),
            clock,
            config,
        }
    }

    pub fn in_memory(clock: Arc<dyn Clock>, config: StageConfig) -> Self {
        Self::new(Store::in_memory(), clock, config)
    }

    pub fn open(dir: impl AsRef<Path>, clock: Arc<dyn Clock>, config: StageConfig) -> Result<Self, StoreError> {
        Ok(Self::new(Store::open(dir)?, clock, config))
    }

    pub fn config(&self) -> StageConfig {
        self.config
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Runs `f` with shared access to the store.
    pub fn read<R>(&self, f: impl FnOnce(&Store) -> R) -> R {
        let guard = self.store.read().unwrap_or_else(|e| e.into_inner());
        f(&guard)
    }

    /// Runs `f` with exclusive access to the store.
    pub fn write<R>(&self, f: impl FnOnce(&mut Store) -> R) -> R {
        let mut guard = self.store.write().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }

    pub fn get_record(&self, id: &RecordId) -> Result<MaterialRecord, WorkflowError> {
        self.read(|s| s.record(id).cloned())
            .ok_or_else(|| WorkflowError::UnknownRecord(id.clone()))
    }

    pub fn get_latest(&self, id: &RecordId) -> Result<Option<MaterialRecord>, StoreError> {
        self.read(|s| s.get_latest(id).map(|r| r.cloned()))
    }

    pub fn dump(&self) -> String {
        self.read(Store::dump)
    }

    pub fn apply_action(&self, record_id: &RecordId, action: CurationAction) -> Result<ActionOutcome, WorkflowError> {
        let now = self.now();
        let double_round = self.config.double_round;
        self.write(|store| apply_in(store, record_id, action, now, double_round))
    }

    /// Second-round validation: a mark-valid that, when the double-round flag
    /// is on, must come from someone other than the last corrector.
    pub fn validate_second_round(&self, record_id: &RecordId, user: &str) -> Result<ActionOutcome, WorkflowError> {
        self.apply_action(record_id, CurationAction::mark_valid(user))
    }

    /// Every version of the chain containing `record_id`, oldest first, each
    /// with the log entries written against it.
    pub fn history(&self, record_id: &RecordId) -> Result<Vec<HistoryEntry>, WorkflowError> {
        self.read(|store| {
            let chain = store.chain(record_id).map_err(|e| match e {
                StoreError::UnknownRecord(id) => WorkflowError::UnknownRecord(id),
                other => WorkflowError::Store(other),
            })?;
            let log = store.curation_log_for(record_id)?;
            Ok(chain
                .into_iter()
                .map(|record| HistoryEntry {
                    log: log
                        .iter()
                        .filter(|e| e.record_id == record.record_id)
                        .map(|e| (*e).clone())
                        .collect(),
                    record: record.clone(),
                })
                .collect())
        })
    }

    pub fn select(&self, selection: &ScanSelection) -> Vec<RecordId> {
        self.read(|store| match selection {
            ScanSelection::Ids(ids) => ids.clone(),
            _ => store
                .records()
                .filter(|r| crate::model::is_visible(r))
                .filter(|r| match selection {
                    ScanSelection::Document(d) => &r.document_id == d,
                    ScanSelection::Status(s) => r.state.status() == *s,
                    _ => true,
                })
                .map(|r| r.record_id.clone())
                .collect(),
        })
    }

    /// Runs the anomaly rules over `record_ids`.
    ///
    /// Records still in (automatic, new) that trip a rule move to
    /// (automatic, invalid) with error type `anomaly_detection`; records a
    /// curator has already handled keep their state and are only reported.
    /// Unknown or hidden ids are reported as errors without stopping the
    /// scan. Re-running a scan changes nothing.
    pub fn scan(&self, record_ids: &[RecordId]) -> Result<ScanReport, StoreError> {
        let now = self.now();
        self.write(|store| {
            let mut report = ScanReport::default();
            let mut targets = Vec::with_capacity(record_ids.len());
            for id in record_ids {
                match store.record(id) {
                    None => report.errors.push(ScanError {
                        record_id: id.clone(),
                        error: "unknown record".into(),
                    }),
                    Some(r) if !crate::model::is_visible(r) => report.errors.push(ScanError {
                        record_id: id.clone(),
                        error: format!("record is {}", r.state.status()),
                    }),
                    Some(r) => targets.push(r.clone()),
                }
            }
            let mut seen = std::collections::HashSet::new();
            targets.retain(|r| seen.insert(r.record_id.clone()));
            report.scanned = targets.len();

            let flags = check_batch(&targets);
            let mut ops = Vec::new();
            for (record, flags) in targets.iter().zip(flags) {
                if flags.is_empty() {
                    continue;
                }
                for flag in &flags {
                    report.counts.bump(flag.rule);
                }
                report.flagged.push(ScanFinding {
                    record_id: record.record_id.clone(),
                    flags,
                });
                if record.state != CurationState::NEW {
                    continue;
                }
                let mut flagged = record.clone();
                flagged.state = CurationState::new(Agent::Automatic, Status::Invalid).expect("valid state");
                flagged.error_type = Some(ErrorType::AnomalyDetection);
                flagged.updated_at = now;
                let chain_id = store.chain_root(&record.record_id)?;
                ops.push(Op::ReplaceRecord(flagged));
                ops.push(Op::CurationLog(CurationLogEntry {
                    record_id: record.record_id.clone(),
                    chain_id: chain_id.clone(),
                    action: LogAction::AnomalyDetection,
                    user: ANOMALY_DETECTION_USER.into(),
                    error_type: Some(ErrorType::AnomalyDetection),
                    timestamp: now,
                    update_count_after: update_count(store, &chain_id),
                }));
                report.transitioned.push(record.record_id.clone());
            }
            store.commit(ops)?;

            report.multi_tc = detect_multi_tc(&targets);
            report.counts.multi_tc = report.multi_tc.len();
            Ok(report)
        })
    }

    pub fn scan_selection(&self, selection: &ScanSelection) -> Result<ScanReport, StoreError> {
        let ids = self.select(selection);
        self.scan(&ids)
    }
}

fn update_count(store: &Store, chain_id: &RecordId) -> u32 {
    store
        .curation_log()
        .iter()
        .filter(|e| &e.chain_id == chain_id && e.action == LogAction::Update)
        .count() as u32
}

fn parse_quantities(record: &mut MaterialRecord) {
    record.tc_kelvin = parse_temperature(&record.tc_raw).ok().map(|q| q.magnitude);
    record.pressure_gpa = record
        .pressure_raw
        .as_deref()
        .and_then(|p| parse_pressure(p).ok())
        .map(|q| q.magnitude);
}

/// Fills the parsed kelvin/gigapascal fields from the raw strings.
pub fn with_parsed_quantities(mut record: MaterialRecord) -> MaterialRecord {
    parse_quantities(&mut record);
    record
}

fn apply_in(
    store: &mut Store,
    record_id: &RecordId,
    action: CurationAction,
    now: Timestamp,
    double_round: bool,
) -> Result<ActionOutcome, WorkflowError> {
    let current = store
        .record(record_id)
        .cloned()
        .ok_or_else(|| WorkflowError::UnknownRecord(record_id.clone()))?;
    if current.state.status() == Status::Obsolete {
        let latest = store.head(record_id)?.record_id.clone();
        return Err(WorkflowError::StaleVersion {
            record: record_id.clone(),
            latest,
        });
    }
    if !allowed_actions(current.state).contains(&action.kind) {
        return Err(WorkflowError::ForbiddenTransition {
            action: action.kind,
            state: current.state,
        });
    }
    if action.kind.requires_error_type() && action.error_type.is_none() {
        return Err(WorkflowError::MissingErrorType(action.kind));
    }
    let chain_id = store.chain_root(record_id)?;
    if double_round && action.kind == ActionKind::MarkValid {
        let last_correction = store
            .curation_log()
            .iter()
            .rev()
            .find(|e| e.chain_id == chain_id && matches!(e.action, LogAction::Update | LogAction::MarkInvalid));
        if let Some(entry) = last_correction.filter(|e| e.user == action.user) {
            return Err(WorkflowError::SameCurator {
                record: record_id.clone(),
                user: entry.user.clone(),
            });
        }
    }

    let mut ops = Vec::new();
    let mut acted = current.clone();
    acted.updated_at = now;
    acted.last_editor = Some(action.user.clone());
    let mut new_record_id = None;
    let new_state = target_state(action.kind);

    match action.kind {
        ActionKind::MarkValid | ActionKind::MarkInvalid => {
            acted.state = new_state;
            if action.error_type.is_some() {
                acted.error_type = action.error_type;
            }
            ops.push(Op::ReplaceRecord(acted));
        }
        ActionKind::Remove => {
            acted.state = new_state;
            acted.error_type = action.error_type;
            ops.push(Op::ReplaceRecord(acted));
        }
        ActionKind::Update => {
            let patch = action
                .payload
                .clone()
                .filter(|p| !p.is_empty())
                .ok_or(WorkflowError::EmptyPayload)?;
            let mut next = current.clone();
            if let Some(v) = patch.material_raw {
                next.material_raw = v;
            }
            if let Some(v) = patch.formula {
                next.formula = v;
            }
            if let Some(v) = patch.tc_raw {
                next.tc_raw = v;
            }
            if let Some(v) = patch.pressure_raw {
                next.pressure_raw = (!v.trim().is_empty()).then_some(v);
            }
            if let Some(v) = patch.passage_id {
                next.passage_id = v;
            }
            if next.material_raw.trim().is_empty() {
                return Err(ModelError::EmptyMaterial.into());
            }
            parse_quantities(&mut next);
            let id = store.next_record_id();
            next.record_id = id.clone();
            next.state = new_state;
            next.error_type = action.error_type;
            next.previous_version = Some(current.record_id.clone());
            next.created_at = now;
            next.updated_at = now;
            next.last_editor = Some(action.user.clone());
            next.extra = current.extra.clone();

            acted.state = CurationState::manual(Status::Obsolete);
            acted.error_type = action.error_type;
            ops.push(Op::ReplaceRecord(acted));
            ops.push(Op::InsertRecord(next));
            new_record_id = Some(id);
        }
    }

    let previous_updates = update_count(store, &chain_id);
    ops.push(Op::CurationLog(CurationLogEntry {
        record_id: record_id.clone(),
        chain_id,
        action: action.kind.into(),
        user: action.user.clone(),
        error_type: action.error_type,
        timestamp: now,
        update_count_after: previous_updates + u32::from(action.kind == ActionKind::Update),
    }));

    let mut training_captured = false;
    if action.kind.captures_training_data() {
        match store.passage(&current.document_id, &current.passage_id) {
            Some(passage) => {
                ops.push(Op::PutExample(TrainingExample::capture(
                    store.next_example_id(),
                    current.document_id.clone(),
                    passage,
                    current.record_id.clone(),
                    now,
                )));
                training_captured = true;
            }
            None => ops.push(Op::ProcessingLog(ProcessingLogEntry {
                document_id: current.document_id.to_string(),
                outcome: ProcessingOutcome::Failed,
                reason: Some(crate::ingestion::REASON_CAPTURE_FAILED.into()),
                detail: Some(format!(
                    "record {}: passage {} not found",
                    current.record_id, current.passage_id
                )),
                counts: Default::default(),
                timestamp: now,
            })),
        }
    }

    store.commit(ops)?;
    Ok(ActionOutcome {
        record_id: record_id.clone(),
        new_state,
        new_record_id,
        training_captured,
    })
}
