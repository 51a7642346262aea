//! Randomised action sequences checked against a shadow model of the
//! curation rules.
//!
//! The model keeps its own record states, chain membership and correction
//! history, predicts whether each action succeeds, and after every step the
//! store is compared with it.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use curation_core::ingestion::{CandidateRecord, ExtractionPayload, PayloadPassage, PayloadSpan};
use curation_core::model::is_visible;
use curation_core::workflow::{ActionKind, CurationAction, LogAction, RecordPatch, StageConfig, WorkflowError};
use curation_core::{Agent, EntityLabel, ErrorType, FixedClock, RecordId, Stage, Status};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const USERS: [&str; 3] = ["alice", "bob", "carol"];

const ERROR_TYPES: [ErrorType; 8] = [
    ErrorType::FromTable,
    ErrorType::Extraction,
    ErrorType::Linking,
    ErrorType::TcClassification,
    ErrorType::CompositionResolution,
    ErrorType::ValueResolution,
    ErrorType::AnomalyDetection,
    ErrorType::CurationAmends,
];

const KINDS: [ActionKind; 4] = [
    ActionKind::MarkValid,
    ActionKind::MarkInvalid,
    ActionKind::Update,
    ActionKind::Remove,
];

pub fn fixture_payload() -> ExtractionPayload {
    let passage = |id: &str, text: &str, spans: Vec<PayloadSpan>| PayloadPassage {
        passage_id: id.into(),
        text: text.into(),
        spans,
        layout_tokens: vec![],
    };
    let candidate = |material: &str, tc: &str, pressure: Option<&str>, pid: &str| CandidateRecord {
        material_raw: material.into(),
        formula: None,
        tc_raw: tc.into(),
        pressure_raw: pressure.map(Into::into),
        passage_id: pid.into(),
    };
    ExtractionPayload {
        document_id: "0aa1b3161f".into(),
        page_count: 5,
        passages: vec![
            passage(
                "p1",
                "MgB2 shows T_c = 39 K.",
                vec![
                    PayloadSpan {
                        start: 0,
                        end: 4,
                        label: EntityLabel::Material,
                        text: None,
                    },
                    PayloadSpan {
                        start: 17,
                        end: 21,
                        label: EntityLabel::TcValue,
                        text: None,
                    },
                ],
            ),
            passage(
                "p2",
                "Under 15 GPa LaH10 reaches 250 K; a 300 K value is a typo.",
                vec![],
            ),
        ],
        candidate_records: vec![
            candidate("MgB2", "39 K", None, "p1"),
            candidate("LaH10", "250 K", Some("15 GPa"), "p2"),
            candidate("LaH10", "300 K", None, "p2"),
            candidate("Ba1-xKxFe2As2", "38 K", None, "p1"),
        ],
    }
}

/// Allowed (agent, status) pairs.
fn pair_allowed(agent: Agent, status: Status) -> bool {
    match status {
        Status::New => agent == Agent::Automatic,
        Status::Curated | Status::Validated | Status::Removed => agent == Agent::Manual,
        Status::Invalid | Status::Obsolete => true,
    }
}

/// The transition table, written out independently of the crate.
fn table_allows(status: Status, kind: ActionKind) -> bool {
    use ActionKind::*;
    match status {
        Status::New | Status::Curated => true,
        Status::Validated => matches!(kind, MarkInvalid | Update | Remove),
        Status::Invalid => matches!(kind, MarkValid | Update | Remove),
        Status::Obsolete | Status::Removed => false,
    }
}

#[derive(Debug, Clone)]
struct Shadow {
    agent: Agent,
    status: Status,
    chain: RecordId,
}

#[derive(Default)]
struct Model {
    records: BTreeMap<RecordId, Shadow>,
    /// Last user to update or mark-invalid each chain.
    last_corrector: HashMap<RecordId, String>,
    log_entries: usize,
    captures: usize,
    next_id: usize,
}

#[derive(Debug, PartialEq)]
enum Expect {
    Ok,
    Unknown,
    Stale,
    Forbidden,
    MissingErrorType,
    EmptyPayload,
    SameCurator,
    InvalidPayload,
    StoreFailure,
}

fn classify(err: &WorkflowError) -> Expect {
    match err {
        WorkflowError::UnknownRecord(_) => Expect::Unknown,
        WorkflowError::StaleVersion { .. } => Expect::Stale,
        WorkflowError::ForbiddenTransition { .. } => Expect::Forbidden,
        WorkflowError::MissingErrorType(_) => Expect::MissingErrorType,
        WorkflowError::EmptyPayload => Expect::EmptyPayload,
        WorkflowError::SameCurator { .. } => Expect::SameCurator,
        WorkflowError::InvalidPayload(_) => Expect::InvalidPayload,
        WorkflowError::Store(_) => Expect::StoreFailure,
    }
}

impl Model {
    fn predict(&self, id: &RecordId, action: &CurationAction, double_round: bool) -> Expect {
        let Some(shadow) = self.records.get(id) else {
            return Expect::Unknown;
        };
        if shadow.status == Status::Obsolete {
            return Expect::Stale;
        }
        if !table_allows(shadow.status, action.kind) {
            return Expect::Forbidden;
        }
        if matches!(action.kind, ActionKind::Update | ActionKind::Remove) && action.error_type.is_none() {
            return Expect::MissingErrorType;
        }
        if double_round
            && action.kind == ActionKind::MarkValid
            && self
                .last_corrector
                .get(&shadow.chain)
                .is_some_and(|u| *u == action.user.0)
        {
            return Expect::SameCurator;
        }
        if action.kind == ActionKind::Update {
            match &action.payload {
                None => return Expect::EmptyPayload,
                Some(p) if *p == RecordPatch::default() => return Expect::EmptyPayload,
                Some(p) if p.material_raw.as_deref().is_some_and(|m| m.trim().is_empty()) => {
                    return Expect::InvalidPayload
                }
                _ => {}
            }
        }
        Expect::Ok
    }

    fn apply(&mut self, id: &RecordId, action: &CurationAction) {
        let chain = self.records[id].chain.clone();
        let set = |m: &mut Model, rid: &RecordId, status: Status| {
            let s = m.records.get_mut(rid).unwrap();
            s.agent = Agent::Manual;
            s.status = status;
        };
        match action.kind {
            ActionKind::MarkValid => set(self, id, Status::Validated),
            ActionKind::MarkInvalid => set(self, id, Status::Invalid),
            ActionKind::Remove => set(self, id, Status::Removed),
            ActionKind::Update => {
                set(self, id, Status::Obsolete);
                self.next_id += 1;
                let new_id = RecordId(format!("rec-{:06}", self.next_id));
                self.records.insert(
                    new_id,
                    Shadow {
                        agent: Agent::Manual,
                        status: Status::Curated,
                        chain: chain.clone(),
                    },
                );
            }
        }
        if matches!(action.kind, ActionKind::Update | ActionKind::MarkInvalid) {
            self.last_corrector.insert(chain, action.user.0.clone());
        }
        if matches!(action.kind, ActionKind::Update | ActionKind::Remove) {
            self.captures += 1;
        }
        self.log_entries += 1;
    }
}

fn random_patch(rng: &mut ChaCha8Rng) -> Option<RecordPatch> {
    match rng.random_range(0..8) {
        0 => None,
        1 => Some(RecordPatch::default()),
        2 => Some(RecordPatch {
            material_raw: Some("  ".into()),
            ..Default::default()
        }),
        3 => Some(RecordPatch {
            pressure_raw: Some(String::new()),
            ..Default::default()
        }),
        4 => Some(RecordPatch {
            formula: Some("LaH10".into()),
            material_raw: Some("LaH10".into()),
            ..Default::default()
        }),
        _ => Some(RecordPatch {
            tc_raw: Some(format!("{} K", rng.random_range(1..=200))),
            ..Default::default()
        }),
    }
}

fn random_action(rng: &mut ChaCha8Rng) -> CurationAction {
    let kind = *KINDS.choose(rng).unwrap();
    let error_type = if rng.random_bool(0.8) {
        Some(*ERROR_TYPES.choose(rng).unwrap())
    } else {
        None
    };
    CurationAction {
        kind,
        payload: if kind == ActionKind::Update {
            random_patch(rng)
        } else {
            None
        },
        error_type,
        user: (*USERS.choose(rng).unwrap()).into(),
    }
}

#[derive(Debug, Default)]
pub struct SimReport {
    pub sequences: usize,
    pub attempted: usize,
    pub succeeded: usize,
    pub violations: Vec<String>,
}

fn check_store(stage: &Stage, model: &Model, seq: usize, step: usize, report: &mut SimReport) {
    let mut fail = |msg: String| {
        if report.violations.len() < 20 {
            report.violations.push(format!("sequence {seq} step {step}: {msg}"));
        }
    };
    stage.read(|store| {
        let mut visible_per_chain: HashMap<RecordId, usize> = HashMap::new();
        for record in store.records() {
            let (agent, status) = (record.state.agent(), record.state.status());
            if !pair_allowed(agent, status) {
                fail(format!(
                    "{} reached disallowed pair ({agent}, {status})",
                    record.record_id
                ));
            }
            match model.records.get(&record.record_id) {
                None => fail(format!("unexpected record {}", record.record_id)),
                Some(s) if (s.agent, s.status) != (agent, status) => fail(format!(
                    "{} is ({agent}, {status}), model says ({}, {})",
                    record.record_id, s.agent, s.status
                )),
                Some(s) => {
                    if is_visible(record) {
                        *visible_per_chain.entry(s.chain.clone()).or_default() += 1;
                    }
                }
            }
            if let Some(prev) = &record.previous_version {
                if store.record(prev).map(|p| p.state.status()) != Some(Status::Obsolete) {
                    fail(format!("{} points at non-obsolete {prev}", record.record_id));
                }
            }
            let modified = matches!(status, Status::Curated | Status::Removed | Status::Obsolete)
                || (status == Status::Invalid && agent == Agent::Automatic);
            if modified && record.error_type.is_none() {
                fail(format!("{} ({agent}, {status}) lacks an error type", record.record_id));
            }
        }
        if store.record_count() != model.records.len() {
            fail(format!(
                "{} records stored, model has {}",
                store.record_count(),
                model.records.len()
            ));
        }
        for (chain, n) in visible_per_chain {
            if n > 1 {
                fail(format!("chain {chain} has {n} visible records"));
            }
        }
        if store.curation_log().len() != model.log_entries {
            fail(format!(
                "{} log entries, expected {}",
                store.curation_log().len(),
                model.log_entries
            ));
        }
        if store.examples().count() != model.captures {
            fail(format!(
                "{} training examples, expected {}",
                store.examples().count(),
                model.captures
            ));
        }
    });
}

/// Runs `sequences` random action sequences from `seed`.
pub fn run(sequences: usize, seed: u64) -> SimReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SimReport::default();
    let clock = Arc::new(FixedClock(Utc.with_ymd_and_hms(2024, 5, 1, 8, 0, 0).unwrap()));

    for seq in 0..sequences {
        let double_round = rng.random_bool(0.5);
        let stage = Stage::in_memory(clock.clone(), StageConfig { double_round });
        stage.ingest_payload(fixture_payload()).expect("fixture ingests");

        let mut model = Model::default();
        for record in stage.read(|s| s.records().cloned().collect::<Vec<_>>()) {
            model.next_id += 1;
            model.records.insert(
                record.record_id.clone(),
                Shadow {
                    agent: Agent::Automatic,
                    status: Status::New,
                    chain: record.record_id.clone(),
                },
            );
        }

        if rng.random_bool(0.5) {
            let ids: Vec<RecordId> = model.records.keys().cloned().collect();
            let scan = stage.scan(&ids).expect("scan");
            for id in &scan.transitioned {
                let s = model.records.get_mut(id).unwrap();
                s.status = Status::Invalid;
                model.log_entries += 1;
            }
        }
        check_store(&stage, &model, seq, 0, &mut report);

        let mut successes = 0;
        let steps = rng.random_range(1..=15);
        for step in 1..=steps {
            let mut ids: Vec<RecordId> = model.records.keys().cloned().collect();
            ids.push("rec-999999".into());
            let id = ids.choose(&mut rng).unwrap().clone();
            let action = random_action(&mut rng);
            let want = model.predict(&id, &action, double_round);
            let result = if action.kind == ActionKind::MarkValid && rng.random_bool(0.2) {
                stage.validate_second_round(&id, &action.user.0)
            } else {
                stage.apply_action(&id, action.clone())
            };
            report.attempted += 1;
            let got = match &result {
                Ok(outcome) => {
                    let captured = matches!(action.kind, ActionKind::Update | ActionKind::Remove);
                    if outcome.training_captured != captured {
                        report.violations.push(format!(
                            "sequence {seq} step {step}: capture fired={} for {}",
                            outcome.training_captured, action.kind
                        ));
                    }
                    Expect::Ok
                }
                Err(e) => classify(e),
            };
            if got != want {
                report.violations.push(format!(
                    "sequence {seq} step {step}: {} on {id}: expected {want:?}, got {result:?}",
                    action.kind
                ));
                break;
            }
            if got == Expect::Ok {
                report.succeeded += 1;
                successes += 1;
                model.apply(&id, &action);
            }
            check_store(&stage, &model, seq, step, &mut report);
        }

        let manual = stage.read(|s| {
            s.curation_log()
                .iter()
                .filter(|e| e.action != LogAction::AnomalyDetection)
                .count()
        });
        if manual != successes {
            report.violations.push(format!(
                "sequence {seq}: {manual} manual log entries for {successes} successful actions"
            ));
        }
        report.sequences += 1;
        if report.violations.len() >= 20 {
            break;
        }
    }
    report
}
