#[path = "support/anomaly_fixture.rs"]
mod anomaly_fixture;

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use curation_core::anomaly::AnomalyRule;
use curation_core::workflow::{CurationAction, ScanSelection, StageConfig};
use curation_core::{Agent, ErrorType, FixedClock, RecordId, Stage, Status};

fn stage() -> Stage {
    let clock = FixedClock(Utc.with_ymd_and_hms(2024, 4, 4, 12, 0, 0).unwrap());
    let stage = Stage::in_memory(Arc::new(clock), StageConfig::default());
    stage.ingest_payload(anomaly_fixture::payload()).unwrap();
    stage
}

#[test]
fn scan_flags_exactly_the_prescribed_subset() {
    let stage = stage();
    let report = stage.scan_selection(&ScanSelection::All).unwrap();
    assert_eq!(report.scanned, 12);

    let expected: Vec<(RecordId, Vec<AnomalyRule>)> = anomaly_fixture::CASES
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.3.is_empty())
        .map(|(i, c)| (anomaly_fixture::record_id(i).into(), c.3.to_vec()))
        .collect();
    let got: Vec<(RecordId, Vec<AnomalyRule>)> = report
        .flagged
        .iter()
        .map(|f| (f.record_id.clone(), f.flags.iter().map(|fl| fl.rule).collect()))
        .collect();
    assert_eq!(got, expected);
    assert_eq!(
        report.transitioned,
        expected.iter().map(|e| e.0.clone()).collect::<Vec<_>>()
    );
    assert_eq!(
        (
            report.counts.tc_invalid,
            report.counts.formula_unprocessable,
            report.counts.pressure_invalid
        ),
        (4, 2, 3)
    );

    for (i, case) in anomaly_fixture::CASES.iter().enumerate() {
        let record = stage.get_record(&anomaly_fixture::record_id(i).into()).unwrap();
        if case.3.is_empty() {
            assert_eq!(record.state.status(), Status::New, "case {i}");
            assert_eq!(record.error_type, None);
        } else {
            assert_eq!(
                (record.state.agent(), record.state.status()),
                (Agent::Automatic, Status::Invalid)
            );
            assert_eq!(record.error_type, Some(ErrorType::AnomalyDetection));
        }
    }

    // MgB2 carries -1, 0, 273 and 273.1 K in one document.
    assert_eq!(report.multi_tc.len(), 1);
    assert_eq!(report.multi_tc[0].material, "MgB2");
    assert_eq!(report.multi_tc[0].tc_values, vec![-1.0, 0.0, 273.0, 273.1]);
    assert_eq!(report.counts.multi_tc, 1);
}

#[test]
fn rescan_is_idempotent() {
    let stage = stage();
    let first = stage.scan_selection(&ScanSelection::All).unwrap();
    let dump = stage.dump();
    let second = stage.scan_selection(&ScanSelection::All).unwrap();
    assert!(second.transitioned.is_empty());
    assert_eq!(second.counts, first.counts);
    assert_eq!(second.flagged, first.flagged);
    assert_eq!(stage.dump(), dump);
}

#[test]
fn curated_records_are_reported_not_transitioned() {
    let stage = stage();
    let id: RecordId = anomaly_fixture::record_id(0).into();
    stage.apply_action(&id, CurationAction::mark_valid("alice")).unwrap();
    let report = stage.scan(&[id.clone(), "rec-404404".into()]).unwrap();
    assert_eq!(report.flagged.len(), 1);
    assert!(report.transitioned.is_empty());
    assert_eq!(report.errors.len(), 1);
    assert_eq!(stage.get_record(&id).unwrap().state.status(), Status::Validated);
}

#[test]
fn flagged_record_can_be_rejected_by_a_curator() {
    let stage = stage();
    stage.scan_selection(&ScanSelection::All).unwrap();
    let id: RecordId = anomaly_fixture::record_id(4).into();
    let outcome = stage.apply_action(&id, CurationAction::mark_valid("bob")).unwrap();
    assert_eq!(outcome.new_state.status(), Status::Validated);
    let by_status = stage.select(&ScanSelection::Status(Status::Invalid));
    assert_eq!(by_status.len(), 6);
}
