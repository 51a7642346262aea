//! Staging area for machine-extracted superconductor records.
//!
//! Records arrive through [`ingestion`], are screened by [`anomaly`], and are
//! curated through the state machine in [`workflow`]. Every correction is
//! versioned in the [`store`] and snapshotted as a training example by the
//! [`collector`]. [`metrics`] scores curation quality.

pub mod anomaly;
pub mod collector;
pub mod ingestion;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod parsers;
pub mod store;
pub mod workflow;

pub use model::{
    Agent, Clock, CurationState, DocumentId, EntityLabel, ErrorType, ExampleId, FixedClock, MaterialRecord, PassageId,
    RecordId, Span, Status, SystemClock, Timestamp, UserId,
};
pub use workflow::Stage;
