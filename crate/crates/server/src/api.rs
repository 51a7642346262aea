//! HTTP routes over a shared [`Stage`].

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use curation_core::anomaly::{detect_multi_tc, MultiTcGroup, ScanReport};
use curation_core::collector::{ExampleFilter, ExampleStatus, ExportEntry, ExportSelection, TrainingExample};
use curation_core::ingestion::{ProcessingLogEntry, ProcessingOutcome};
use curation_core::model::is_visible;
use curation_core::store::{Document, Page, Query as RecordQuery};
use curation_core::workflow::{
    ActionKind, ActionOutcome, CurationAction, CurationLogEntry, HistoryEntry, RecordPatch, ScanSelection,
};
use curation_core::{DocumentId, ErrorType, ExampleId, MaterialRecord, RecordId, Stage, Status};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ApiError, ErrorCode};

#[derive(Clone)]
pub struct AppState {
    pub stage: Arc<Stage>,
    pub token: Option<Arc<str>>,
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(stage: Arc<Stage>, token: Option<String>) -> Router {
    let state = AppState {
        stage,
        token: token.filter(|t| !t.is_empty()).map(Arc::from),
    };
    Router::new()
        .route("/records", get(list_records))
        .route("/records/{id}", get(get_record))
        .route("/records/{id}/history", get(record_history))
        .route("/records/{id}/mark-valid", post(mark_valid))
        .route("/records/{id}/mark-invalid", post(mark_invalid))
        .route("/records/{id}/update", post(update))
        .route("/records/{id}/remove", post(remove))
        .route("/scan", post(scan))
        .route("/anomalies/multi-tc", get(multi_tc))
        .route("/documents/{id}", get(get_document))
        .route("/ingest", post(ingest))
        .route("/logs/processing", get(processing_log))
        .route("/logs/curation", get(curation_log))
        .route("/training", get(list_training))
        .route("/training/export", get(preview_export).post(export))
        .route("/training/{id}", axum::routing::delete(delete_training))
        .route("/training/{id}/mark-sent", post(mark_sent))
        .route("/stats", get(stats))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError::new(ErrorCode::Unauthorized, "missing or wrong bearer token").into_response();
        }
    }
    next.run(request).await
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::validation(e.body_text()))
}

fn json<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v).map_err(|e| ApiError::validation(e.body_text()))
}

async fn list_records(
    State(state): State<AppState>,
    q: Result<Query<RecordQuery>, QueryRejection>,
) -> ApiResult<Page<MaterialRecord>> {
    let q = query(q)?;
    Ok(Json(state.stage.read(|s| s.query_records(&q))?))
}

async fn get_record(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<MaterialRecord> {
    let id = RecordId(id);
    match state.stage.get_latest(&id)? {
        Some(record) => Ok(Json(record)),
        None => Err(ApiError::not_found(format!("record {id} was removed"))),
    }
}

async fn record_history(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Vec<HistoryEntry>> {
    Ok(Json(state.stage.history(&RecordId(id))?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBody {
    pub user: String,
    #[serde(default)]
    pub error_type: Option<ErrorType>,
    #[serde(default)]
    pub payload: Option<RecordPatch>,
}

fn act(
    state: &AppState,
    kind: ActionKind,
    id: String,
    body: Result<Json<ActionBody>, JsonRejection>,
) -> ApiResult<ActionOutcome> {
    let body = json(body)?;
    if body.user.trim().is_empty() {
        return Err(ApiError::validation("user must not be empty"));
    }
    let action = CurationAction {
        kind,
        payload: body.payload,
        error_type: body.error_type,
        user: body.user.into(),
    };
    Ok(Json(state.stage.apply_action(&RecordId(id), action)?))
}

async fn mark_valid(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ActionBody>, JsonRejection>,
) -> ApiResult<ActionOutcome> {
    act(&state, ActionKind::MarkValid, id, body)
}

async fn mark_invalid(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ActionBody>, JsonRejection>,
) -> ApiResult<ActionOutcome> {
    act(&state, ActionKind::MarkInvalid, id, body)
}

async fn update(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ActionBody>, JsonRejection>,
) -> ApiResult<ActionOutcome> {
    act(&state, ActionKind::Update, id, body)
}

async fn remove(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ActionBody>, JsonRejection>,
) -> ApiResult<ActionOutcome> {
    act(&state, ActionKind::Remove, id, body)
}

/// An empty body scans everything.
async fn scan(State(state): State<AppState>, body: Bytes) -> ApiResult<ScanReport> {
    let selection = if body.iter().all(u8::is_ascii_whitespace) {
        ScanSelection::All
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::validation(format!("invalid scan selection: {e}")))?
    };
    Ok(Json(state.stage.scan_selection(&selection)?))
}

#[derive(Debug, Default, Deserialize)]
struct DocumentFilter {
    document_id: Option<String>,
}

fn parse_document_id(raw: &str) -> Result<DocumentId, ApiError> {
    DocumentId::parse(raw).map_err(|e| ApiError::validation(e.to_string()))
}

async fn multi_tc(
    State(state): State<AppState>,
    q: Result<Query<DocumentFilter>, QueryRejection>,
) -> ApiResult<Vec<MultiTcGroup>> {
    let filter = query(q)?;
    let doc = filter.document_id.as_deref().map(parse_document_id).transpose()?;
    let records: Vec<MaterialRecord> = state.stage.read(|s| {
        s.records()
            .filter(|r| is_visible(r) && doc.as_ref().is_none_or(|d| r.document_id == *d))
            .cloned()
            .collect()
    });
    Ok(Json(detect_multi_tc(&records)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DocumentView {
    pub document: Document,
    pub records: Vec<MaterialRecord>,
}

async fn get_document(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<DocumentView> {
    let id = DocumentId::parse(&id).map_err(|_| ApiError::not_found(format!("unknown document {id}")))?;
    state
        .stage
        .read(|s| {
            s.document(&id).map(|d| DocumentView {
                document: d.clone(),
                records: s
                    .records()
                    .filter(|r| r.document_id == id && is_visible(r))
                    .cloned()
                    .collect(),
            })
        })
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown document {id}")))
}

/// Every ingest answers 200 with its processing log entry; rejections are
/// reported through the entry's outcome and reason.
async fn ingest(State(state): State<AppState>, body: Bytes) -> ApiResult<ProcessingLogEntry> {
    let raw: Value = serde_json::from_slice(&body).unwrap_or_else(|e| Value::String(e.to_string()));
    Ok(Json(state.stage.ingest(&raw)?))
}

async fn processing_log(
    State(state): State<AppState>,
    q: Result<Query<DocumentFilter>, QueryRejection>,
) -> ApiResult<Vec<ProcessingLogEntry>> {
    let filter = query(q)?;
    Ok(Json(state.stage.processing_log(filter.document_id.as_deref())))
}

#[derive(Debug, Default, Deserialize)]
struct CurationLogFilter {
    record_id: Option<String>,
    user: Option<String>,
}

async fn curation_log(
    State(state): State<AppState>,
    q: Result<Query<CurationLogFilter>, QueryRejection>,
) -> ApiResult<Vec<CurationLogEntry>> {
    let filter = query(q)?;
    let entries = state.stage.read(|s| -> Result<Vec<CurationLogEntry>, ApiError> {
        let chain = filter
            .record_id
            .as_ref()
            .map(|id| s.chain_root(&RecordId(id.clone())))
            .transpose()?;
        Ok(s.curation_log()
            .iter()
            .filter(|e| chain.as_ref().is_none_or(|c| e.chain_id == *c))
            .filter(|e| filter.user.as_ref().is_none_or(|u| e.user.0 == *u))
            .cloned()
            .collect())
    })?;
    Ok(Json(entries))
}

async fn list_training(
    State(state): State<AppState>,
    q: Result<Query<ExampleFilter>, QueryRejection>,
) -> ApiResult<Vec<TrainingExample>> {
    let filter = query(q)?;
    Ok(Json(state.stage.list_examples(&filter)))
}

async fn mark_sent(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<TrainingExample> {
    Ok(Json(state.stage.mark_sent(&ExampleId(id))?))
}

async fn delete_training(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state.stage.delete_example(&ExampleId(id))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn preview_export(
    State(state): State<AppState>,
    q: Result<Query<ExampleFilter>, QueryRejection>,
) -> ApiResult<Vec<ExportEntry>> {
    let filter = query(q)?;
    Ok(Json(state.stage.preview_export(&ExportSelection::Filter(filter))?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRequest {
    #[serde(default)]
    pub ids: Option<Vec<ExampleId>>,
    #[serde(default)]
    pub status: Option<ExampleStatus>,
    #[serde(default)]
    pub document_id: Option<DocumentId>,
}

impl ExportRequest {
    pub fn selection(self) -> ExportSelection {
        match self.ids {
            Some(ids) => ExportSelection::Ids(ids),
            None => ExportSelection::Filter(ExampleFilter {
                status: self.status,
                document_id: self.document_id,
                include_deleted: false,
            }),
        }
    }
}

/// Exports and marks the selection exported. An empty body exports every
/// example that is not deleted.
async fn export(State(state): State<AppState>, body: Bytes) -> ApiResult<Vec<ExportEntry>> {
    let request: ExportRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ExportRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::validation(format!("invalid export request: {e}")))?
    };
    Ok(Json(state.stage.export_examples(&request.selection())?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stats {
    pub records: usize,
    pub visible_records: usize,
    pub by_status: BTreeMap<Status, usize>,
    pub by_error_type: BTreeMap<ErrorType, usize>,
    pub documents: usize,
    pub ingest_ok: usize,
    pub ingest_failed: usize,
    pub training_by_status: BTreeMap<ExampleStatus, usize>,
}

async fn stats(State(state): State<AppState>) -> Json<Stats> {
    Json(state.stage.read(|s| {
        let mut by_error_type = BTreeMap::new();
        for r in s.records().filter(|r| is_visible(r)) {
            if let Some(e) = r.error_type {
                *by_error_type.entry(e).or_insert(0) += 1;
            }
        }
        let mut training_by_status = BTreeMap::new();
        for e in s.examples() {
            *training_by_status.entry(e.status).or_insert(0) += 1;
        }
        let ok = s
            .processing_log()
            .iter()
            .filter(|e| e.outcome == ProcessingOutcome::Ok)
            .count();
        Stats {
            records: s.record_count(),
            visible_records: s.records().filter(|r| is_visible(r)).count(),
            by_status: s.status_counts(),
            by_error_type,
            documents: s.documents().count(),
            ingest_ok: ok,
            ingest_failed: s.processing_log().len() - ok,
            training_by_status,
        }
    }))
}
