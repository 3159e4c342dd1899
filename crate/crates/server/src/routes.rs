use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use diffpop::classifier::InputKind;
use diffpop::compose::render_preview;
use diffpop::datastore::{count_records, Corpus, LabelUpdate, Source};
use diffpop::diffusion::Placement;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::jobs::Job;
use crate::{AppState, VERSION};

const DEFAULT_BATCH: usize = 10;
const MAX_BATCH: usize = 500;

/// Builds the HTTP application. Static assets, when given, are served at `/`.
pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/batch", get(batch))
        .route("/api/label", post(label))
        .route("/api/export", get(export))
        .route("/api/stats", get(stats))
        .route("/api/retrain", post(retrain))
        .route("/api/jobs/{id}", get(job))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    };
    app.layer(CorsLayer::permissive())
}

async fn index() -> Html<&'static str> {
    Html("<!doctype html><title>diffpop labels</title><p>Label service is running. The JSON API is under <code>/api</code>.</p>")
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": VERSION }))
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    n: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub id: String,
    pub scene_id: String,
    pub object_id: String,
    pub placement: Placement<f64>,
    /// Base64-encoded PNG of the composite.
    pub preview_png: String,
}

async fn batch(State(st): State<Arc<AppState>>, Query(q): Query<BatchQuery>) -> Result<Json<Vec<BatchItem>>, ApiError> {
    let n = q.n.unwrap_or(DEFAULT_BATCH);
    if n == 0 || n > MAX_BATCH {
        return Err(ApiError::BadRequest(format!("n must be in 1..={MAX_BATCH}, got {n}")));
    }
    let snap = st.snapshot();
    let pending: Vec<_> = snap.records.iter().filter(|r| r.label.is_none()).take(n).cloned().collect();
    if pending.is_empty() {
        return Err(ApiError::NotFound("no unlabeled records remain".into()));
    }
    let items = tokio::task::spawn_blocking(move || {
        pending
            .into_iter()
            .map(|r| {
                let scene = st.library.scene(&r.scene_id)?;
                let obj = st.library.object(&r.object_id)?;
                let png = render_preview(scene, obj, r.placement)?;
                Ok(BatchItem {
                    id: r.id,
                    scene_id: r.scene_id,
                    object_id: r.object_id,
                    placement: r.placement,
                    preview_png: base64::engine::general_purpose::STANDARD.encode(png),
                })
            })
            .collect::<Result<Vec<_>, ApiError>>()
    })
    .await??;
    Ok(Json(items))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub id: String,
    pub label: u8,
    /// Required to overwrite an existing label.
    #[serde(default)]
    pub relabel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub id: String,
    pub label: u8,
    pub seq: u64,
    pub stats: Stats,
}

/// Label counts over the whole corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub positive: usize,
    pub negative: usize,
    pub human: usize,
    /// Keyed `"<split>/<label>"`.
    pub counts: BTreeMap<String, usize>,
}

impl Stats {
    pub fn of(c: &Corpus) -> Self {
        let count = |f: &dyn Fn(&diffpop::datastore::CompositeRecord) -> bool| c.records.iter().filter(|r| f(r)).count();
        let labeled = count(&|r| r.label.is_some());
        Self {
            total: c.records.len(),
            labeled,
            unlabeled: c.records.len() - labeled,
            positive: count(&|r| r.label == Some(1)),
            negative: count(&|r| r.label == Some(0)),
            human: count(&|r| r.source == Source::Human),
            counts: count_records(&c.records),
        }
    }
}

impl AppState {
    fn apply_label(&self, req: &LabelRequest) -> Result<LabelAck, ApiError> {
        let mut store = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let current = store.corpus().get(&req.id).ok_or_else(|| ApiError::NotFound(format!("unknown record id {}", req.id)))?;
        if current.label.is_some() && !req.relabel {
            return Err(ApiError::Conflict(format!("record {} is already labeled; resubmit with relabel=true", req.id)));
        }
        let entries = store.merge(&[LabelUpdate { id: req.id.clone(), label: req.label }])?;
        let snap = self.publish(store.corpus().clone());
        Ok(LabelAck { id: req.id.clone(), label: req.label, seq: entries[0].seq, stats: Stats::of(&snap) })
    }
}

async fn label(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<LabelAck>, ApiError> {
    let req: LabelRequest = serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("invalid label request: {e}")))?;
    if req.label > 1 {
        return Err(ApiError::BadRequest(format!("label must be 0 or 1, got {}", req.label)));
    }
    let ack = tokio::task::spawn_blocking(move || st.apply_label(&req)).await??;
    Ok(Json(ack))
}

async fn export(State(st): State<Arc<AppState>>) -> Result<impl IntoResponse, ApiError> {
    let snap = st.snapshot();
    let mut body = Vec::new();
    for r in snap.records.iter().filter(|r| r.label.is_some()) {
        serde_json::to_writer(&mut body, r).map_err(|e| ApiError::Internal(e.to_string()))?;
        body.push(b'\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn stats(State(st): State<Arc<AppState>>) -> Json<Stats> {
    Json(Stats::of(&st.snapshot()))
}

/// Optional body of `POST /api/retrain`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainRequest {
    pub epochs: Option<usize>,
    pub kind: Option<InputKind>,
}

async fn retrain(State(st): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let req: RetrainRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RetrainRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("invalid retrain request: {e}")))?
    };
    let records: Vec<_> = st.snapshot().records.iter().filter(|r| r.label.is_some()).cloned().collect();
    if records.is_empty() {
        return Err(ApiError::Conflict("no labeled records to train on".into()));
    }
    let id = st.start_retrain(records, req);
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "job_id": id }))))
}

async fn job(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> Result<Json<Job>, ApiError> {
    st.job(id).map(Json).ok_or_else(|| ApiError::NotFound(format!("unknown job {id}")))
}
