//! HTTP service: spec validation, the palette and preset documents, and the
//! training job lifecycle.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gan_core::layers::{palette, Category};
use gan_core::models::registry_json;
use gan_core::spec::{parse_spec, schema, validate, Diagnostic, GanSpec};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::jobs::JobPool;
use crate::run::Overrides;

pub const DEFAULT_BODY_LIMIT: usize = 1 << 20;
pub const MAX_SAMPLES: usize = 256;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub port: u16,
    pub max_jobs: usize,
    pub data_dir: PathBuf,
    pub body_limit: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { port: 8080, max_jobs: 1, data_dir: PathBuf::from("."), body_limit: DEFAULT_BODY_LIMIT }
    }
}

/// A fixed JSON body with its strong validator.
struct StaticDoc {
    body: Bytes,
    etag: HeaderValue,
}

impl StaticDoc {
    fn new(v: &Value) -> Self {
        let body = serde_json::to_vec_pretty(v).expect("document serializes");
        let digest = Sha256::digest(&body);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let etag = HeaderValue::from_str(&format!("\"{hex}\"")).expect("hex is a valid header");
        Self { body: Bytes::from(body), etag }
    }

    fn respond(&self, headers: &HeaderMap) -> Response {
        let fresh = headers
            .get_all(header::IF_NONE_MATCH)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .flat_map(|v| v.split(','))
            .any(|t| t.trim() == "*" || t.trim().trim_start_matches("W/") == self.etag.to_str().unwrap_or_default());
        let common = [(header::ETAG, self.etag.clone()), (header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=3600"))];
        if fresh {
            return (StatusCode::NOT_MODIFIED, common).into_response();
        }
        (common, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], self.body.clone()).into_response()
    }
}

/// The palette: every entry plus the category names in display order.
pub fn palette_document() -> Value {
    json!({
        "categories": Category::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
        "entries": palette(),
    })
}

pub struct AppState {
    pub pool: JobPool,
    palette: StaticDoc,
    presets: StaticDoc,
    schema: StaticDoc,
}

impl AppState {
    pub fn new(cfg: &ServerConfig) -> Self {
        Self {
            pool: JobPool::new(cfg.max_jobs, cfg.data_dir.clone()),
            palette: StaticDoc::new(&palette_document()),
            presets: StaticDoc::new(&registry_json()),
            schema: StaticDoc::new(&schema()),
        }
    }
}

pub fn router(cfg: &ServerConfig) -> Router {
    router_with(Arc::new(AppState::new(cfg)), cfg.body_limit)
}

pub fn router_with(state: Arc<AppState>, body_limit: usize) -> Router {
    Router::new()
        .route("/specs/validate", post(api_validate))
        .route("/jobs", post(api_create_job))
        .route("/jobs/{id}", get(api_job_status).delete(api_cancel))
        .route("/jobs/{id}/metrics", get(api_job_metrics))
        .route("/jobs/{id}/samples", get(api_job_samples))
        .route("/palette", get(|State(s): State<Arc<AppState>>, h: HeaderMap| async move { s.palette.respond(&h) }))
        .route("/presets", get(|State(s): State<Arc<AppState>>, h: HeaderMap| async move { s.presets.respond(&h) }))
        .route("/schema", get(|State(s): State<Arc<AppState>>, h: HeaderMap| async move { s.schema.respond(&h) }))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

pub async fn serve(cfg: ServerConfig) -> std::io::Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(&cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn serve_blocking(cfg: ServerConfig) -> std::io::Result<()> {
    tokio::runtime::Runtime::new()?.block_on(serve(cfg))
}

fn error_body(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn diagnostics_json(diags: &[Diagnostic]) -> Value {
    json!({
        "valid": !diags.iter().any(Diagnostic::is_error),
        "diagnostics": diags,
    })
}

#[derive(Debug, Default, Deserialize)]
struct ValidateQuery {
    /// Comma-separated sample extents, e.g. `1,28,28`.
    data_shape: Option<String>,
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

async fn api_validate(Query(q): Query<ValidateQuery>, body: Bytes) -> Response {
    let text = String::from_utf8_lossy(&body);
    let diags = match parse_spec(&text) {
        Ok(mut spec) => {
            if let Some(shape) = q.data_shape.as_deref() {
                match parse_shape(shape) {
                    Some(s) => spec.gan_model.data_shape = Some(s),
                    None => return error_body(StatusCode::BAD_REQUEST, format!("bad data_shape `{shape}`")),
                }
            }
            validate(&spec)
        }
        Err(diags) => diags,
    };
    Json(diagnostics_json(&diags)).into_response()
}

/// The body is either a spec, or `{"spec": {...}, "overrides": {...}}`.
fn split_create_body(v: Value) -> Result<(Value, Overrides), String> {
    match v {
        Value::Object(mut map) if map.contains_key("spec") => {
            let spec = map.remove("spec").unwrap_or_default();
            let overrides = match map.remove("overrides") {
                Some(o) => serde_json::from_value(o).map_err(|e| format!("overrides: {e}"))?,
                None => Overrides::default(),
            };
            if let Some(k) = map.keys().next() {
                return Err(format!("unknown field `{k}`; expected `spec` and `overrides`"));
            }
            Ok((spec, overrides))
        }
        other => Ok((other, Overrides::default())),
    }
}

async fn api_create_job(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let unprocessable = |diags: Vec<Diagnostic>| (StatusCode::UNPROCESSABLE_ENTITY, Json(diagnostics_json(&diags))).into_response();
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return unprocessable(vec![Diagnostic::error("", format!("invalid JSON: {e}"))]),
    };
    let (spec_value, overrides) = match split_create_body(value) {
        Ok(p) => p,
        Err(m) => return unprocessable(vec![Diagnostic::error("/overrides", m)]),
    };
    let spec: GanSpec = match parse_spec(&spec_value.to_string()) {
        Ok(s) => s,
        Err(diags) => return unprocessable(diags),
    };
    let mut effective = spec.clone();
    overrides.apply(&mut effective);
    let diags = validate(&effective);
    if diags.iter().any(Diagnostic::is_error) {
        return unprocessable(diags);
    }
    let job = state.pool.submit(spec, overrides);
    (StatusCode::ACCEPTED, Json(json!({ "job_id": job.id }))).into_response()
}

async fn api_job_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.pool.get(&id) {
        Some(job) => Json(job.view()).into_response(),
        None => error_body(StatusCode::NOT_FOUND, format!("no job `{id}`")),
    }
}

async fn api_job_metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>) -> Response {
    let Some(job) = state.pool.get(&id) else {
        return error_body(StatusCode::NOT_FOUND, format!("no job `{id}`"));
    };
    let since = match q.get("since").map(|s| s.parse::<usize>()) {
        None => 0,
        Some(Ok(n)) => n,
        Some(Err(_)) => return error_body(StatusCode::BAD_REQUEST, "`since` must be a non-negative integer"),
    };
    let rows = job.metrics_since(since);
    let next = rows.last().map_or(since, |r| r.index);
    Json(json!({ "rows": rows, "next": next, "state": job.state() })).into_response()
}

async fn api_job_samples(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>) -> Response {
    let Some(job) = state.pool.get(&id) else {
        return error_body(StatusCode::NOT_FOUND, format!("no job `{id}`"));
    };
    let n = match q.get("n").map(|s| s.parse::<usize>()) {
        None => 16,
        Some(Ok(n)) if (1..=MAX_SAMPLES).contains(&n) => n,
        _ => return error_body(StatusCode::BAD_REQUEST, format!("`n` must be in 1..={MAX_SAMPLES}")),
    };
    let result = tokio::task::spawn_blocking(move || job.samples(n)).await;
    match result {
        Ok(Some(Ok(png))) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Ok(Some(Err(e))) => error_body(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Ok(None) => error_body(StatusCode::CONFLICT, "samples are available once the job has completed"),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn api_cancel(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.pool.cancel(&id) {
        Some(s) => Json(json!({ "id": id, "state": s })).into_response(),
        None => error_body(StatusCode::NOT_FOUND, format!("no job `{id}`")),
    }
}
