use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use authorgan::server::{router_with, AppState, ServerConfig};
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use gan_core::data::{synth_digits, write_gfd1};
use gan_core::RngStream;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const REFERENCE_CONFIG: &str = r#"{"GAN_model":{"epochs":"50"},"generator":{"choice":"dcgan"},"discriminator":{"choice":"dcgan"},"data_path":"dataset/mnistData.pkl"}"#;

fn app(data_dir: &Path, workers: usize) -> Router {
    let cfg = ServerConfig { max_jobs: workers, data_dir: data_dir.to_path_buf(), body_limit: 64 * 1024, ..ServerConfig::default() };
    router_with(Arc::new(AppState::new(&cfg)), cfg.body_limit)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, _, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post(app: &Router, uri: &str, body: impl Into<Body>) -> (StatusCode, Value) {
    let (s, _, b) = send(app, Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(body.into()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

/// 64 digit images of 8x8 as `<dir>/tiny.gfd`.
fn tiny_data(dir: &Path, n: usize) {
    let (ds, _) = synth_digits(n, 8, &mut RngStream::new(1)).unwrap();
    write_gfd1(&dir.join("tiny.gfd"), &ds.images).unwrap();
}

fn tiny_job(epochs: u64) -> Value {
    json!({
        "spec": {
            "GAN_model": {"batch_size": 16, "latent_dim": 8},
            "generator": {"choice": "gan"},
            "discriminator": {"choice": "gan"},
            "data_path": "tiny.gfd"
        },
        "overrides": {"epochs": epochs}
    })
}

async fn wait_for(app: &Router, id: &str, done: impl Fn(&str) -> bool) -> Value {
    let start = Instant::now();
    loop {
        let (_, v) = get(app, &format!("/jobs/{id}")).await;
        if done(v["state"].as_str().unwrap_or("")) {
            return v;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "job {id} stuck: {v}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test]
async fn palette_presets_and_schema_are_cacheable() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1);
    let (s, h, body) = send(&app, Request::get("/palette").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let doc: Value = serde_json::from_slice(&body).unwrap();
    let entries = doc["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 31);
    let cats: Vec<&str> = doc["categories"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    assert_eq!(cats, ["convolutional", "recurrent", "core", "activation", "loss", "optimization", "normalization"]);
    assert!(entries.iter().all(|e| cats.contains(&e["category"].as_str().unwrap())));

    let etag = h[header::ETAG].clone();
    let (s2, _, body2) = send(&app, Request::get("/palette").body(Body::empty()).unwrap()).await;
    assert_eq!((s2, &body2), (StatusCode::OK, &body));
    let (s3, h3, body3) = send(&app, Request::get("/palette").header(header::IF_NONE_MATCH, etag.clone()).body(Body::empty()).unwrap()).await;
    assert_eq!(s3, StatusCode::NOT_MODIFIED);
    assert!(body3.is_empty());
    assert_eq!(h3[header::ETAG], etag);

    let (s, presets) = get(&app, "/presets").await;
    assert_eq!(s, StatusCode::OK);
    let names: Vec<&str> = presets["presets"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 5);
    let (s, schema) = get(&app, "/schema").await;
    assert_eq!(s, StatusCode::OK);
    assert!(schema["$schema"].is_string());
}

#[tokio::test]
async fn validate_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1);
    let (s, v) = post(&app, "/specs/validate", REFERENCE_CONFIG).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"valid": true, "diagnostics": []}));

    let (s, v) = post(&app, "/specs/validate", "{\"generator\": ").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["valid"], false);
    assert_eq!(v["diagnostics"].as_array().unwrap().len(), 1);

    let (s, v) = post(&app, "/specs/validate", "{}").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["diagnostics"].as_array().unwrap().len(), 3);

    let (s, _) = post(&app, "/specs/validate", vec![b' '; 100 * 1024]).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);

    // a rank mismatch between a dense output and a convolution
    let bad = json!({
        "generator": {"layers": [{"kind": "Dense", "params": {"units": 64}}, {"kind": "Conv2D", "params": {"filters": 1, "kernel": 3}}]},
        "discriminator": {"choice": "gan"},
        "data_path": "x.idx"
    });
    let (s, v) = post(&app, "/specs/validate?data_shape=1,8,8", bad.to_string()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["valid"], false);
    assert!(v["diagnostics"][0]["path"].as_str().unwrap().starts_with("/generator/layers/1"), "{v}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn job_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path(), 64);
    let app = app(dir.path(), 1);

    let (s, v) = post(&app, "/jobs", "{}").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["diagnostics"].as_array().unwrap().len(), 3);

    let (s, v) = post(&app, "/jobs", tiny_job(2).to_string()).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = v["job_id"].as_str().unwrap().to_string();
    let done = wait_for(&app, &id, |s| s != "queued" && s != "running").await;
    assert_eq!(done["state"], "completed", "{done}");
    assert_eq!(done["report"]["epochs"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("jobs").join(&id).join("report.json").is_file());

    // cursor semantics: every row once, nothing after the last
    let (_, all) = get(&app, &format!("/jobs/{id}/metrics?since=0")).await;
    let rows = all["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    let (_, tail) = get(&app, &format!("/jobs/{id}/metrics?since=5")).await;
    let idx: Vec<u64> = tail["rows"].as_array().unwrap().iter().map(|r| r["index"].as_u64().unwrap()).collect();
    assert_eq!(idx, [6, 7, 8]);
    let (_, none) = get(&app, &format!("/jobs/{id}/metrics?since={}", all["next"])).await;
    assert!(none["rows"].as_array().unwrap().is_empty());

    let (s, h, png) = send(&app, Request::get(format!("/jobs/{id}/samples?n=4")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h[header::CONTENT_TYPE], "image/png");
    assert_eq!(&png[1..4], b"PNG");
    let (_, _, again) = send(&app, Request::get(format!("/jobs/{id}/samples?n=4")).body(Body::empty()).unwrap()).await;
    assert_eq!(png, again);
    let (s, _) = get(&app, &format!("/jobs/{id}/samples?n=0")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    for uri in ["/jobs/nope", "/jobs/nope/metrics", "/jobs/nope/samples"] {
        assert_eq!(get(&app, uri).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    let (s, _, _) = send(&app, Request::delete("/jobs/nope").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cancelling_queued_and_running_jobs() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path(), 64);
    let app = app(dir.path(), 1);
    let (_, a) = post(&app, "/jobs", tiny_job(10_000).to_string()).await;
    let (_, b) = post(&app, "/jobs", tiny_job(1).to_string()).await;
    let (a, b) = (a["job_id"].as_str().unwrap().to_string(), b["job_id"].as_str().unwrap().to_string());

    wait_for(&app, &a, |s| s == "running").await;
    let (s, _, body) = send(&app, Request::delete(format!("/jobs/{b}")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["state"], "cancelled");

    send(&app, Request::delete(format!("/jobs/{a}")).body(Body::empty()).unwrap()).await;
    let a_view = wait_for(&app, &a, |s| s == "cancelled").await;
    assert!(a_view["report"].is_null());
    assert!(!dir.path().join("jobs").join(&a).join("report.json").exists());

    // the queued job never started, even after the worker freed up
    tokio::time::sleep(Duration::from_millis(200)).await;
    let (_, b_view) = get(&app, &format!("/jobs/{b}")).await;
    assert_eq!(b_view["state"], "cancelled");
    let (_, m) = get(&app, &format!("/jobs/{b}/metrics")).await;
    assert!(m["rows"].as_array().unwrap().is_empty());
    let (s, _) = get(&app, &format!("/jobs/{b}/samples")).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn failed_job_reports_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1);
    let (s, v) = post(&app, "/jobs", tiny_job(1).to_string()).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = v["job_id"].as_str().unwrap();
    let view = wait_for(&app, id, |s| s == "failed").await;
    assert!(view["error"].as_str().unwrap().contains("tiny.gfd"), "{view}");
    assert!(view["report"].is_null());
}
