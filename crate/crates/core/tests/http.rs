#![cfg(feature = "server")]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use bogo::campaign::server::{bind, router};
use bogo::campaign::CampaignStore;
use bogo::Error;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &std::path::Path) -> Router {
    router(Arc::new(CampaignStore::open(dir).unwrap()))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Option<String>, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let etag = resp
        .headers()
        .get(header::ETAG)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, etag, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: &Value, if_match: Option<&str>) -> Request<Body> {
    let mut req = Request::post(uri).header(header::CONTENT_TYPE, "application/json");
    if let Some(tag) = if_match {
        req = req.header(header::IF_MATCH, tag);
    }
    req.body(Body::from(body.to_string())).unwrap()
}

fn config(policy: &str, noise: &str) -> Value {
    json!({
        "dimension": 1,
        "domain": {"box": {"lo": [0.0], "hi": [1.0]}},
        "kernel": {"matern": {"nu": 2.5}},
        "noise": noise,
        "policy": policy,
        "rng_seed": 3
    })
}

async fn create(app: &Router, cfg: &Value) -> String {
    let (status, etag, body) = send(app, post("/campaigns", cfg, None)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(etag.as_deref(), Some("\"0\""));
    assert_eq!(body["n"], 0);
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn missing_campaign_is_404_with_error_body() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, _, body) = send(&app, get("/campaigns/does-not-exist")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "campaign_not_found");
    assert!(body["message"].as_str().unwrap().contains("does-not-exist"));

    let (status, _, body) = send(&app, get("/campaigns/does-not-exist/suggestion")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "campaign_not_found");

    let (status, _, body) = send(&app, get("/nowhere")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
}

#[tokio::test]
async fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, _, body) = send(&app, post("/campaigns", &config("ei", "homoscedastic"), None)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_config");

    let mut extra = config("ei", "noise_free");
    extra["unexpected"] = json!(1);
    let (status, _, body) = send(&app, post("/campaigns", &extra, None)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_body");
}

#[tokio::test]
async fn tell_requires_matching_revision() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, &config("ei", "noise_free")).await;
    let uri = format!("/campaigns/{id}/observations");
    let obs = json!({"x": [0.25], "y": 1.5});

    let (status, _, body) = send(&app, post(&uri, &obs, None)).await;
    assert_eq!(status, StatusCode::PRECONDITION_REQUIRED);
    assert_eq!(body["error"], "missing_if_match");

    let (status, _, body) = send(&app, post(&uri, &obs, Some("\"7\""))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "revision_mismatch");
    assert_eq!(body["current_revision"], 0);

    let (status, etag, body) = send(&app, post(&uri, &obs, Some("\"0\""))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(etag.as_deref(), Some("\"1\""));
    assert_eq!(body["n"], 1);
    assert_eq!(body["revision"], 1);

    let (status, _, body) = send(&app, post(&uri, &obs, Some("1"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "duplicate_noise_free_point");

    let (status, _, body) = send(&app, post(&uri, &json!({"x": [2.0], "y": 0.0}), Some("1"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "out_of_domain");
}

#[tokio::test]
async fn suggestion_tracks_revision() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, &config("ei", "noise_free")).await;
    let sug_uri = format!("/campaigns/{id}/suggestion");
    let obs_uri = format!("/campaigns/{id}/observations");

    for step in 0..5u64 {
        let (status, etag, sug) = send(&app, get(&sug_uri)).await;
        assert_eq!(status, StatusCode::OK, "{sug}");
        assert_eq!(sug["revision"], step);
        assert_eq!(etag, Some(format!("\"{step}\"")));
        let expected_policy = if step < 2 { "seed" } else { "ei" };
        assert_eq!(sug["policy"], expected_policy);

        let (_, _, again) = send(&app, get(&sug_uri)).await;
        assert_eq!(again, sug);

        let x = sug["x_next"][0].as_f64().unwrap();
        let obs = json!({"x": [x], "y": (5.0 * x).sin(), "tag": format!("run-{step}")});
        let (status, _, state) = send(&app, post(&obs_uri, &obs, Some(&format!("\"{step}\"")))).await;
        assert_eq!(status, StatusCode::OK, "{state}");
        assert_eq!(state["revision"], step + 1);
        assert!(state["pending"].is_null());
    }
    let (_, _, sug) = send(&app, get(&sug_uri)).await;
    assert_eq!(sug["revision"], 5);
    assert!(sug["acquisition_value"].as_f64().unwrap() >= 0.0);
    assert!(sug["posterior_at_x"]["variance"].as_f64().unwrap() >= 0.0);

    let (status, etag, state) = send(&app, get(&format!("/campaigns/{id}"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(etag.as_deref(), Some("\"5\""));
    assert_eq!(state["history"].as_array().unwrap().len(), 5);
    assert_eq!(state["history"][0]["tag"], "run-0");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_tells_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, &config("akg", "homoscedastic")).await;
    let obs_uri = format!("/campaigns/{id}/observations");

    let tasks: Vec<_> = (0..24)
        .map(|i| {
            let app = app.clone();
            let obs_uri = obs_uri.clone();
            let state_uri = format!("/campaigns/{id}");
            tokio::spawn(async move {
                let (_, etag, _) = send(&app, get(&state_uri)).await;
                let obs = json!({"x": [(i as f64 + 0.5) / 24.0], "y": i as f64});
                let (status, _, _) = send(&app, post(&obs_uri, &obs, etag.as_deref())).await;
                assert!(status == StatusCode::OK || status == StatusCode::CONFLICT, "{status}");
                status == StatusCode::OK
            })
        })
        .collect();
    let mut accepted = 0;
    for t in tasks {
        accepted += usize::from(t.await.unwrap());
    }
    assert!(accepted >= 1);
    let (_, _, state) = send(&app, get(&format!("/campaigns/{id}"))).await;
    assert_eq!(state["n"], accepted);
    assert_eq!(state["revision"], accepted);

    let reloaded = CampaignStore::open(dir.path()).unwrap().state(&id).unwrap();
    assert_eq!(reloaded.n(), accepted);
}

#[tokio::test]
async fn curve_and_diagnostics_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, &config("ei", "noise_free")).await;

    let (status, _, body) = send(&app, get(&format!("/campaigns/{id}/curve?axis=0&resolution=5"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "no_model_yet");

    let xs: [f64; 6] = [0.05, 0.2, 0.4, 0.55, 0.7, 0.9];
    for (rev, x) in xs.iter().enumerate() {
        let obs = json!({"x": [x], "y": (6.0 * x).cos()});
        let uri = format!("/campaigns/{id}/observations");
        let (status, _, _) = send(&app, post(&uri, &obs, Some(&rev.to_string()))).await;
        assert_eq!(status, StatusCode::OK);
    }

    let (status, _, body) = send(&app, get(&format!("/campaigns/{id}/curve?axis=0&resolution=2"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let rows = body["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["x"], 0.0);
    assert_eq!(rows[1]["x"], 1.0);

    let (status, _, body) = send(&app, get(&format!("/campaigns/{id}/curve?axis=3"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_config");

    let (status, _, body) = send(&app, get(&format!("/campaigns/{id}/diagnostics?refit_per_fold=false"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let report = &body["report"];
    assert_eq!(report["records"].as_array().unwrap().len(), xs.len());
    assert_eq!(report["refit_per_fold"], false);

    let (status, _, body) = send(&app, get(&format!("/campaigns/{id}/diagnostics?format=csv"))).await;
    assert_eq!(status, StatusCode::OK);
    let text = body.as_str().unwrap();
    assert!(text.starts_with("actual,predicted,halfwidth,covered\n"));
    assert_eq!(text.lines().count(), xs.len() + 1);

    let (status, _, _) = send(&app, get(&format!("/campaigns/{id}/diagnostics?refit_per_fold=maybe"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn occupied_port_is_reported() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    match bind(addr).await {
        Err(Error::PortInUse(port)) => assert_eq!(port, addr.port()),
        other => panic!("expected PortInUse, got {:?}", other.map(|_| ())),
    }
}

#[tokio::test]
async fn corrupt_state_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let camp = dir.path().join("broken");
    std::fs::create_dir_all(&camp).unwrap();
    std::fs::write(camp.join("events.jsonl"), "not json\n").unwrap();
    let addr = "127.0.0.1:0".parse().unwrap();
    let result = bogo::campaign::server::serve(dir.path().to_path_buf(), addr).await;
    assert!(matches!(result, Err(Error::CorruptStateFile { .. })));
}
