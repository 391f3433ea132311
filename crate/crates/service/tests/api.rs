mod support;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use markguard_core::decision::calibrate_band;
use markguard_core::manifest::DatasetManifest;
use markguard_service::router;
use serde_json::{json, Value};
use support::*;
use tower::ServiceExt;

const BOUNDARY: &str = "XmarkguardX";

fn multipart(image: Option<&[u8]>, fields: &[(&str, &str)]) -> Body {
    let mut body = Vec::new();
    for (name, value) in fields {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes(),
        );
    }
    if let Some(bytes) = image {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"x.png\"\r\n\
                 Content-Type: image/png\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Body::from(body)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn call_json(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn upload(image: Option<&[u8]>, fields: &[(&str, &str)]) -> Request<Body> {
    Request::post("/v1/authenticate")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(multipart(image, fields))
        .unwrap()
}

fn json_req(method: Method, uri: &str, body: Value) -> Request<Body> {
    Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn light_harness() -> (Harness, Router, String) {
    let model = light_model();
    let version = model.meta.version.clone();
    let h = harness(vec![model]);
    let app = router(h.service.clone());
    (h, app, version)
}

#[tokio::test]
async fn health() {
    let (_h, app, _) = light_harness();
    let (s, v) = call_json(&app, get("/v1/health")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn authenticate_before_activation_is_503() {
    let (_h, app, _) = light_harness();
    let img = genuine_images().next().unwrap();
    let (s, v) = call_json(&app, upload(Some(img), &[])).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "no_active_model");
    assert!(v["message"].is_string());
}

#[tokio::test]
async fn model_listing_and_activation() {
    let (_h, app, version) = light_harness();
    let (s, v) = call_json(&app, get("/v1/models")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["version"], version.as_str());
    assert_eq!(v[0]["active"], false);

    let (s, v) = call_json(&app, Request::post("/v1/models/nope/activate").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_model");

    let uri = format!("/v1/models/{version}/activate");
    let (s, v) = call_json(&app, Request::post(uri.as_str()).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["config_version"], 1);
    assert_eq!(v["model_version"], version.as_str());
    let (_, listing) = call_json(&app, get("/v1/models")).await;
    assert_eq!(listing[0]["active"], true);
    let (_, th) = call_json(&app, get("/v1/thresholds")).await;
    assert_eq!(th, v);
}

async fn activated() -> (Harness, Router) {
    let (h, app, version) = light_harness();
    h.service.activate(&version).unwrap();
    (h, app)
}

#[tokio::test]
async fn authenticate_returns_the_stored_record() {
    let (h, app) = activated().await;
    let img = genuine_images().next().unwrap();
    let fields = [
        ("device_id", "phone-12"),
        ("venue", "customs"),
        ("captured_at", "2026-03-01T10:00:00Z"),
    ];
    let (s, v) = call_json(&app, upload(Some(img), &fields)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    for key in ["request_id", "received_at", "result", "model_version", "thresholds_version", "image_sha256"] {
        assert!(!v[key].is_null(), "{key}");
    }
    assert_eq!(v["capture_meta"]["venue"], "customs");
    assert_eq!(v["capture_meta"]["device_id"], "phone-12");
    assert!(v["result"]["score"]["value"].is_f64());
    assert!(v["result"]["detection"]["bbox"].is_object());
    let snap = h.service.snapshot();
    assert_eq!(v["thresholds_version"], snap.band.version.as_str());
    let logged = std::fs::read_to_string(h.dir.path().join("store/requests.jsonl")).unwrap();
    let rec: Value = serde_json::from_str(logged.lines().next().unwrap()).unwrap();
    assert_eq!(rec, v);
}

#[tokio::test]
async fn authenticate_without_meta_stores_none() {
    let (_h, app) = activated().await;
    let (s, v) = call_json(&app, upload(Some(genuine_images().next().unwrap()), &[])).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["capture_meta"].is_null());
}

#[tokio::test]
async fn authenticate_client_errors() {
    let (_h, app) = activated().await;
    let (s, v) = call_json(&app, upload(Some(b"garbage bytes"), &[])).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("malformed_image")));
    let (s, v) = call_json(&app, upload(None, &[("device_id", "x")])).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    let img = genuine_images().next().unwrap();
    let (s, v) = call_json(&app, upload(Some(img), &[("venue", "moon")])).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    let (_, m) = call_json(&app, get("/v1/metrics")).await;
    assert_eq!(m["requests"], 0);
}

#[tokio::test]
async fn oversized_upload_is_413() {
    let model = light_model();
    let version = model.meta.version.clone();
    let h = harness_with(vec![model], |c| c.payload_limit = 4096);
    h.service.activate(&version).unwrap();
    let app = router(h.service.clone());
    // Over the payload limit but within the multipart allowance.
    let (s, v) = call_json(&app, upload(Some(&vec![7u8; 5000]), &[])).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::PAYLOAD_TOO_LARGE, Some("payload_too_large")));
    // Over the body limit itself.
    let (s, v) = call_json(&app, upload(Some(&vec![7u8; 200_000]), &[])).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::PAYLOAD_TOO_LARGE, Some("payload_too_large")));
}

#[tokio::test]
async fn feedback_endpoint() {
    let (_h, app) = activated().await;
    let (_, rec) = call_json(&app, upload(Some(genuine_images().next().unwrap()), &[])).await;
    let id = rec["request_id"].as_str().unwrap();

    let body = json!({"request_id": id, "expert_label": "counterfeit", "submitter": "ana"});
    let (s, v) = call_json(&app, json_req(Method::POST, "/v1/feedback", body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["expert_label"], "counterfeit");
    assert!(v["submitted_at"].is_string());

    let body = json!({"request_id": "missing", "expert_label": "genuine", "submitter": "ana"});
    let (s, v) = call_json(&app, json_req(Method::POST, "/v1/feedback", body)).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_request")));

    let body = json!({"request_id": id, "expert_label": "maybe", "submitter": "ana"});
    let (s, v) = call_json(&app, json_req(Method::POST, "/v1/feedback", body)).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("malformed_label")));

    let (s, v) = call_json(&app, json_req(Method::POST, "/v1/feedback", json!({"request_id": id}))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
}

#[tokio::test]
async fn feedback_export_is_csv() {
    let (_h, app) = activated().await;
    let (s, v) = call_json(&app, get("/v1/feedback/export")).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("no_feedback")));

    let (_, rec) = call_json(&app, upload(Some(genuine_images().next().unwrap()), &[])).await;
    let body = json!({"request_id": rec["request_id"], "expert_label": "genuine", "submitter": "ana"});
    call(&app, json_req(Method::POST, "/v1/feedback", body)).await;
    let (s, bytes) = call(&app, get("/v1/feedback/export")).await;
    assert_eq!(s, StatusCode::OK);
    let m = DatasetManifest::parse_csv(std::str::from_utf8(&bytes).unwrap()).unwrap();
    assert_eq!(m.entries.len(), 1);
    assert_eq!(m.entries[0].source, "feedback");
}

#[tokio::test]
async fn thresholds_endpoint_recalibrates() {
    let (h, app) = activated().await;
    let costs = json!({"cost_false_genuine": 2.0, "cost_false_counterfeit": 1.0, "cost_reject": 0.2});
    let (s, v) = call_json(&app, json_req(Method::PUT, "/v1/thresholds", costs.clone())).await;
    assert_eq!(s, StatusCode::OK);
    let model = h.service.snapshot().model.clone().unwrap();
    let direct = calibrate_band(
        model.validation.as_ref().unwrap(),
        &serde_json::from_value(costs).unwrap(),
    )
    .unwrap()
    .band;
    assert_eq!(v, serde_json::to_value(&direct).unwrap());
    let (_, snap) = call_json(&app, get("/v1/thresholds")).await;
    assert_eq!(snap["band"], v);
    assert_eq!(snap["config_version"], 2);

    let bad = json!({"cost_false_genuine": 1.0, "cost_false_counterfeit": 1.0, "cost_reject": -1.0});
    let (s, v) = call_json(&app, json_req(Method::PUT, "/v1/thresholds", bad)).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_costs")));
    let (s, _) = call_json(&app, json_req(Method::PUT, "/v1/thresholds", json!({"x": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn tradeoff_endpoint() {
    let (h, app) = activated().await;
    let (s, v) = call_json(&app, get("/v1/tradeoff?budgets=0,0.1,0.25")).await;
    assert_eq!(s, StatusCode::OK);
    let model = h.service.snapshot().model.clone().unwrap();
    let direct =
        markguard_core::decision::tradeoff_curve(model.validation.as_ref().unwrap(), &[0.0, 0.1, 0.25]).unwrap();
    assert_eq!(v, serde_json::to_value(&direct).unwrap());
    let (s, v) = call_json(&app, get("/v1/tradeoff")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["points"].as_array().unwrap().len(), markguard_service::service::DEFAULT_BUDGETS.len());
    let (s, _) = call_json(&app, get("/v1/tradeoff?budgets=0.2,abc")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn metrics_endpoint_matches_service() {
    let (h, app) = activated().await;
    for _ in 0..3 {
        call(&app, upload(Some(genuine_images().next().unwrap()), &[])).await;
    }
    let (s, v) = call_json(&app, get("/v1/metrics")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, serde_json::to_value(h.service.metrics()).unwrap());
    assert_eq!(v["requests"], 3);
    assert!(v["agreement"].is_null());
}
