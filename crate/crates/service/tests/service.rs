mod common;

use std::time::Duration;

use arsentinel::ServiceConfig;
use arsentinel_core::backend::{BackendKind, EndpointSet, NoiseProfile};
use arsentinel_core::eval::{evaluate, PipelineKind};
use arsentinel_core::model::{Mitigation, SceneLabel};
use arsentinel_core::synth::LabelMix;
use arsentinel_core::{Engine, FailPolicy, PipelineConfig};
use axum::routing::post;
use axum::Router;
use serde_json::Value;

use common::*;

fn oracle_config(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig {
        pipeline: PipelineConfig::with_oracle(dir, &NoiseProfile::default()),
        ..ServiceConfig::default()
    }
}

fn first_with(pairs: &[arsentinel_core::model::ScenePair], label: SceneLabel) -> &arsentinel_core::model::ScenePair {
    pairs
        .iter()
        .find(|p| p.truth.as_ref().unwrap().label == label)
        .expect("dataset contains label")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn health_and_redacted_config() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 1, 2, LabelMix::default());
    let mut config = oracle_config(dir.path());
    config.pipeline.endpoints.get_mut(BackendKind::Verdict).bearer_token = Some("hunter2".into());
    let svc = start_service(config).await;
    let c = client();

    let health: Value = c.get(svc.url("/v1/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health, serde_json::json!({"status": "ok"}));

    let text = c.get(svc.url("/v1/config")).send().await.unwrap().text().await.unwrap();
    assert!(!text.contains("hunter2"));
    assert!(text.contains("fail_closed"));
    svc.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn analyses_match_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 42, 30, LabelMix::default());
    let svc = start_service(oracle_config(dir.path())).await;
    let c = client();

    for label in SceneLabel::ALL {
        let pair = first_with(&pairs, label);
        // Without an id the oracle must resolve the scene from pixels alone.
        for with_id in [true, false] {
            let body = request_body(pair, with_id);
            let obstruction: Value = c
                .post(svc.url("/v1/analyze/obstruction"))
                .json(&body)
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            assert_eq!(obstruction["status"], "determined");
            assert_eq!(obstruction["verdict"]["attacked"], label == SceneLabel::Obstruction, "{label}");

            let vim: Value = c
                .post(svc.url("/v1/analyze/vim"))
                .json(&body)
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            assert_eq!(vim["verdict"]["attacked"], label == SceneLabel::Vim, "{label}");
            if label == SceneLabel::Vim {
                assert_eq!(vim["verdict"]["mitigation"], "make_translucent");
                assert!(vim["taxonomy"]["format"].is_string());
            }
        }
    }

    let pair = first_with(&pairs, SceneLabel::Obstruction);
    let report: Value = c
        .post(svc.url("/v1/analyze/obstruction"))
        .json(&request_body(pair, true))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(report["scene_id"], pair.id.as_str());
    assert_eq!(report["verdict"]["mitigation"], "make_translucent");
    let spans = report["latency"]["spans"].as_array().unwrap();
    assert!(spans.iter().any(|s| s["stage"] == "segment" && s["tier"] == "edge"));
    assert!(spans.iter().any(|s| s["stage"] == "keyobjects" && s["tier"] == "cloud"));
    svc.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn bad_requests_get_400() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 2, 3, LabelMix::default());
    let svc = start_service(oracle_config(dir.path())).await;
    let c = client();
    let url = svc.url("/v1/analyze/obstruction");

    let resp = c.post(&url).body("{not json").send().await.unwrap();
    assert_eq!(resp.status(), 400);

    let mut body = request_body(&pairs[0], true);
    body.content_mask.rle = "2 2\n0 5".into();
    let resp = c.post(&url).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), 400);
    let err: Value = resp.json().await.unwrap();
    assert!(err["error"].as_str().unwrap().contains("malformed RLE"), "{err}");

    let mut body = request_body(&pairs[0], true);
    body.content_mask.rle = "3 3\n9".into();
    let resp = c.post(&url).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), 400);
    let err: Value = resp.json().await.unwrap();
    assert_eq!(err["details"][0], "content_mask dimension mismatch");

    let mut body = request_body(&pairs[0], true);
    body.raw.png_base64 = "!!!".into();
    let resp = c.post(&url).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), 400);
    svc.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn backend_down_follows_fail_policy() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 3, 3, LabelMix::default());
    let port = closed_port().await;
    for (policy, status, attacked) in [
        (FailPolicy::FailClosed, "undetermined-treat-as-attacked", true),
        (FailPolicy::FailOpen, "undetermined-treat-as-clear", false),
    ] {
        let mut config = oracle_config(dir.path());
        config.fail_policy = policy;
        config.pipeline.endpoints = EndpointSet::uniform(&format!("http://127.0.0.1:{port}"));
        let svc = start_service(config).await;
        for path in ["/v1/analyze/obstruction", "/v1/analyze/vim"] {
            let resp = client()
                .post(svc.url(path))
                .json(&request_body(&pairs[0], true))
                .send()
                .await
                .unwrap();
            assert_eq!(resp.status(), 200);
            let report: Value = resp.json().await.unwrap();
            assert_eq!(report["status"], status, "{path}");
            assert_eq!(report["verdict"]["attacked"], attacked);
            assert!(report["failure"]["error"].as_str().unwrap().contains("transport"), "{report}");
        }
        svc.shutdown().await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn over_capacity_gets_429_and_slot_frees_up() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 4, 2, LabelMix::default());
    let mut config = oracle_config(dir.path());
    config.max_concurrent_requests = 1;
    config.pipeline.endpoints.get_mut(BackendKind::Keyobjects).locator =
        format!("oracle:{}?seed=0&delay_ms=400", dir.path().display());
    let svc = start_service(config).await;
    let url = svc.url("/v1/analyze/obstruction");
    let body = request_body(&pairs[0], true);

    let slow = {
        let (url, body) = (url.clone(), body.clone());
        tokio::spawn(async move { client().post(url).json(&body).send().await.unwrap().status() })
    };
    tokio::time::sleep(Duration::from_millis(120)).await;
    let resp = client().post(&url).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), 429);
    assert_eq!(resp.headers()["retry-after"], "1");
    assert_eq!(slow.await.unwrap(), 200);

    let resp = client().post(&url).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    svc.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn slow_pipeline_hits_request_deadline() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 5, 2, LabelMix::default());
    let mut config = oracle_config(dir.path());
    let locator = format!("oracle:{}?seed=0&delay_ms=150", dir.path().display());
    for kind in BackendKind::ALL {
        let ep = config.pipeline.endpoints.get_mut(kind);
        ep.locator = locator.clone();
        ep.timeout_ms = 200;
    }
    config.request_timeout_ms = 300;
    let svc = start_service(config).await;
    let report: Value = client()
        .post(svc.url("/v1/analyze/obstruction"))
        .json(&request_body(&pairs[0], true))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(report["status"], "undetermined-treat-as-attacked");
    assert_eq!(report["failure"]["stage"], "request");
    svc.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn graceful_shutdown_finishes_in_flight_request() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 6, 1, LabelMix::default());
    let mut config = oracle_config(dir.path());
    config.pipeline.endpoints.get_mut(BackendKind::Keyobjects).locator =
        format!("oracle:{}?seed=0&delay_ms=300", dir.path().display());
    let svc = start_service(config).await;
    let url = svc.url("/v1/analyze/obstruction");
    let body = request_body(&pairs[0], true);
    let inflight = tokio::spawn(async move { client().post(url).json(&body).send().await.unwrap().status() });
    tokio::time::sleep(Duration::from_millis(100)).await;
    svc.shutdown().await;
    assert_eq!(inflight.await.unwrap(), 200);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn http_backends_reproduce_oracle_results() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 8, 24, LabelMix::default());
    let backend = start_oracle_backend(dir.path(), NoiseProfile::default()).await;
    let config = PipelineConfig {
        endpoints: EndpointSet::uniform(&format!("http://{}", backend.addr)),
        ..PipelineConfig::default()
    };
    let engine = Engine::new(config).unwrap();
    for kind in [PipelineKind::Obstruction, PipelineKind::Vim] {
        let report = evaluate(&pairs, kind, &engine).await;
        assert!(report.results.failed.is_empty(), "{:?}", report.results.failed);
        assert_eq!(report.results.metrics.accuracy, Some(1.0), "{kind}");
    }
    backend.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn schema_violations_are_protocol_errors() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 9, 2, LabelMix::default());
    let bogus = Router::new().route("/v1/ocr", post(|| async { "{\"tokens\": 7}" }));
    let server = start_router(bogus).await;
    let mut config = PipelineConfig::with_oracle(dir.path(), &NoiseProfile::default());
    config.endpoints.get_mut(BackendKind::Ocr).locator = format!("http://{}", server.addr);
    let engine = Engine::new(config).unwrap();
    let failure = engine.detect_vim(&pairs[0]).await.unwrap_err();
    assert_eq!(failure.error.stage_name(), "ocr");
    let msg = failure.error.to_string();
    assert!(msg.contains("schema violation") && msg.contains("tokens"), "{msg}");
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn bearer_token_reaches_backend() {
    use axum::http::HeaderMap;

    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 10, 1, LabelMix::default());
    let checker = Router::new().route(
        "/v1/keyobjects",
        post(|headers: HeaderMap| async move {
            let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).unwrap_or("");
            if auth == "Bearer t0ken" {
                (axum::http::StatusCode::OK, "{\"objects\": []}")
            } else {
                (axum::http::StatusCode::UNAUTHORIZED, "{\"error\": \"no\"}")
            }
        }),
    );
    let server = start_router(checker).await;
    let mut config = PipelineConfig::with_oracle(dir.path(), &NoiseProfile::default());
    let ep = config.endpoints.get_mut(BackendKind::Keyobjects);
    ep.locator = format!("http://{}", server.addr);
    let engine = Engine::new(config.clone()).unwrap();
    let err = engine.detect_obstruction(&pairs[0]).await.unwrap_err();
    assert!(err.error.to_string().contains("401"), "{}", err.error);

    config.endpoints.get_mut(BackendKind::Keyobjects).bearer_token = Some("t0ken".into());
    let engine = Engine::new(config).unwrap();
    let report = engine.detect_obstruction(&pairs[0]).await.unwrap();
    assert!(!report.verdict.attacked);
    assert_eq!(report.verdict.mitigation, Mitigation::None);
    server.shutdown().await;
}
