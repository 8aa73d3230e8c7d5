mod common;

use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use common::stub::{malformed_reply, Reply, StubServer};
use serde_json::{json, Value};
use wordart_core::genbackends::{
    BackendError, RemoteBackend, ScoreBackend, StyleBackend, StylizeRequest, TexturizeRequest,
};
use wordart_core::image::Image;
use wordart_core::planner::{self, PlanError, Provenance};

fn gradient(w: usize, h: usize) -> Image {
    Image::from_fn_clamped(w, h, 1, |x, y, _| ((x + 2 * y) % 11) as f64 / 10.0)
}

fn png_b64(img: &Image) -> String {
    STANDARD.encode(img.to_png().unwrap())
}

fn decode(v: &Value) -> Image {
    Image::from_png(&STANDARD.decode(v.as_str().unwrap()).unwrap()).unwrap()
}

/// Echoes a valid image of the requested size for image endpoints and a
/// fixed score for /v1/score.
fn echo_server() -> StubServer {
    StubServer::start(|req| {
        let body = req.json();
        let img = match req.path.as_str() {
            "/v1/stylize" => decode(&body["depth_png_b64"]),
            "/v1/texturize" => decode(&body["control_png_b64"]),
            "/v1/score" => return Reply::json(200, &json!({ "legibility": 0.625, "model": "stub" })),
            _ => return Reply::json(404, &json!({ "error": "no such endpoint" })),
        };
        let rgb = Image::from_fn_clamped(img.width(), img.height(), 3, |x, y, c| img.get(x, y, 0) * [1.0, 0.5, 0.25][c]);
        Reply::json(200, &json!({ "image_png_b64": png_b64(&rgb), "elapsed_ms": 3 }))
    })
}

#[test]
fn stylize_sends_exact_fields() {
    let server = echo_server();
    let depth = gradient(20, 12);
    let out = RemoteBackend::new(&server.url)
        .stylize(&StylizeRequest {
            prompt: "gold".into(),
            depth: depth.clone(),
            seed: 7,
            strength: 0.75,
        })
        .unwrap();
    assert_eq!((out.width(), out.height(), out.channels()), (20, 12, 3));
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].path, "/v1/stylize");
    assert_eq!(reqs[0].content_type.as_deref(), Some("application/json"));
    assert_eq!(reqs[0].fields(), ["depth_png_b64", "prompt", "seed", "strength"]);
    let body = reqs[0].json();
    assert_eq!(body["prompt"], "gold");
    assert_eq!(body["seed"], 7);
    assert_eq!(body["strength"], 0.75);
    assert_eq!(decode(&body["depth_png_b64"]), depth.quantized());
}

#[test]
fn texturize_sends_exact_fields() {
    let server = echo_server();
    let control = gradient(9, 14);
    let out = RemoteBackend::new(&server.url)
        .texturize(&TexturizeRequest {
            prompt: "marble".into(),
            control: control.clone(),
            seed: u64::from(u32::MAX) + 5,
        })
        .unwrap();
    assert_eq!((out.width(), out.height()), (9, 14));
    let reqs = server.requests();
    assert_eq!(reqs[0].path, "/v1/texturize");
    assert_eq!(reqs[0].fields(), ["control_png_b64", "prompt", "seed"]);
    assert_eq!(reqs[0].json()["seed"], u64::from(u32::MAX) + 5);
    assert_eq!(decode(&reqs[0].json()["control_png_b64"]), control.quantized());
}

#[test]
fn score_sends_exact_fields_and_ignores_extras() {
    let server = echo_server();
    let mask = gradient(6, 6);
    let report = RemoteBackend::new(&server.url).score(&Image::zeros(6, 6, 3), &mask, 0.6).unwrap();
    assert_eq!(report.legibility, 0.625);
    assert!(report.passed);
    let reqs = server.requests();
    assert_eq!(reqs[0].path, "/v1/score");
    assert_eq!(reqs[0].fields(), ["image_png_b64", "mask_png_b64"]);
}

#[test]
fn plan_sends_exact_fields_and_validates_reply() {
    let server = StubServer::start(|_| {
        Reply::json(200, &json!({ "semantic_concept": "owl", "target_shape": "heart", "num_variants": 3, "note": 1 }))
    });
    let remote = RemoteBackend::new(&server.url);
    let out = planner::plan("An owl made of love", Some(&remote)).unwrap();
    assert_eq!(out.provenance, Provenance::Backend);
    assert_eq!(out.directives.semantic_concept, "owl");
    assert_eq!(out.directives.target_shape, "heart");
    assert_eq!(out.directives.num_variants, 3);
    let reqs = server.requests();
    assert_eq!(reqs[0].path, "/v1/plan");
    assert_eq!(reqs[0].fields(), ["user_text"]);
    assert_eq!(reqs[0].json()["user_text"], "An owl made of love");
}

#[test]
fn invalid_plan_document_is_a_schema_violation() {
    let server = StubServer::start(|_| Reply::json(200, &json!({ "num_variants": 0, "target_shape": "blob" })));
    let err = planner::plan("cat", Some(&RemoteBackend::new(&server.url))).unwrap_err();
    let PlanError::SchemaViolation(_) = &err else { panic!("{err:?}") };
    let paths = err.paths();
    assert!(paths.contains(&"num_variants") && paths.contains(&"target_shape"), "{paths:?}");
}

#[test]
fn unreachable_planner_falls_back_to_rules() {
    let remote = RemoteBackend::with_timeouts("http://127.0.0.1:1", Duration::from_millis(300), Duration::from_secs(2));
    let out = planner::plan("A cat in jewelry design", Some(&remote)).unwrap();
    assert!(matches!(out.provenance, Provenance::RulesAfterBackendFailure { .. }));
    assert_eq!(out.directives, planner::plan_with_rules("A cat in jewelry design").unwrap());
}

#[test]
fn server_errors_are_retried_once() {
    let server = StubServer::start(|_| Reply::json(503, &json!({ "error": "overloaded" })));
    let err = RemoteBackend::new(&server.url).score(&Image::zeros(2, 2, 1), &Image::zeros(2, 2, 1), 0.5).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { retryable: true, .. }), "{err:?}");
    assert!(err.to_string().contains("overloaded"));
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(|_| Reply::json(400, &json!({ "error": "bad prompt" })));
    let err = RemoteBackend::new(&server.url)
        .texturize(&TexturizeRequest {
            prompt: "x".into(),
            control: Image::zeros(2, 2, 1),
            seed: 0,
        })
        .unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { retryable: false, .. }), "{err:?}");
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn slow_server_times_out_as_retryable() {
    let server = StubServer::start(|_| Reply {
        delay: Duration::from_millis(1500),
        ..Reply::json(200, &json!({ "legibility": 1.0 }))
    });
    let remote = RemoteBackend::with_timeouts(&server.url, Duration::from_secs(1), Duration::from_millis(300));
    let err = remote.score(&Image::zeros(2, 2, 1), &Image::zeros(2, 2, 1), 0.5).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { retryable: true, .. }), "{err:?}");
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn two_hundred_malformed_replies_never_crash() {
    let seed = Arc::new(std::sync::atomic::AtomicU64::new(0));
    let current = seed.clone();
    let server = StubServer::start(move |_| malformed_reply(current.load(std::sync::atomic::Ordering::SeqCst)));
    let remote = RemoteBackend::new(&server.url);
    let img = gradient(8, 8);
    for s in 0..200u64 {
        seed.store(s, std::sync::atomic::Ordering::SeqCst);
        let err = match s % 3 {
            0 => remote
                .stylize(&StylizeRequest {
                    prompt: "p".into(),
                    depth: img.clone(),
                    seed: s,
                    strength: 0.5,
                })
                .unwrap_err(),
            1 => remote
                .texturize(&TexturizeRequest {
                    prompt: "p".into(),
                    control: img.clone(),
                    seed: s,
                })
                .unwrap_err(),
            _ => remote.score(&img, &img, 0.5).unwrap_err(),
        };
        assert!(matches!(err, BackendError::MalformedReply(_)), "seed {s}: {err:?}");
    }
}

#[test]
fn malformed_plan_replies_are_rejected() {
    let seed = Arc::new(std::sync::atomic::AtomicU64::new(0));
    let current = seed.clone();
    let server = StubServer::start(move |_| malformed_reply(current.load(std::sync::atomic::Ordering::SeqCst)));
    let remote = RemoteBackend::new(&server.url);
    for s in 0..50u64 {
        seed.store(s, std::sync::atomic::Ordering::SeqCst);
        match planner::plan("cat", Some(&remote)) {
            Err(PlanError::Backend(BackendError::MalformedReply(_))) | Err(PlanError::SchemaViolation(_)) => {}
            // an object with only unknown fields is a valid (all-default) plan
            Ok(out) => assert_eq!(out.provenance, Provenance::Backend),
            Err(e) => panic!("seed {s}: {e:?}"),
        }
    }
}
