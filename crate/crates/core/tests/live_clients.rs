//! Live clients against a local OpenAI-compatible stand-in server.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine as _;
use serde_json::{json, Value};
use vkc_core::conflict::ProbabilityBackend;
use vkc_core::modelio::{
    generate_image, CachedBackend, CachedMllm, EndpointKind, ImageGenerator, LiveImageGenerator, LiveLm,
    LiveMllm, MllmClient, MllmRequest, ModelEndpointConfig, ModelError, RetryPolicy,
};

#[derive(Default)]
struct Counters {
    completions: AtomicU32,
    chats: AtomicU32,
    images: AtomicU32,
    /// Chat requests answered with 503 before succeeding.
    chat_failures: AtomicU32,
}

async fn completions(State(c): State<Arc<Counters>>, Json(body): Json<Value>) -> Json<Value> {
    c.completions.fetch_add(1, Ordering::SeqCst);
    let prompt = body["prompt"].as_str().unwrap_or("");
    let mut offsets = Vec::new();
    let mut pos = 0;
    for word in prompt.split(' ') {
        offsets.push(pos);
        pos += word.len() + 1;
    }
    let logprobs: Vec<Value> = offsets
        .iter()
        .enumerate()
        .map(|(i, _)| if i == 0 { Value::Null } else { json!(-std::f64::consts::LN_2) })
        .collect();
    Json(json!({
        "choices": [{ "text": prompt, "logprobs": { "token_logprobs": logprobs, "text_offset": offsets } }]
    }))
}

async fn chat(State(c): State<Arc<Counters>>, Json(body): Json<Value>) -> Result<Json<Value>, StatusCode> {
    c.chats.fetch_add(1, Ordering::SeqCst);
    if c
        .chat_failures
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return Err(StatusCode::SERVICE_UNAVAILABLE);
    }
    let content = &body["messages"][0]["content"];
    let has_image = content.as_array().is_some_and(|parts| parts.iter().any(|p| p["type"] == "image_url"));
    let n = body["n"].as_u64().unwrap_or(1);
    let text = if has_image { "Yes." } else { "No." };
    let choices: Vec<Value> = (0..n).map(|_| json!({ "message": { "content": text } })).collect();
    Ok(Json(json!({ "model": "stand-in", "choices": choices })))
}

async fn images(State(c): State<Arc<Counters>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    c.images.fetch_add(1, Ordering::SeqCst);
    if body["prompt"].as_str().unwrap_or("").contains("forbidden") {
        return (
            StatusCode::BAD_REQUEST,
            Json(json!({ "error": { "code": "content_policy_violation" } })),
        );
    }
    let png = base64::engine::general_purpose::STANDARD.encode(b"\x89PNG fake bytes");
    (StatusCode::OK, Json(json!({ "data": [{ "b64_json": png }] })))
}

fn spawn_server(counters: Arc<Counters>) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new()
                .route("/v1/completions", post(completions))
                .route("/v1/chat/completions", post(chat))
                .route("/v1/images/generations", post(images))
                .with_state(counters);
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn endpoint(addr: SocketAddr, kind: EndpointKind) -> ModelEndpointConfig {
    let mut e = ModelEndpointConfig::new("stand-in", kind, &format!("http://{addr}/v1"), "m");
    e.retry = RetryPolicy::no_delay(3);
    e.timeout_secs = 5.0;
    e
}

#[test]
fn lm_scores_echoed_tokens_and_warm_cache_is_offline() {
    let counters = Arc::new(Counters::default());
    let addr = spawn_server(counters.clone());
    let cache = tempfile::tempdir().unwrap();
    let phrases = ["the baby on the bed", "the baby fixing a computer"];

    let cold = CachedBackend::new(LiveLm::new(endpoint(addr, EndpointKind::Lm)).unwrap(), cache.path()).unwrap();
    for p in phrases {
        // One bit per token after the first (unscored) one.
        let words = p.split(' ').count() as f64;
        let lp = cold.sequence_logprob(p).unwrap();
        assert!((lp + (words - 1.0)).abs() < 1e-9, "{p}: {lp}");
    }
    assert_eq!(cold.inner().network_calls(), 2);

    let warm = CachedBackend::new(LiveLm::new(endpoint(addr, EndpointKind::Lm)).unwrap(), cache.path()).unwrap();
    for p in phrases {
        warm.sequence_logprob(p).unwrap();
    }
    assert_eq!(warm.inner().network_calls(), 0);
    assert_eq!(counters.completions.load(Ordering::SeqCst), 2);
}

#[test]
fn mllm_retries_server_errors_then_caches() {
    let counters = Arc::new(Counters::default());
    counters.chat_failures.store(2, Ordering::SeqCst);
    let addr = spawn_server(counters.clone());
    let ws = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(ws.path().join("images")).unwrap();
    std::fs::write(ws.path().join("images/a.png"), b"png").unwrap();

    let make = || {
        CachedMllm::new(
            LiveMllm::new(endpoint(addr, EndpointKind::Mllm), ws.path()).unwrap(),
            &ws.path().join("cache"),
        )
        .unwrap()
    };
    let client = make();
    let with_image = MllmRequest::with_image("images/a.png", "Is the baby on the bed fixing a computer?", 0.0, 1);
    let text_only = MllmRequest::text_only("Is the baby on the bed fixing a computer?", 0.0, 1);
    assert_eq!(client.query(&with_image).unwrap().texts, vec!["Yes."]);
    assert_eq!(client.inner().network_calls(), 3, "two 503s, then success");
    assert_eq!(client.query(&text_only).unwrap().texts, vec!["No."]);
    let sampled = client.query(&MllmRequest::with_image("images/a.png", "Q?", 1.0, 4)).unwrap();
    assert_eq!(sampled.texts.len(), 4);

    let warm = make();
    warm.query(&with_image).unwrap();
    warm.query(&text_only).unwrap();
    assert_eq!(warm.inner().network_calls(), 0);
}

#[test]
fn retries_are_bounded() {
    let counters = Arc::new(Counters::default());
    counters.chat_failures.store(10, Ordering::SeqCst);
    let addr = spawn_server(counters.clone());
    let ws = tempfile::tempdir().unwrap();
    let client = LiveMllm::new(endpoint(addr, EndpointKind::Mllm), ws.path()).unwrap();
    let err = client.query(&MllmRequest::text_only("Q?", 0.0, 1)).unwrap_err();
    assert!(matches!(err, ModelError::Status { code: 503, .. }), "{err}");
    assert_eq!(client.network_calls(), 3);
}

#[test]
fn missing_credential_fails_before_any_request() {
    let counters = Arc::new(Counters::default());
    let addr = spawn_server(counters.clone());
    let mut e = endpoint(addr, EndpointKind::Lm);
    e.api_key_env = Some("VKC_TEST_UNSET_KEY_VARIABLE".into());
    let lm = LiveLm::new(e).unwrap();
    assert!(matches!(lm.sequence_logprob("a cat"), Err(ModelError::Auth(_))));
    assert_eq!(counters.completions.load(Ordering::SeqCst), 0);
}

#[test]
fn image_generation_stores_file_and_maps_refusals() {
    let counters = Arc::new(Counters::default());
    let addr = spawn_server(counters.clone());
    let ws = tempfile::tempdir().unwrap();
    let generator = LiveImageGenerator::new(endpoint(addr, EndpointKind::Image)).unwrap();
    let ok = generate_image("tri-1", "an image of the baby fixing a computer on the bed", 0, &generator, ws.path())
        .unwrap();
    assert!(ws.path().join(&ok.uri).is_file());
    assert!(ok.uri.ends_with(".png"));
    let refused = generate_image("tri-2", "an image of something forbidden", 0, &generator, ws.path()).unwrap();
    assert!(matches!(refused.status, vkc_core::benchgen::ImageStatus::Failed { .. }));
    assert_eq!(generator.id(), "stand-in");
    assert_eq!(generator.network_calls(), 2);
}
