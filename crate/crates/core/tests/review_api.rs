//! The review HTTP API, driven in-process through the router.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vkc_core::benchgen::{ImageRecord, ImageReview, ImageStatus};
use vkc_core::reviewd::{router, ComponentCaps, ReviewStore, Stage, TaskPayload};

fn image(i: usize) -> ImageRecord {
    ImageRecord {
        id: format!("img-{i:02}"),
        triplet_id: format!("tri-{i:02}"),
        prompt: format!("an image of scene {i}"),
        uri: format!("images/{i:02}.svg"),
        variant: 0,
        status: ImageStatus::Generated,
        review: ImageReview::default(),
    }
}

fn seeded_store(ws: &std::path::Path, n: usize) -> ReviewStore {
    std::fs::create_dir_all(ws.join("images")).unwrap();
    for i in 0..n {
        std::fs::write(ws.join(format!("images/{i:02}.svg")), format!("<svg>{i}</svg>")).unwrap();
    }
    let store = ReviewStore::open(ws).unwrap();
    store
        .enqueue(Stage::Images, (0..n).map(|i| TaskPayload::Image(image(i))).collect())
        .unwrap();
    store
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    let json = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, json, bytes)
}

async fn next_id(app: &Router, annotator: &str) -> Option<(String, u64)> {
    let (status, body, _) = call(app, "GET", &format!("/queues/images/next?annotator={annotator}"), None).await;
    (status == StatusCode::OK).then(|| (body["task"]["id"].as_str().unwrap().to_string(), body["version"].as_u64().unwrap()))
}

#[tokio::test]
async fn ten_task_image_queue_round_trip() {
    let ws = tempfile::tempdir().unwrap();
    let app = router(Arc::new(seeded_store(ws.path(), 10)));

    let (status, queues, _) = call(&app, "GET", "/queues", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(queues.as_array().unwrap().len(), Stage::ALL.len());

    let mut expected_kept = Vec::new();
    for i in 0..10 {
        let (id, version) = next_id(&app, "ann").await.unwrap();
        let (alignment, quality) = ((i % 3 != 0) as u8, (i % 4 != 1) as u8);
        let decision = json!({
            "task_id": id, "annotator": "ann", "version": version,
            "labels": { "alignment": alignment, "quality": quality }
        });
        let (status, stored, _) = call(&app, "POST", "/decisions", Some(decision)).await;
        assert_eq!(status, StatusCode::CREATED, "{stored}");
        assert_eq!(stored["version"], json!(version + 1));
        if alignment + quality == 2 {
            expected_kept.push(format!("img-{i:02}"));
        }
    }
    let (status, body, _) = call(&app, "GET", "/queues/images/next?annotator=ann", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "queue_empty");

    let (_, progress, _) = call(&app, "GET", "/progress", None).await;
    let images = progress.as_array().unwrap().iter().find(|s| s["stage"] == "images").unwrap();
    assert_eq!(images["labeled"], 10);
    assert_eq!(images["accepted"].as_u64().unwrap() as usize, expected_kept.len());
    drop(app);

    // A restarted service sees the same effective labels.
    let store = ReviewStore::open(ws.path()).unwrap();
    let outcome = store.apply(Stage::Images, false, &ComponentCaps::unlimited()).unwrap();
    let kept: Vec<String> = outcome.kept.iter().map(|t| t.payload.item_id()).collect();
    assert_eq!(kept, expected_kept);
}

#[tokio::test]
async fn errors_are_structured() {
    let ws = tempfile::tempdir().unwrap();
    let app = router(Arc::new(seeded_store(ws.path(), 2)));
    let (id, _) = next_id(&app, "ann").await.unwrap();

    let (status, body, _) = call(&app, "GET", "/queues/images/next", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("missing_annotator")));

    let (status, body, _) = call(&app, "GET", "/queues/nope/next?annotator=a", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_stage")));

    let out_of_range = json!({ "task_id": id, "annotator": "a", "labels": { "alignment": 1, "quality": 2 } });
    let (status, body, _) = call(&app, "POST", "/decisions", Some(out_of_range)).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_labels")));

    let missing_field = json!({ "task_id": id, "annotator": "a", "labels": { "alignment": 1 } });
    let (status, _, _) = call(&app, "POST", "/decisions", Some(missing_field)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let unknown = json!({ "task_id": "task-nope", "annotator": "a", "labels": {} });
    let (status, body, _) = call(&app, "POST", "/decisions", Some(unknown)).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_task")));

    let (status, body, _) = call(&app, "POST", "/decisions", Some(json!({ "nonsense": true }))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("malformed_body")));

    let (status, body, _) = call(&app, "GET", "/tasks/task-nope", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_task")));
}

#[tokio::test]
async fn stale_version_conflicts_and_last_write_wins() {
    let ws = tempfile::tempdir().unwrap();
    let app = router(Arc::new(seeded_store(ws.path(), 1)));
    let (id, version) = next_id(&app, "a").await.unwrap();
    let first = json!({ "task_id": id, "annotator": "a", "version": version, "labels": { "alignment": 1, "quality": 1 } });
    assert_eq!(call(&app, "POST", "/decisions", Some(first.clone())).await.0, StatusCode::CREATED);
    let (status, body, _) = call(&app, "POST", "/decisions", Some(first)).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::CONFLICT, Some("version_conflict")));

    let second = json!({ "task_id": id, "annotator": "b", "version": version + 1, "labels": { "alignment": 0, "quality": 1 } });
    assert_eq!(call(&app, "POST", "/decisions", Some(second)).await.0, StatusCode::CREATED);
    let (_, view, _) = call(&app, "GET", &format!("/tasks/{id}"), None).await;
    assert_eq!(view["decision"]["annotator"], "b");
    assert_eq!(view["version"], 2);
}

#[tokio::test]
async fn images_are_served_with_content_type() {
    let ws = tempfile::tempdir().unwrap();
    let app = router(Arc::new(seeded_store(ws.path(), 1)));
    let resp = app
        .clone()
        .oneshot(Request::get("/images/img-00").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/svg+xml");
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<svg>0</svg>");
    let (status, _, _) = call(&app, "GET", "/images/img-99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotator_header_is_accepted() {
    let ws = tempfile::tempdir().unwrap();
    let app = router(Arc::new(seeded_store(ws.path(), 1)));
    let req = Request::get("/queues/images/next").header("x-annotator", "h").body(Body::empty()).unwrap();
    assert_eq!(app.oneshot(req).await.unwrap().status(), StatusCode::OK);
}
