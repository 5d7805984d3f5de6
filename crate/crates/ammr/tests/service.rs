use ammr::service::{router, AppState, RefineResponse};
use ammr_core::catalog::{generate_catalog, Skew};
use ammr_core::index::IndexKind;
use ammr_core::pipeline::{Engine, EngineConfig};
use ammr_core::schema::AttributeSchema;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> (Router, AppState) {
    let schema = AttributeSchema::default_schema();
    let catalog = generate_catalog(&schema, 2000, &Skew::new().with("detail.pocket", 0.8), 3).unwrap();
    let engine = Engine::build(schema, catalog, IndexKind::Ivf, 16, 3, EngineConfig::default()).unwrap();
    let state = AppState::new(engine);
    (router(state.clone()), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn session(app: &Router) -> String {
    let (s, v) = call(app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

fn pocketed_anchor(state: &AppState) -> String {
    state
        .engine
        .catalog
        .items()
        .iter()
        .find(|i| i.has_detail("pocket") && i.attr("silhouette") == Some("hoodie"))
        .unwrap()
        .id
        .clone()
}

#[tokio::test]
async fn healthz_and_catalog_paging() {
    let (app, _) = app();
    assert_eq!(call(&app, "GET", "/healthz", None).await, (StatusCode::OK, json!({"status": "ok"})));

    let (s, v) = call(&app, "GET", "/catalog/items?offset=0&limit=24", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["items"].as_array().unwrap().len(), 24);
    assert_eq!(v["total"], 2000);
    assert_eq!(v["items"][0]["id"], "i000000");

    let (_, v) = call(&app, "GET", "/catalog/items?offset=1990&limit=24", None).await;
    assert_eq!(v["items"].as_array().unwrap().len(), 10);
    let (_, v) = call(&app, "GET", "/catalog/items?offset=5000", None).await;
    assert!(v["items"].as_array().unwrap().is_empty());

    let (s, v) = call(&app, "GET", "/catalog/items?limit=0", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "invalid_limit");
    assert_eq!(v["field"], "limit");
    let (s, v) = call(&app, "GET", "/catalog/items?offset=-1", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "invalid_query");
}

#[tokio::test]
async fn refine_removes_the_pocket_end_to_end() {
    let (app, state) = app();
    let sid = session(&app).await;
    let anchor = pocketed_anchor(&state);
    let (s, v) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/refine"),
        Some(json!({"anchor_item_id": anchor, "text": "without a pocket"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let resp: RefineResponse = serde_json::from_value(v).unwrap();
    assert_eq!(resp.results.len(), 10);
    for r in &resp.results {
        // Re-check against the raw catalog record.
        let item = state.engine.catalog.get(&r.item_id).unwrap();
        assert!(!item.details.contains("pocket"), "{} has a pocket", r.item_id);
        assert!(!r.rationale.is_empty());
        assert!(r.violated.is_empty());
    }
    assert!(resp.results.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(resp.chips.len(), 1);
    assert_eq!(resp.chips[0].label, "no pocket");
    assert!(resp.trace.is_well_formed(3));
    assert!(resp.memory_weights.is_identity());
    assert!(resp.timings.total_us >= resp.timings.episode_us);
}

#[tokio::test]
async fn refine_accepts_an_anchor_vector_and_k() {
    let (app, state) = app();
    let sid = session(&app).await;
    let item = state.engine.catalog.items()[0].clone();
    let v = ammr_core::embedding::encode_item_disentangled(&item, &state.engine.schema, &state.engine.layout).unwrap();
    let (s, body) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/refine"),
        Some(json!({"anchor_vector": v.values, "text": "in red", "k": 5, "composer": "delta_shift"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let resp: RefineResponse = serde_json::from_value(body).unwrap();
    assert_eq!(resp.results.len(), 5);
    for r in &resp.results {
        assert_eq!(state.engine.catalog.get(&r.item_id).unwrap().attr("color"), Some("red"));
    }
}

#[tokio::test]
async fn refine_errors_name_the_problem() {
    let (app, state) = app();
    let sid = session(&app).await;
    let anchor = pocketed_anchor(&state);
    let uri = format!("/sessions/{sid}/refine");

    let (s, v) = call(&app, "POST", &uri, Some(json!({"anchor_item_id": "nope", "text": "in red"}))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_item")));

    let (s, v) = call(&app, "POST", &uri, Some(json!({"anchor_item_id": anchor, "text": "  "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "empty_text");
    assert_eq!(v["field"], "text");

    let (s, v) = call(&app, "POST", &uri, Some(json!({"anchor_item_id": anchor}))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("empty_text")));

    let (s, v) = call(
        &app,
        "POST",
        "/sessions/s999999/refine",
        Some(json!({"anchor_item_id": anchor, "text": "in red"})),
    )
    .await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_session")));

    let (s, v) = call(&app, "POST", &uri, Some(json!({"text": "in red"}))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_anchor")));
    let (s, v) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"anchor_item_id": anchor, "anchor_vector": [1.0], "text": "in red"})),
    )
    .await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_anchor")));

    let (s, v) = call(&app, "POST", &uri, Some(json!({"anchor_vector": [1.0, 0.0], "text": "in red"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "anchor_vector");

    let (s, v) = call(&app, "POST", &uri, Some(json!({"anchor_item_id": anchor, "text": "in red", "k": 0}))).await;
    assert_eq!((s, v["field"].as_str()), (StatusCode::BAD_REQUEST, Some("k")));

    let (s, v) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"anchor_item_id": anchor, "text": "in red", "composer": "maaf"})),
    )
    .await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("unknown_composer")));

    let (s, v) = call(&app, "POST", &uri, Some(json!({"anchor_item_id": anchor, "text": "zzz qqq"}))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("unparseable_text")));

    let req = Request::builder()
        .method("POST")
        .uri(&uri)
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn feedback_round_trip_counts_once() {
    let (app, state) = app();
    let sid = session(&app).await;
    let item = state.engine.catalog.items()[7].clone();

    let (s, v) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/feedback"),
        Some(json!({"item_id": item.id, "verdict": "reject"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");

    let (s, v) = call(&app, "GET", &format!("/sessions/{sid}/memory"), None).await;
    assert_eq!(s, StatusCode::OK);
    let style = item.attr("style").unwrap();
    assert_eq!(v["memory"]["counts"]["style"][style], json!({"accept": 0, "reject": 1}));
    let color = item.attr("color").unwrap();
    assert_eq!(v["memory"]["counts"]["color"][color]["reject"], 1);
    // m = 1 + 0.5 * (0 - 1) / 2
    assert_eq!(v["weights"]["multipliers"]["style"][style], 0.75);

    let (s, v) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/feedback"),
        Some(json!({"item_id": "nope", "verdict": "accept"})),
    )
    .await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_item")));
    let (s, _) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/feedback"),
        Some(json!({"item_id": item.id, "verdict": "maybe"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, "GET", "/sessions/s424242/memory", None).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_session")));

    // The failed calls changed nothing.
    let (_, v) = call(&app, "GET", &format!("/sessions/{sid}/memory"), None).await;
    assert_eq!(v["memory"]["counts"]["style"][style]["reject"], 1);
}

#[tokio::test]
async fn feedback_conditions_the_next_refine() {
    let (app, state) = app();
    let sid = session(&app).await;
    let anchor = pocketed_anchor(&state);
    let item = state.engine.catalog.items()[1].clone();
    for _ in 0..3 {
        call(
            &app,
            "POST",
            &format!("/sessions/{sid}/feedback"),
            Some(json!({"item_id": item.id, "verdict": "reject"})),
        )
        .await;
    }
    let (_, v) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/refine"),
        Some(json!({"anchor_item_id": anchor, "text": "gorpcore please"})),
    )
    .await;
    let resp: RefineResponse = serde_json::from_value(v).unwrap();
    assert!(!resp.memory_weights.is_identity());
    let style = item.attr("style").unwrap();
    assert_eq!(resp.memory_weights.multipliers["style"][style], 1.0 - 0.5 * 3.0 / 4.0);
    let (_, mem) = call(&app, "GET", &format!("/sessions/{sid}/memory"), None).await;
    assert_eq!(mem["memory"]["recent_tokens"], json!(["gorpcore"]));
}

/// Everything except wall-clock fields and the session id.
fn stable(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v.as_object_mut().unwrap().remove("session_id");
    for step in v["trace"]["steps"].as_array_mut().unwrap() {
        step.as_object_mut().unwrap().remove("elapsed_us");
    }
    v
}

#[tokio::test]
async fn identical_requests_on_fresh_sessions_agree() {
    let (app, state) = app();
    let anchor = pocketed_anchor(&state);
    let body = json!({"anchor_item_id": anchor, "text": "darker with a belt"});
    let mut seen = Vec::new();
    for _ in 0..3 {
        let sid = session(&app).await;
        let (s, v) = call(&app, "POST", &format!("/sessions/{sid}/refine"), Some(body.clone())).await;
        assert_eq!(s, StatusCode::OK);
        seen.push(stable(v));
    }
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[1], seen[2]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions() {
    let (app, state) = app();
    let anchor = pocketed_anchor(&state);
    let mut handles = Vec::new();
    for i in 0..16 {
        let app = app.clone();
        let anchor = anchor.clone();
        handles.push(tokio::spawn(async move {
            let sid = session(&app).await;
            let text = if i % 2 == 0 { "without a pocket" } else { "in navy" };
            let (s, v) = call(
                &app,
                "POST",
                &format!("/sessions/{sid}/refine"),
                Some(json!({"anchor_item_id": anchor, "text": text})),
            )
            .await;
            assert_eq!(s, StatusCode::OK);
            stable(v)
        }));
    }
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    for pair in out.chunks(2).collect::<Vec<_>>().windows(2) {
        assert_eq!(pair[0], pair[1]);
    }
    assert_eq!(state.sessions.len(), 16);
}
