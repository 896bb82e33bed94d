mod common;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sqlexplore::protocol::{ObservationKind, TerminalReason};
use sqlexplore::sqlenv::StepOutcome;
use sqlexplore::{SchemaRewardMode, Scorer, Trajectory};
use sqlexplore_cli::service::{router, AppState, CreatedSession};
use tower::ServiceExt;

use common::*;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
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
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn open(app: &Router, init: Value) -> CreatedSession {
    let (status, body) = call(app, Method::POST, "/sessions", Some(init)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    serde_json::from_value(body).unwrap()
}

async fn step(app: &Router, id: &str, text: &str) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/sessions/{id}/step"), Some(json!({ "raw_text": text }))).await
}

#[tokio::test]
async fn full_rollout_over_http_scores_like_a_local_one() {
    let fx = Fixture::new();
    let app = router(AppState::new(fx.registry()));
    let created = open(&app, json!({"question_id": "q0", "db_id": "shop", "question": "who?"})).await;
    assert!(created.observation.is_none());

    let turns = solve(GOLD);
    for (i, text) in turns.iter().enumerate() {
        let (status, body) = step(&app, &created.session_id, text).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let outcome: StepOutcome = serde_json::from_value(body).unwrap();
        let last = i + 1 == turns.len();
        assert_eq!(outcome.terminal, last);
        if i == 2 {
            let obs = outcome.observation.unwrap();
            assert_eq!(obs.kind, ObservationKind::Rows);
            assert_eq!(obs.rows.len(), 20);
        }
        if last {
            assert_eq!(outcome.terminal_reason, Some(TerminalReason::Confirmed));
        }
    }

    let (status, body) = call(&app, Method::GET, &format!("/sessions/{}/trajectory", created.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    let trajectory: Trajectory = serde_json::from_value(body).unwrap();
    assert_eq!(trajectory.turns.len(), 4);
    assert_eq!(trajectory.tool_call_count(), 2);

    let scorer = Scorer::new(fx.registry(), SchemaRewardMode::default());
    let rewards = scorer.score(&trajectory, &entry("q0").gold()).unwrap();
    assert_eq!((rewards.r_exec, rewards.r_fmt, rewards.r_schema), (1.0, 0.1, 1.0));
    let local = fx.play("q0", 0, &turns);
    assert_eq!(scorer.score(&local, &entry("q0").gold()).unwrap(), rewards);
}

#[tokio::test]
async fn terminal_sessions_reject_steps() {
    let fx = Fixture::new();
    let app = router(AppState::new(fx.registry()));
    let created = open(&app, json!({"db_id": "shop", "max_turns": 1})).await;
    let (status, body) = step(&app, &created.session_id, &generate("SELECT 1")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["terminal_reason"], "max_turns");
    let (status, body) = step(&app, &created.session_id, &confirm("SELECT 1")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("terminal"));
}

#[tokio::test]
async fn prefill_is_returned_on_creation() {
    let fx = Fixture::new();
    let app = router(AppState::new(fx.registry()));
    let created = open(&app, json!({"db_id": "shop", "prefill": true})).await;
    let obs = created.observation.expect("prefill observation");
    assert_eq!(obs.kind, ObservationKind::Prefill);
    assert_eq!(obs.rows.len(), 2);
}

#[tokio::test]
async fn bad_requests_and_missing_sessions() {
    let fx = Fixture::new();
    let state = AppState::new(fx.registry());
    let app = router(state.clone());

    let (status, body) = call(&app, Method::POST, "/sessions", Some(json!({"db_id": "nope"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("nope"));

    let (status, body) = call(&app, Method::POST, "/sessions", Some(json!({"question": "no db"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("db_id"));

    let (status, body) = step(&app, "missing", &confirm("SELECT 1")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());

    let created = open(&app, json!({"db_id": "shop"})).await;
    assert_eq!(state.session_count(), 1);
    let uri = format!("/sessions/{}", created.session_id);
    assert_eq!(call(&app, Method::DELETE, &uri, None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, Method::DELETE, &uri, None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn writes_are_refused_through_the_service() {
    let fx = Fixture::new();
    let app = router(AppState::new(fx.registry()));
    let created = open(&app, json!({"db_id": "shop"})).await;
    let (status, body) = step(&app, &created.session_id, &explore("DELETE FROM employee")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["observation"]["kind"], "error");
    let (_, body) = step(&app, &created.session_id, &explore("SELECT COUNT(*) FROM employee")).await;
    assert_eq!(body["observation"]["rows"][0][0], 40);
}

#[tokio::test]
async fn sessions_are_independent() {
    let fx = Fixture::new();
    let app = router(AppState::new(fx.registry()));
    let a = open(&app, json!({"db_id": "shop", "max_turns": 2})).await;
    let b = open(&app, json!({"db_id": "shop", "max_turns": 2})).await;
    assert_ne!(a.session_id, b.session_id);
    step(&app, &a.session_id, &explore("SELECT 1")).await;
    let (_, tb) = call(&app, Method::GET, &format!("/sessions/{}/trajectory", b.session_id), None).await;
    assert_eq!(tb["turns"].as_array().unwrap().len(), 0);
}
