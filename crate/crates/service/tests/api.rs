use std::collections::BTreeMap;
use std::path::Path;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use gridrec_core::mdp_env::{GridEnv, GridState, RewardKind};
use gridrec_core::online_update::{FeedbackLog, RetrainSchedule};
use gridrec_core::persistence::{load_model, save_model, GridModel};
use gridrec_core::rl_trainer::{train, TrainConfig};
use gridrec_service::{router, AppState, FeedbackResponse, GridResponse, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

/// 3×3 grid; cell c holds users {c+1, c+2} and items {10c+1, 10c+2}.
fn write_model(path: &Path) -> GridModel {
    let states = (0..9u32)
        .map(|c| GridState::new(vec![c + 1, c + 2], vec![10 * c + 1, 10 * c + 2]))
        .collect();
    let env = GridEnv::new(3, states, RewardKind::Similarity).unwrap();
    let cfg = TrainConfig {
        episodes: 200,
        horizon: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let (q, _) = train(&env, &cfg).unwrap();
    let popularity = env
        .states()
        .iter()
        .flat_map(|s| s.items.iter().map(|&i| (i, 100 - i)))
        .collect();
    let model = GridModel::new(env, q, cfg, BTreeMap::new(), popularity);
    save_model(&model, path).unwrap();
    model
}

fn config(dir: &Path, retrain_every: u64, snapshot_every: u64) -> ServiceConfig {
    ServiceConfig {
        model_path: dir.join("model.json"),
        log_path: dir.join("feedback.jsonl"),
        snapshot_every,
        retrain: RetrainSchedule {
            every: retrain_every,
            episodes: 100,
        },
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn raw_post(app: &Router, uri: &str, body: &str) -> StatusCode {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    app.clone().oneshot(req).await.unwrap().status()
}

fn setup(retrain_every: u64, snapshot_every: u64) -> (tempfile::TempDir, AppState, Router) {
    let dir = tempfile::tempdir().unwrap();
    write_model(&dir.path().join("model.json"));
    let state = AppState::load(config(dir.path(), retrain_every, snapshot_every)).unwrap();
    let app = router(state.clone());
    (dir, state, app)
}

#[tokio::test]
async fn health_and_grid() {
    let (_dir, _state, app) = setup(0, 0);
    let (status, health) = call(&app, "GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        health,
        json!({"status": "ok", "model_version": 1, "feedback_seq": 0})
    );

    let (status, grid) = call(&app, "GET", "/v1/grid", None).await;
    assert_eq!(status, StatusCode::OK);
    let grid: GridResponse = serde_json::from_value(grid).unwrap();
    assert_eq!(grid.n, 3);
    assert_eq!(grid.cells.len(), 9);
    assert!(grid
        .cells
        .iter()
        .all(|c| c.user_set_size == 2 && c.item_set_size == 2));
}

#[tokio::test]
async fn recommendations_follow_the_model() {
    let (dir, _state, app) = setup(0, 0);
    let (status, rec) = call(
        &app,
        "POST",
        "/v1/recommendations",
        Some(json!({"profile": [1], "n": 3, "k": 1, "epsilon": 0.0, "seed": 4})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let items = rec["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    // Profile {1} matches cell (0,0) only; its other item comes first.
    assert_eq!(
        items[0],
        json!({"item": 2, "cell": [0, 0], "users": 2, "items": 2})
    );
    assert_eq!(rec["trace"][0], json!([0, 0]));

    let model = load_model(dir.path().join("model.json")).unwrap();
    let direct = gridrec_core::recommender::walk_and_recommend(
        &model,
        &gridrec_core::recommender::RecommendationRequest {
            profile: vec![1],
            n: 3,
            k: 1,
            epsilon: 0.0,
            max_steps: 100,
            seed: 4,
        },
    )
    .unwrap();
    assert_eq!(rec, serde_json::to_value(direct).unwrap());
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let (_dir, _state, app) = setup(0, 0);
    assert_eq!(
        raw_post(&app, "/v1/recommendations", "{not json").await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        raw_post(&app, "/v1/recommendations", r#"{"profile": "x", "n": 3}"#).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        raw_post(&app, "/v1/recommendations", r#"{"profile": [], "n": 3}"#).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        raw_post(&app, "/v1/recommendations", r#"{"profile": [1], "n": 0}"#).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        raw_post(
            &app,
            "/v1/feedback",
            r#"{"user": 1, "cell": [0], "satisfied": true}"#
        )
        .await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        raw_post(&app, "/v1/feedback", r#"{"user": 1}"#).await,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn out_of_bounds_cells_are_404() {
    let (dir, _state, app) = setup(0, 0);
    let (status, _) = call(&app, "GET", "/v1/cell/9/9", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        "POST",
        "/v1/feedback",
        Some(json!({"user": 50, "cell": [9, 9], "satisfied": true})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    // Rejected feedback is not logged.
    assert!(FeedbackLog::read_all(dir.path().join("feedback.jsonl"))
        .unwrap()
        .is_empty());
}

#[tokio::test]
async fn feedback_grows_the_cell_once() {
    let (dir, _state, app) = setup(0, 0);
    let (_, before) = call(&app, "GET", "/v1/cell/1/2", None).await;
    assert_eq!(
        before,
        json!({"cell": [1, 2], "user_set_size": 2, "item_set_size": 2})
    );

    let post = |satisfied: bool| {
        let app = app.clone();
        async move {
            let (status, body) = call(
                &app,
                "POST",
                "/v1/feedback",
                Some(json!({"user": 500, "cell": [1, 2], "satisfied": satisfied})),
            )
            .await;
            assert_eq!(status, StatusCode::OK);
            serde_json::from_value::<FeedbackResponse>(body).unwrap()
        }
    };
    let first = post(true).await;
    assert_eq!(
        first,
        FeedbackResponse {
            seq: 1,
            applied: true,
            new_user_set_size: 3,
            retrained: false
        }
    );
    let (_, after) = call(&app, "GET", "/v1/cell/1/2", None).await;
    assert_eq!(after["user_set_size"], 3);

    let again = post(true).await;
    assert!(!again.applied);
    assert_eq!(again.new_user_set_size, 3);
    let unsatisfied = post(false).await;
    assert!(!unsatisfied.applied);
    assert_eq!(unsatisfied.new_user_set_size, 3);

    let (_, grid) = call(&app, "GET", "/v1/grid", None).await;
    let grid: GridResponse = serde_json::from_value(grid).unwrap();
    assert_eq!(grid.feedback_seq, 3);
    assert_eq!(grid.cells[5].user_set_size, 3);

    let log = FeedbackLog::read_all(dir.path().join("feedback.jsonl")).unwrap();
    assert_eq!(log.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(
        log.iter().map(|e| e.satisfied).collect::<Vec<_>>(),
        vec![true, true, false]
    );
}

#[tokio::test]
async fn retraining_feedback_changes_q() {
    let (_dir, _state, app) = setup(1, 0);
    let (_, q_before) = call(&app, "GET", "/v1/q", None).await;
    assert_eq!(q_before["shape"], json!([3, 3, 4]));
    assert_eq!(q_before["actions"], json!(["up", "down", "left", "right"]));
    // (0,0): up and left leave the grid.
    assert_eq!(q_before["values"][0], Value::Null);
    assert_eq!(q_before["values"][2], Value::Null);

    let (_, resp) = call(
        &app,
        "POST",
        "/v1/feedback",
        Some(json!({"user": 77, "cell": [1, 1], "satisfied": true})),
    )
    .await;
    assert_eq!(resp["retrained"], true);
    let (_, q_after) = call(&app, "GET", "/v1/q", None).await;
    // Edges into and out of (1,1): cell index 4.
    let touched = [
        4 * 4,
        4 * 4 + 1,
        4 * 4 + 2,
        4 * 4 + 3,
        4 + 1,
        12 + 3,
        20 + 2,
        28,
    ];
    assert!(
        touched
            .iter()
            .any(|&i| q_before["values"][i] != q_after["values"][i]),
        "no Q value changed around the updated cell"
    );
}

#[tokio::test]
async fn restart_replays_the_log() {
    let dir = tempfile::tempdir().unwrap();
    write_model(&dir.path().join("model.json"));
    let cfg = config(dir.path(), 2, 0);
    let grid_after_live = {
        let app = router(AppState::load(cfg.clone()).unwrap());
        for (user, cell) in [(40, [0, 0]), (41, [2, 2]), (42, [0, 1])] {
            let (status, _) = call(
                &app,
                "POST",
                "/v1/feedback",
                Some(json!({"user": user, "cell": cell, "satisfied": true})),
            )
            .await;
            assert_eq!(status, StatusCode::OK);
        }
        let grid = call(&app, "GET", "/v1/grid", None).await.1;
        let q = call(&app, "GET", "/v1/q", None).await.1;
        (grid, q)
    };
    // Nothing was snapshotted, so the restart rebuilds everything from the log.
    let app = router(AppState::load(cfg).unwrap());
    let grid = call(&app, "GET", "/v1/grid", None).await.1;
    let q = call(&app, "GET", "/v1/q", None).await.1;
    assert_eq!((grid, q), grid_after_live);
}

#[tokio::test]
async fn snapshots_save_the_model() {
    let (dir, state, app) = setup(0, 2);
    for user in [60, 61] {
        call(
            &app,
            "POST",
            "/v1/feedback",
            Some(json!({"user": user, "cell": [0, 0], "satisfied": true})),
        )
        .await;
    }
    let saved = load_model(dir.path().join("model.json")).unwrap();
    assert_eq!(saved.feedback_seq, 2);
    assert_eq!(
        saved
            .state(gridrec_core::mdp_env::Cell::new(0, 0))
            .unwrap()
            .users,
        vec![1, 2, 60, 61]
    );

    // Replaying the whole log over the snapshot changes nothing.
    let reloaded = AppState::load(config(dir.path(), 0, 2)).unwrap();
    let (_, health) = call(&router(reloaded), "GET", "/v1/health", None).await;
    assert_eq!(health["feedback_seq"], 2);

    let (status, body) = call(&app, "POST", "/v1/snapshot", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["feedback_seq"], 2);

    let guard = state.hold_write().await;
    let (status, _) = call(&app, "POST", "/v1/snapshot", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    drop(guard);
    let (status, _) = call(&app, "POST", "/v1/snapshot", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn concurrent_feedback_is_serialized() {
    let (_dir, _state, app) = setup(0, 0);
    let mut handles = Vec::new();
    for user in 100..120u32 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            call(
                &app,
                "POST",
                "/v1/feedback",
                Some(json!({"user": user, "cell": [1, 1], "satisfied": true})),
            )
            .await
            .1["seq"]
                .as_u64()
                .unwrap()
        }));
    }
    let mut seqs = Vec::new();
    for h in handles {
        seqs.push(h.await.unwrap());
    }
    seqs.sort_unstable();
    assert_eq!(seqs, (1..=20).collect::<Vec<_>>());
    let (_, cell) = call(&app, "GET", "/v1/cell/1/1", None).await;
    assert_eq!(cell["user_set_size"], 22);
}
