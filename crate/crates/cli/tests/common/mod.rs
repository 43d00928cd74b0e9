#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use arena_cli::api::{router, AppState};
use arena_cli::cli::open;
use arena_core::arena::Arena;
use arena_core::config::init_data_dir;
use arena_core::market::{SampleSpec, Ticker};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;

pub const POOL: [&str; 5] = ["AAPL", "MSFT", "NVDA", "AMZN", "JPM"];

pub fn spec(days: usize) -> SampleSpec {
    SampleSpec {
        tickers: POOL.iter().map(|t| Ticker::new(*t).unwrap()).collect(),
        trading_days: days,
        ..SampleSpec::default()
    }
}

/// A fresh data directory initialised with a `days`-day sample dataset.
pub fn data_dir(days: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    init_data_dir(dir.path(), &spec(days)).unwrap();
    dir
}

pub fn arena_cmd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arena"))
        .args(args)
        .env("ARENA_DATA_DIR", dir)
        .env_remove("ARENA_MODE")
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn app(dir: &Path) -> (Router, Arc<Arena>) {
    let (arena, cfg) = open(dir, None).unwrap();
    let arena = Arc::new(arena);
    let state = AppState { arena: arena.clone(), mode: cfg.mode, rank_key: cfg.rank_key };
    (router(state), arena)
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    raw(app, req).await
}

pub async fn raw(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

pub fn fund_body(name: &str) -> Value {
    serde_json::json!({
        "name": name,
        "model_spec": "mock-1",
        "stock_pool": POOL,
        "initial_cash": "100000",
    })
}

/// Poll a run until it reaches a terminal status.
pub async fn wait_run(app: &Router, run_id: &str) -> Value {
    for _ in 0..2000 {
        let (_, run) = call(app, Method::GET, &format!("/runs/{run_id}"), None).await;
        if matches!(run["status"].as_str(), Some("COMPLETED" | "FAILED")) {
            return run;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
    panic!("run {run_id} did not finish");
}
