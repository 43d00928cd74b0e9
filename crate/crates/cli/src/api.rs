//! HTTP+JSON service over an [`Arena`].

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::Arc;

use arena_core::arena::{Arena, ArenaRun, CycleRecord, FundRequest, FundSummary, RunCommand};
use arena_core::events::{EventFilter, EventPage, EventType};
use arena_core::gateway::GatewayMode;
use arena_core::market::Ticker;
use arena_core::portfolio::{FundConfig, FundId, PendingOrder, Position};
use arena_core::{LeaderboardRow, MetricsReport};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Clone)]
pub struct AppState {
    pub arena: Arc<Arena>,
    pub mode: GatewayMode,
    pub rank_key: String,
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body whose rejections become `VALIDATION_FAILED`.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(json_rejection(e)),
        }
    }
}

fn json_rejection(e: JsonRejection) -> ApiError {
    ApiError::validation(e.body_text())
}

/// Query string whose rejections become `VALIDATION_FAILED`.
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        match axum::extract::Query::<T>::from_request_parts(parts, state).await {
            Ok(q) => Ok(Params(q.0)),
            Err(e) => Err(query_rejection(e)),
        }
    }
}

fn query_rejection(e: QueryRejection) -> ApiError {
    ApiError::validation(e.body_text())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/funds", post(create_fund).get(list_funds))
        .route("/funds/{id}", get(get_fund))
        .route("/funds/{id}/replay", post(start_replay))
        .route("/funds/{id}/cycles", post(start_cycle).get(list_cycles))
        .route("/funds/{id}/live", post(start_live))
        .route("/funds/{id}/nav", get(get_nav))
        .route("/funds/{id}/metrics", get(get_metrics))
        .route("/funds/{id}/events", get(get_events))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/control", post(control_run))
        .route("/leaderboard", get(leaderboard))
        .fallback(|| async { ApiError::new("NOT_FOUND", "no such endpoint") })
        .method_not_allowed_fallback(|| async { ApiError::new("METHOD_NOT_ALLOWED", "method not allowed") })
        .with_state(state)
}

fn fund_id(raw: &str) -> ApiResult<FundId> {
    let id = FundId::new(raw);
    if !id.is_valid() {
        return Err(ApiError::new("UNKNOWN_FUND", format!("unknown fund {raw:?}")));
    }
    Ok(id)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub mode: GatewayMode,
    pub funds: usize,
}

async fn health(State(s): State<AppState>) -> ApiResult<Json<Health>> {
    Ok(Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        mode: s.mode,
        funds: s.arena.fund_ids()?.len(),
    }))
}

async fn create_fund(
    State(s): State<AppState>,
    Body(req): Body<FundRequest>,
) -> ApiResult<(StatusCode, Json<FundSummary>)> {
    let state = s.arena.create_fund(&req)?;
    Ok((StatusCode::CREATED, Json(s.arena.summary(&state))))
}

async fn list_funds(State(s): State<AppState>) -> ApiResult<Json<Vec<FundSummary>>> {
    let mut out = Vec::new();
    for id in s.arena.fund_ids()? {
        out.push(s.arena.summary(&s.arena.fund(&id)?));
    }
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FundDetail {
    #[serde(flatten)]
    pub summary: FundSummary,
    pub positions: Vec<Position>,
    pub pending_orders: Vec<PendingOrder>,
    pub config: FundConfig,
    pub initial_cash: Decimal,
    pub failed_cycles: Vec<FailedCycle>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FailedCycle {
    pub trading_date: NaiveDate,
    pub cause: String,
}

async fn get_fund(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<FundDetail>> {
    let state = s.arena.fund(&fund_id(&id)?)?;
    let initial = s.arena.events().read_all(&state.fund.fund_id).map_err(arena_core::arena::ArenaError::from)?;
    let initial_cash = match initial.first().map(|e| &e.body) {
        Some(arena_core::events::EventBody::FundCreated { fund, .. }) => fund.cash,
        _ => state.fund.cash,
    };
    Ok(Json(FundDetail {
        summary: s.arena.summary(&state),
        positions: state.fund.positions.values().cloned().collect(),
        pending_orders: state.fund.pending_orders.clone(),
        config: state.fund.config.clone(),
        initial_cash,
        failed_cycles: state
            .failed_cycles
            .iter()
            .map(|(d, c)| FailedCycle { trading_date: *d, cause: c.clone() })
            .collect(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReplayBody {
    pub from: NaiveDate,
    pub to: NaiveDate,
    #[serde(default)]
    pub allow_contaminated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub run_id: String,
    pub status: String,
}

fn accepted(run: &ArenaRun) -> (StatusCode, Json<Accepted>) {
    (StatusCode::ACCEPTED, Json(Accepted { run_id: run.run_id.clone(), status: run.status.to_string() }))
}

async fn start_replay(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<ReplayBody>,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let run = s.arena.prepare_replay(&fund_id(&id)?, body.from, body.to, body.allow_contaminated)?;
    let arena = s.arena.clone();
    let run_id = run.run_id.clone();
    tokio::spawn(async move {
        if let Err(e) = arena.execute_replay(&run_id).await {
            tracing::error!(run = %run_id, error = %e, "replay failed");
        }
    });
    Ok(accepted(&run))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CycleBody {
    pub date: NaiveDate,
}

async fn start_cycle(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<CycleBody>,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let run = s.arena.prepare_cycle(&fund_id(&id)?, body.date)?;
    let arena = s.arena.clone();
    let run_id = run.run_id.clone();
    tokio::spawn(async move {
        if let Err(e) = arena.execute_cycle(&run_id).await {
            tracing::error!(run = %run_id, error = %e, "cycle run failed");
        }
    });
    Ok(accepted(&run))
}

async fn start_live(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let run = s.arena.start_live(&fund_id(&id)?)?;
    tokio::spawn(s.arena.clone().drive_live(run.run_id.clone()));
    Ok(accepted(&run))
}

async fn list_cycles(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<CycleRecord>>> {
    Ok(Json(s.arena.cycle_records(&fund_id(&id)?)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NavPoint {
    pub date: NaiveDate,
    pub nav: Decimal,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NavBody {
    pub fund_id: FundId,
    pub points: Vec<NavPoint>,
}

async fn get_nav(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<NavBody>> {
    let state = s.arena.fund(&fund_id(&id)?)?;
    let points = state.nav.points().iter().map(|(d, v)| NavPoint { date: *d, nav: *v }).collect();
    Ok(Json(NavBody { fund_id: state.fund.fund_id, points }))
}

async fn get_metrics(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<MetricsReport>> {
    Ok(Json(s.arena.metrics(&fund_id(&id)?)?))
}

#[derive(Debug, Default, Deserialize)]
pub struct EventQuery {
    pub types: Option<String>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub ticker: Option<String>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

impl EventQuery {
    pub fn filter(&self) -> ApiResult<EventFilter> {
        let types = match self.types.as_deref().map(str::trim).filter(|t| !t.is_empty()) {
            None => None,
            Some(csv) => Some(
                csv.split(',')
                    .map(|t| EventType::from_str(t.trim()).map_err(|_| ApiError::validation(format!("unknown event type {t:?}"))))
                    .collect::<ApiResult<BTreeSet<_>>>()?,
            ),
        };
        let ticker = match &self.ticker {
            None => None,
            Some(t) => Some(Ticker::new(t).map_err(|e| ApiError::validation(e.to_string()))?),
        };
        Ok(EventFilter { types, from: self.from, to: self.to, ticker, limit: self.limit, offset: self.offset.unwrap_or(0) })
    }
}

async fn get_events(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Params(q): Params<EventQuery>,
) -> ApiResult<Json<EventPage>> {
    Ok(Json(s.arena.query_events(&fund_id(&id)?, &q.filter()?)?))
}

async fn list_runs(State(s): State<AppState>) -> Json<Vec<ArenaRun>> {
    Json(s.arena.runs().list())
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ArenaRun>> {
    Ok(Json(s.arena.runs().get(&id)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ControlBody {
    pub command: String,
}

async fn control_run(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<ControlBody>,
) -> ApiResult<Json<ArenaRun>> {
    let cmd = RunCommand::from_str(&body.command)?;
    Ok(Json(s.arena.control(&id, cmd)?))
}

#[derive(Debug, Deserialize)]
pub struct RankQuery {
    pub rank_key: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Leaderboard {
    pub rank_key: String,
    pub rows: Vec<LeaderboardEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    #[serde(flatten)]
    pub row: LeaderboardRow,
    pub name: String,
    pub model_spec_id: String,
}

pub fn build_leaderboard(arena: &Arena, rank_key: &str) -> ApiResult<Leaderboard> {
    let rows = arena.leaderboard(rank_key)?;
    let mut names = BTreeMap::new();
    for r in &rows {
        let f = arena.fund(&FundId::new(&r.fund_id))?.fund;
        names.insert(r.fund_id.clone(), (f.name, f.model_spec_id));
    }
    let rows = rows
        .into_iter()
        .map(|row| {
            let (name, model_spec_id) = names.remove(&row.fund_id).unwrap_or_default();
            LeaderboardEntry { row, name, model_spec_id }
        })
        .collect();
    Ok(Leaderboard { rank_key: rank_key.to_string(), rows })
}

async fn leaderboard(State(s): State<AppState>, Params(q): Params<RankQuery>) -> ApiResult<Json<Leaderboard>> {
    let key = q.rank_key.unwrap_or_else(|| s.rank_key.clone());
    Ok(Json(build_leaderboard(&s.arena, &key)?))
}
