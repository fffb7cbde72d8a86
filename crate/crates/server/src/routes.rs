//! Route table and payloads.
//!
//! | method | path                                  | body                              | reply                  |
//! |--------|---------------------------------------|-----------------------------------|------------------------|
//! | GET    | `/v1/health`                          |                                   | `{"status":"ok"}`      |
//! | POST   | `/v1/sessions`                        | [`CreateSession`]                 | 201 `SessionView`      |
//! | GET    | `/v1/sessions/{id}`                   |                                   | `SessionView`          |
//! | POST   | `/v1/sessions/{id}/instruction`       | [`Instruction`]                   | `InstructionAck`       |
//! | POST   | `/v1/sessions/{id}/feedback`          | [`Feedback`]                      | `FeedbackAck`          |
//! | POST   | `/v1/sessions/{id}/start`             |                                   | `SessionView`          |
//! | POST   | `/v1/sessions/{id}/pause`             |                                   | `SessionView`          |
//! | POST   | `/v1/sessions/{id}/end`               |                                   | `SessionView`          |
//! | GET    | `/v1/sessions/{id}/telemetry`         |                                   | SSE stream             |
//! | GET    | `/v1/users/{uid}/memory?query=&k=`    |                                   | `MemoryQueryResult`    |
//! | GET    | `/v1/stats/takeover?by=level\|system\|scenario` |                         | `TakeoverStats`        |
//!
//! The telemetry stream sends `event: frame` messages (a `TelemetryFrame`,
//! one every fourth control step by default) and one `event: terminal`
//! message per finished trip carrying its metric report. The SSE `id` is
//! the per-session message sequence number. A subscriber that falls more
//! than the buffer behind gets `event: lagged` with the number of skipped
//! messages. The stream closes when the session ends.

use std::convert::Infallible;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use copilot_sim::session::{
    FeedbackAck, InstructionAck, MemoryQueryResult, SessionStatus, SessionView, TakeoverGrouping, TakeoverStats,
    TelemetryMessage,
};
use futures::Stream;
use serde::Deserialize;
use tokio_stream::wrappers::errors::BroadcastStreamRecvError;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::StreamExt;
use tower_http::cors::CorsLayer;

use crate::driver::ensure_driving;
use crate::{ApiError, AppState};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub user_id: String,
    /// `acceleration`, `lane-change` or `left-turn`.
    pub scenario: String,
    /// `sunny`, `rain`, `fog`, `snow` or `night`; defaults to `sunny`.
    #[serde(default = "sunny")]
    pub weather: String,
}

fn sunny() -> String {
    "sunny".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instruction {
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub text: String,
    /// Whether the driver took over during the trip.
    #[serde(default)]
    pub takeover: bool,
    /// Close the session instead of continuing.
    #[serde(default)]
    pub end: bool,
}

#[derive(Debug, Deserialize)]
pub struct MemoryParams {
    pub query: Option<String>,
    pub k: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct StatsParams {
    pub by: Option<String>,
}

const DEFAULT_K: usize = 5;
const MAX_K: usize = 100;

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/instruction", post(instruction))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/end", post(end))
        .route("/sessions/{id}/telemetry", get(telemetry))
        .route("/users/{uid}/memory", get(memory))
        .route("/stats/takeover", get(takeover_stats));
    Router::new()
        .nest("/v1", v1)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(t)| t).map_err(|e| ApiError::validation("body", e.body_text()))
}

/// Runs a blocking manager call off the async runtime.
async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&copilot_sim::session::SessionManager) -> Result<T, copilot_sim::session::SessionError> + Send + 'static,
) -> Result<T, ApiError> {
    let m = state.manager().clone();
    tokio::task::spawn_blocking(move || f(&m))
        .await
        .map_err(|e| ApiError(copilot_sim::session::SessionError::Internal(e.to_string())))?
        .map_err(ApiError)
}

/// Keeps the driver and the telemetry channel in step with a new status.
fn after_transition(state: &AppState, view: &SessionView) {
    match view.status {
        SessionStatus::Running => ensure_driving(state, &view.id),
        SessionStatus::Ended => state.close_channel(&view.id),
        _ => {}
    }
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let req = body(payload)?;
    let view = blocking(&state, move |m| m.create_session(&req.user_id, &req.scenario, &req.weather)).await?;
    state.open_channel(&view.id);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.manager().view(&id)?))
}

async fn instruction(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<Instruction>, JsonRejection>,
) -> Result<Json<InstructionAck>, ApiError> {
    let req = body(payload)?;
    Ok(Json(blocking(&state, move |m| m.submit_instruction(&id, &req.text)).await?))
}

async fn feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<Feedback>, JsonRejection>,
) -> Result<Json<FeedbackAck>, ApiError> {
    let req = body(payload)?;
    let sid = id.clone();
    let ack = blocking(&state, move |m| m.submit_feedback(&sid, &req.text, req.takeover, req.end)).await?;
    if let Ok(view) = state.manager().view(&id) {
        after_transition(&state, &view);
    }
    Ok(Json(ack))
}

async fn start(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let view = state.manager().start(&id)?;
    after_transition(&state, &view);
    Ok(Json(view))
}

async fn pause(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.manager().pause(&id)?))
}

async fn end(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let view = blocking(&state, move |m| m.end(&id)).await?;
    after_transition(&state, &view);
    Ok(Json(view))
}

async fn telemetry(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let view = state.manager().view(&id)?;
    if view.status == SessionStatus::Ended {
        return Err(ApiError(copilot_sim::session::SessionError::Conflict("session has ended".into())));
    }
    let rx = state
        .subscribe(&id)
        .ok_or_else(|| ApiError(copilot_sim::session::SessionError::Conflict("session has ended".into())))?;
    let stream = BroadcastStream::new(rx).map(|item| Ok(sse_event(item)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn sse_event(item: Result<TelemetryMessage, BroadcastStreamRecvError>) -> Event {
    match item {
        Ok(msg) => {
            let (name, seq) = match &msg {
                TelemetryMessage::Frame(f) => ("frame", f.seq),
                TelemetryMessage::Terminal(t) => ("terminal", t.seq),
            };
            let data = serde_json::to_string(&msg).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"));
            Event::default().event(name).id(seq.to_string()).data(data)
        }
        Err(BroadcastStreamRecvError::Lagged(n)) => Event::default().event("lagged").data(n.to_string()),
    }
}

async fn memory(
    State(state): State<AppState>,
    Path(uid): Path<String>,
    params: Result<Query<MemoryParams>, QueryRejection>,
) -> Result<Json<MemoryQueryResult>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::validation("query", e.body_text()))?;
    let k = p.k.unwrap_or(DEFAULT_K);
    if k == 0 || k > MAX_K {
        return Err(ApiError::validation("k", format!("must be in 1..={MAX_K}, got {k}")));
    }
    Ok(Json(blocking(&state, move |m| m.memory(&uid, p.query.as_deref(), k)).await?))
}

async fn takeover_stats(
    State(state): State<AppState>,
    params: Result<Query<StatsParams>, QueryRejection>,
) -> Result<Json<TakeoverStats>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::validation("query", e.body_text()))?;
    let by = p.by.as_deref().map(str::parse::<TakeoverGrouping>).transpose()?;
    Ok(Json(state.manager().takeover_stats(by)))
}
