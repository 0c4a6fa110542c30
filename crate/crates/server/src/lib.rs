//! HTTP API for journey sessions.
//!
//! Sessions are created from fixture references, stream their journal over
//! server-sent events, and accept answers, questions, hint requests and (in
//! external mode) positions.

mod sessions;

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;

use scenic_core::geo::GeoPoint;
use scenic_core::journal::{LogEntry, SessionMode};
use scenic_core::orchestrator::{OrchestratorError, SessionEvent};
use scenic_core::providers::Providers;
use scenic_core::runtime::RuntimeError;

pub use sessions::{CreateSession, PlanItem, Registry, ServerConfig, SessionDescriptor, SessionHandle};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn from_runtime(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Rejected(OrchestratorError::Invalid(m)) => ApiError::Validation(m),
            RuntimeError::Rejected(other) => ApiError::Conflict(other.to_string()),
            RuntimeError::Journal(j) => ApiError::Internal(j.to_string()),
        }
    }

    fn parts(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.parts();
        (status, Json(json!({ "error": code, "message": self.to_string() }))).into_response()
    }
}

pub type AppState = Arc<Registry>;

pub fn app_state(config: ServerConfig, providers: Providers) -> AppState {
    Arc::new(Registry::new(config, providers))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/question", post(question))
        .route("/sessions/{id}/hint", post(hint))
        .route("/sessions/{id}/position", post(position))
        .route("/sessions/{id}/reflection", get(reflection))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

/// Body extractor that reports malformed JSON as 422 in the common envelope.
struct Body<T>(T);

impl<S, T> axum::extract::FromRequest<S> for Body<T>
where
    T: serde::de::DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::Validation(e.body_text())),
        }
    }
}

async fn create_session(
    State(reg): State<AppState>,
    Body(req): Body<CreateSession>,
) -> Result<(StatusCode, Json<SessionDescriptor>), ApiError> {
    let (desc, created) = reg.create(req)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(desc)))
}

async fn get_session(
    State(reg): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionDescriptor>, ApiError> {
    Ok(Json(reg.get(&id)?.descriptor()))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    last_seq: Option<u64>,
}

fn stream_item(e: &LogEntry) -> Event {
    let data = json!({ "seq": e.seq, "kind": e.kind, "ts": e.ts, "payload": e.payload });
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind.clone())
        .data(data.to_string())
}

async fn events(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = reg.get(&id)?;
    let header_seq = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|s| s.trim().parse::<u64>().ok());
    let start = match q.last_seq.or(header_seq) {
        Some(s) => s as usize + 1,
        None => 0,
    };
    let rx = handle.subscribe();
    let stream = futures::stream::unfold(
        (handle, rx, start, VecDeque::<LogEntry>::new()),
        |(handle, mut rx, mut next, mut buf)| async move {
            loop {
                if let Some(e) = buf.pop_front() {
                    let ev = stream_item(&e);
                    return Some((Ok(ev), (handle, rx, next, buf)));
                }
                rx.borrow_and_update();
                let fresh = handle.log().since(next);
                if !fresh.is_empty() {
                    next += fresh.len();
                    buf.extend(fresh);
                    continue;
                }
                if handle.finished() {
                    if handle.log().len() > next {
                        continue;
                    }
                    return None;
                }
                if rx.changed().await.is_err() && handle.log().len() <= next {
                    return None;
                }
            }
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerBody {
    #[serde(default)]
    prompt_id: Option<String>,
    transcript: String,
}

fn entries_json(entries: Vec<LogEntry>) -> Json<Value> {
    Json(json!({ "entries": entries }))
}

async fn answer(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<AnswerBody>,
) -> Result<Json<Value>, ApiError> {
    let handle = reg.get(&id)?;
    let out = handle.submit(|rt| {
        let current = rt.machine().current_prompt().map(|p| p.id.clone());
        let prompt_id = match (body.prompt_id, current) {
            (Some(p), Some(c)) if p != c => {
                return Err(ApiError::Conflict(format!("prompt {p} is not the open prompt {c}")))
            }
            (_, Some(c)) => c,
            (_, None) => return Err(ApiError::Conflict("no prompt is open".into())),
        };
        Ok(SessionEvent::AnswerReceived {
            prompt_id,
            transcript: body.transcript,
        })
    })?;
    Ok(entries_json(out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionBody {
    transcript: String,
}

async fn question(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<QuestionBody>,
) -> Result<Json<Value>, ApiError> {
    if body.transcript.trim().is_empty() {
        return Err(ApiError::Validation("transcript is empty".into()));
    }
    let handle = reg.get(&id)?;
    let out = handle.submit(|_| {
        Ok(SessionEvent::ChildQuestion {
            transcript: body.transcript,
        })
    })?;
    Ok(entries_json(out))
}

async fn hint(State(reg): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = reg.get(&id)?;
    let out = handle.submit(|_| Ok(SessionEvent::HintRequested))?;
    Ok(entries_json(out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PositionBody {
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    #[serde(default)]
    end_of_stream: bool,
}

async fn position(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<PositionBody>,
) -> Result<Json<Value>, ApiError> {
    let handle = reg.get(&id)?;
    if handle.header.mode != SessionMode::ExternalPositions {
        return Err(ApiError::Conflict("positions are simulated for this session".into()));
    }
    let event = if body.end_of_stream {
        SessionEvent::PositionStreamEnded
    } else {
        let (Some(lat), Some(lon)) = (body.lat, body.lon) else {
            return Err(ApiError::Validation("lat and lon are required".into()));
        };
        let point = GeoPoint::new(lat, lon).map_err(|e| ApiError::Validation(e.to_string()))?;
        SessionEvent::PositionUpdated {
            position: handle.header.route.project(&point),
        }
    };
    let out = handle.submit(|_| Ok(event))?;
    Ok(entries_json(out))
}

async fn reflection(State(reg): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = reg.get(&id)?;
    Ok(Json(handle.reflection()?).into_response())
}
