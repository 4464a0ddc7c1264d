//! HTTP + JSON routes. Every body carries `schema_version`; errors are
//! `{schema_version, code, message}` with 404 for unknown ids, 422 for
//! invalid input or configuration, and 503 when the profiler backend is
//! degraded (the reply itself is still included).

use std::collections::VecDeque;
use std::convert::Infallible;
use std::future::Future;
use std::sync::Arc;

use advisor_core::risk::FeedbackEvent;
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::error::ServiceError;
use crate::jobs::{JobHandle, JobRequest, JobStreamEvent};
use crate::recommend::Engine;
use crate::service::AdvisoryService;
use crate::SCHEMA_VERSION;

type AppState = Arc<AdvisoryService>;

/// Adds `schema_version` to a serializable body.
fn versioned<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let mut value = serde_json::to_value(body).unwrap_or(Value::Null);
    match &mut value {
        Value::Object(map) => {
            map.insert("schema_version".into(), json!(SCHEMA_VERSION));
        }
        other => {
            value = json!({ "schema_version": SCHEMA_VERSION, "data": other.take() });
        }
    }
    (status, Json(value)).into_response()
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        versioned(status, &json!({ "code": self.code(), "message": self.to_string() }))
    }
}

type HttpResult = Result<Response, ServiceError>;

/// Bodies are parsed by hand so malformed JSON is a 422 like any other
/// invalid input. An empty body parses as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    let bytes: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(bytes).map_err(|e| ServiceError::Invalid(format!("malformed JSON body: {e}")))
}

pub fn router(service: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/recommendation", get(get_recommendation))
        .route("/jobs", post(post_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/events", get(job_events))
        .fallback(|| async {
            versioned(StatusCode::NOT_FOUND, &json!({ "code": "not_found", "message": "no such route" }))
        })
        .with_state(service)
}

/// Serves until `shutdown` resolves, then stops the service cleanly.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    service
        .shutdown(std::time::Duration::from_secs(10))
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
struct CreateSession {
    #[serde(default)]
    utterances: Vec<String>,
}

async fn create_session(State(svc): State<AppState>, body: Bytes) -> HttpResult {
    let req: CreateSession = parse_body(&body)?;
    let record = svc.create_session(&req.utterances).await?;
    Ok(versioned(StatusCode::CREATED, &record))
}

async fn get_session(State(svc): State<AppState>, Path(id): Path<String>) -> HttpResult {
    Ok(versioned(StatusCode::OK, &svc.get_session(&id).await?))
}

#[derive(Debug, Deserialize)]
struct Message {
    text: String,
}

async fn post_message(State(svc): State<AppState>, Path(id): Path<String>, body: Bytes) -> HttpResult {
    let msg: Message = parse_body(&body)?;
    let reply = svc.handle_message(&id, &msg.text).await?;
    if reply.degraded {
        let err = ServiceError::Backend("profiler backend failed; the reply used the lexicon fallback".into());
        let mut value = serde_json::to_value(&reply).unwrap_or(Value::Null);
        if let Value::Object(map) = &mut value {
            map.insert("code".into(), json!(err.code()));
            map.insert("message".into(), json!(err.to_string()));
        }
        return Ok(versioned(StatusCode::SERVICE_UNAVAILABLE, &value));
    }
    Ok(versioned(StatusCode::OK, &reply))
}

async fn post_feedback(State(svc): State<AppState>, Path(id): Path<String>, body: Bytes) -> HttpResult {
    let event: FeedbackEvent = parse_body(&body)?;
    Ok(versioned(StatusCode::OK, &svc.record_feedback(&id, event).await?))
}

#[derive(Debug, Deserialize)]
struct RecommendationQuery {
    engine: Option<String>,
    risk_appetite: Option<f64>,
}

async fn get_recommendation(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<RecommendationQuery>, QueryRejection>,
) -> HttpResult {
    let Query(q) = query.map_err(|e| ServiceError::Invalid(e.body_text()))?;
    let engine = q.engine.as_deref().map(Engine::parse).transpose()?;
    let rec = svc.recommend(&id, engine, q.risk_appetite).await?;
    let mut value = serde_json::to_value(&rec).unwrap_or(Value::Null);
    if let Value::Object(map) = &mut value {
        map.insert("preview".into(), json!(q.risk_appetite.is_some()));
    }
    Ok(versioned(StatusCode::OK, &value))
}

async fn post_job(State(svc): State<AppState>, body: Bytes) -> HttpResult {
    let req: JobRequest = parse_body(&body)?;
    Ok(versioned(StatusCode::ACCEPTED, &svc.submit_job(req).await?))
}

async fn get_job(State(svc): State<AppState>, Path(id): Path<String>) -> HttpResult {
    Ok(versioned(StatusCode::OK, &svc.job(&id)?.snapshot()))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<usize>,
}

/// SSE stream of a job's events. Each event's id is its index; a client
/// resumes with `Last-Event-ID` (or `?from=`). The stream ends after the
/// terminal `done`/`failed` event.
async fn job_events(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    query: Result<Query<EventsQuery>, QueryRejection>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let Query(q) = query.map_err(|e| ServiceError::Invalid(e.body_text()))?;
    let handle = svc.job(&id)?;
    let last_seen = headers
        .get("last-event-id")
        .map(|v| {
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| ServiceError::Invalid("Last-Event-ID must be an event index".into()))
        })
        .transpose()?;
    let from = last_seen.map(|i| i + 1).or(q.from).unwrap_or(0);
    Ok(Sse::new(event_stream(handle, from)).keep_alive(KeepAlive::default()))
}

struct Cursor {
    handle: Arc<JobHandle>,
    rx: watch::Receiver<usize>,
    next: usize,
    pending: VecDeque<JobStreamEvent>,
    finished: bool,
}

fn event_stream(handle: Arc<JobHandle>, from: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let cursor = Cursor {
        rx: handle.subscribe(),
        handle,
        next: from,
        pending: VecDeque::new(),
        finished: false,
    };
    futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(ev) = c.pending.pop_front() {
                c.next = ev.index + 1;
                let event = Event::default()
                    .id(ev.index.to_string())
                    .event(ev.event.clone())
                    .data(ev.data.to_string());
                return Some((Ok(event), c));
            }
            if c.finished {
                return None;
            }
            // Mark the current version seen before reading, so a push that
            // lands after the read still wakes `changed()` below.
            c.rx.borrow_and_update();
            let (events, terminal) = c.handle.events_from(c.next);
            if !events.is_empty() {
                c.pending.extend(events);
                continue;
            }
            if terminal || c.rx.changed().await.is_err() {
                c.finished = true;
            }
        }
    })
}
