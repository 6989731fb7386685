//! HTTP and WebSocket API for inspecting the broker and applying wirings.
//!
//! | route | |
//! |---|---|
//! | `GET /v1/state` | devices, apps, active wirings, candidates |
//! | `GET /v1/stats` | router counters |
//! | `POST /v1/wirings/apply` | `{app_id, requirement_id, wiring}` |
//! | `WS /v1/events/stream` | change notifications, 1 Hz digests; `?sample=1` adds event samples |

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;

use crate::broker::{ApplyError, Broker, WiringBody};

pub const DEFAULT_HTTP_ADDR: &str = "127.0.0.1:4716";
pub const HTTP_ENV: &str = "HYPERWIRE_HTTP";
/// Minimum spacing of event samples on one stream.
pub const SAMPLE_INTERVAL: Duration = Duration::from_millis(100);
/// Close code sent to subscribers that fall too far behind.
pub const CLOSE_BACKLOG: u16 = 1008;

#[derive(Debug, Deserialize)]
pub struct ApplyRequest {
    pub app_id: String,
    pub requirement_id: String,
    pub wiring: WiringBody,
}

#[derive(Debug, Default, Deserialize)]
pub struct StreamQuery {
    #[serde(default)]
    pub sample: Option<u8>,
}

/// The API router; with `ui`, static files are served from that directory
/// for every other path.
pub fn router(broker: Arc<Broker>, ui: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/v1/state", get(state))
        .route("/v1/stats", get(stats))
        .route("/v1/wirings/apply", post(apply))
        .route("/v1/events/stream", get(stream))
        .with_state(broker);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn state(State(b): State<Arc<Broker>>) -> Json<Value> {
    Json(tokio::task::spawn_blocking(move || b.snapshot()).await.expect("snapshot task"))
}

async fn stats(State(b): State<Arc<Broker>>) -> Json<Value> {
    Json(b.stats())
}

async fn apply(State(b): State<Arc<Broker>>, body: Result<Json<ApplyRequest>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(r) => r,
        Err(e) => {
            let report = json!({ "code": "bad_request", "detail": e.body_text(), "path": null });
            return (StatusCode::BAD_REQUEST, Json(report)).into_response();
        }
    };
    let derivation = req.wiring.into_derivation();
    match b.apply(&req.app_id, &req.requirement_id, derivation) {
        Ok(id) => (StatusCode::OK, Json(json!({ "wiring_id": id }))).into_response(),
        Err(e @ ApplyError::NotFound(_)) => (StatusCode::NOT_FOUND, Json(e.report())).into_response(),
        Err(e @ ApplyError::Invalid(_)) => (StatusCode::UNPROCESSABLE_ENTITY, Json(e.report())).into_response(),
    }
}

async fn stream(ws: WebSocketUpgrade, State(b): State<Arc<Broker>>, Query(q): Query<StreamQuery>) -> Response {
    let sample = q.sample == Some(1);
    ws.on_upgrade(move |socket| push(socket, b, sample))
}

async fn push(mut socket: WebSocket, b: Arc<Broker>, sample: bool) {
    let mut notices = b.subscribe();
    let mut samples = sample.then(|| b.subscribe_samples());
    let mut next_sample = tokio::time::Instant::now();
    loop {
        let msg = tokio::select! {
            n = notices.recv() => match n {
                Ok(text) => text,
                Err(RecvError::Lagged(_)) => {
                    let frame = CloseFrame { code: CLOSE_BACKLOG, reason: "backlog".into() };
                    let _ = socket.send(WsMessage::Close(Some(frame))).await;
                    return;
                }
                Err(RecvError::Closed) => return,
            },
            s = async { samples.as_mut().expect("guarded").recv().await }, if samples.is_some() => match s {
                Ok(text) => {
                    let now = tokio::time::Instant::now();
                    if now < next_sample {
                        continue;
                    }
                    next_sample = now + SAMPLE_INTERVAL;
                    text
                }
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => continue,
            },
        };
        if socket.send(WsMessage::Text(msg.to_string())).await.is_err() {
            return;
        }
    }
}
