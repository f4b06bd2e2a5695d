//! HTTP management endpoints and the participant WebSocket.
//!
//! Management:
//! - `POST /sessions` with a session config (or empty to use the default)
//! - `GET /sessions/{id}`
//! - `POST /sessions/{id}/questions` with one question or a list
//! - `POST /sessions/{id}/rounds/{index}/start`
//! - `POST /sessions/{id}/end`
//! - `GET /sessions/{id}/log` as JSONL
//!
//! Participants connect to `GET /ws` and exchange newline-delimited JSON
//! frames. The first client frame must be `hello`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thinktank_core::domain::{ForecastQuestion, ParticipantId};
use thinktank_core::session::{Frame, SessionConfig, SessionError};
use tokio::sync::mpsc;

use crate::host::{HostError, SeqFrame, SessionHandle};
use crate::hub::Hub;
use crate::logfile::to_line;

/// Frames sent by participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    Hello {
        session_id: String,
        #[serde(default)]
        participant_id: Option<ParticipantId>,
        #[serde(default)]
        display_name: Option<String>,
        #[serde(default)]
        resume_from: Option<u64>,
    },
    Chat {
        text: String,
    },
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: String,
    message: String,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError(
            status,
            ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        )
    }

    fn no_session(id: &str) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_session",
            format!("no session {id}"),
        )
    }
}

impl From<HostError> for ApiError {
    fn from(e: HostError) -> Self {
        let status = match &e {
            HostError::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            HostError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
            HostError::Session(SessionError::InvalidConfig(_)) => StatusCode::BAD_REQUEST,
            HostError::Session(SessionError::UnknownRound(_)) => StatusCode::NOT_FOUND,
            HostError::Session(_) => StatusCode::CONFLICT,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/questions", post(add_questions))
        .route("/sessions/{id}/rounds/{index}/start", post(start_round))
        .route("/sessions/{id}/end", post(end_session))
        .route("/sessions/{id}/log", get(export_log))
        .route("/ws", get(ws_upgrade))
        .with_state(hub)
}

/// Serve until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, hub: Arc<Hub>) -> std::io::Result<()> {
    axum::serve(listener, router(hub)).await
}

fn session(hub: &Hub, id: &str) -> ApiResult<SessionHandle> {
    hub.get(id).ok_or_else(|| ApiError::no_session(id))
}

fn bad_json(e: serde_json::Error) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string())
}

async fn create_session(State(hub): State<Arc<Hub>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let config: SessionConfig = if body.iter().all(u8::is_ascii_whitespace) {
        hub.default_config().cloned().ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", "no config given")
        })?
    } else {
        serde_json::from_slice(&body).map_err(bad_json)?
    };
    let handle = hub.create(config)?;
    let status = handle.status().get().await?;
    Ok((StatusCode::CREATED, Json(status)))
}

async fn session_status(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(session(&hub, &id)?.status().get().await?))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum QuestionBody {
    One(ForecastQuestion),
    Many(Vec<ForecastQuestion>),
}

async fn add_questions(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let h = session(&hub, &id)?;
    let questions = match serde_json::from_slice(&body).map_err(bad_json)? {
        QuestionBody::One(q) => vec![q],
        QuestionBody::Many(qs) => qs,
    };
    for q in questions {
        h.add_question(q).get().await?;
    }
    Ok(Json(h.status().get().await?))
}

async fn start_round(
    State(hub): State<Arc<Hub>>,
    Path((id, index)): Path<(String, usize)>,
) -> ApiResult<impl IntoResponse> {
    let h = session(&hub, &id)?;
    h.start_round(index).get().await?;
    Ok(Json(h.status().get().await?))
}

async fn end_session(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let h = session(&hub, &id)?;
    h.end_session().get().await?;
    Ok(Json(h.status().get().await?))
}

async fn export_log(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let log = session(&hub, &id)?.log().get().await?;
    let body: String = log.iter().map(|r| to_line(r) + "\n").collect();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn ws_upgrade(State(hub): State<Arc<Hub>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| participant_socket(socket, hub))
}

fn encode(frame: &SeqFrame) -> Message {
    let mut line = serde_json::to_string(frame).expect("frames serialize");
    line.push('\n');
    Message::Text(line.into())
}

/// Out-of-band frames (hello acks and errors) carry `frame_seq` 0.
fn out_of_band(frame: Frame) -> Message {
    encode(&SeqFrame {
        frame_seq: 0,
        frame,
    })
}

fn error_frame(code: &str, message: impl Into<String>) -> Message {
    out_of_band(Frame::Error {
        code: code.into(),
        message: message.into(),
    })
}

fn parse_client(text: &str) -> Vec<Result<ClientFrame, serde_json::Error>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

async fn greet(
    socket: &mut WebSocket,
    hub: &Hub,
) -> Option<(
    SessionHandle,
    ParticipantId,
    mpsc::UnboundedReceiver<SeqFrame>,
)> {
    while let Some(Ok(msg)) = socket.recv().await {
        let Message::Text(text) = msg else {
            if matches!(msg, Message::Close(_)) {
                return None;
            }
            continue;
        };
        for parsed in parse_client(&text) {
            let reply = match parsed {
                Ok(ClientFrame::Hello {
                    session_id,
                    participant_id,
                    display_name,
                    resume_from,
                }) => {
                    let Some(h) = hub.get(&session_id) else {
                        let _ = socket
                            .send(error_frame(
                                "unknown_session",
                                format!("no session {session_id}"),
                            ))
                            .await;
                        continue;
                    };
                    let joined = h.join(participant_id.clone(), display_name).get().await;
                    let (id, resume) = match (joined, participant_id) {
                        (Ok((id, _)), _) => (id, None),
                        (Err(HostError::Session(SessionError::AlreadyJoined(_))), Some(id)) => {
                            (id, resume_from)
                        }
                        (Err(e), _) => {
                            let _ = socket.send(error_frame(e.code(), e.to_string())).await;
                            continue;
                        }
                    };
                    let (tx, rx) = mpsc::unbounded_channel();
                    if let Err(e) = h.attach(id.clone(), resume, tx).get().await {
                        let _ = socket.send(error_frame(e.code(), e.to_string())).await;
                        continue;
                    }
                    let ack = out_of_band(Frame::Hello {
                        session_id: session_id.clone(),
                    });
                    if socket.send(ack).await.is_err() {
                        return None;
                    }
                    return Some((h, id, rx));
                }
                Ok(ClientFrame::Chat { .. }) => error_frame("hello_required", "send hello first"),
                Err(e) => error_frame("bad_frame", e.to_string()),
            };
            if socket.send(reply).await.is_err() {
                return None;
            }
        }
    }
    None
}

async fn participant_socket(mut socket: WebSocket, hub: Arc<Hub>) {
    let Some((handle, me, mut frames)) = greet(&mut socket, &hub).await else {
        return;
    };
    loop {
        tokio::select! {
            out = frames.recv() => {
                let Some(frame) = out else { break };
                if socket.send(encode(&frame)).await.is_err() {
                    break;
                }
            }
            incoming = socket.recv() => {
                let Some(Ok(msg)) = incoming else { break };
                let text = match msg {
                    Message::Text(t) => t,
                    Message::Close(_) => break,
                    _ => continue,
                };
                for parsed in parse_client(&text) {
                    let failure = match parsed {
                        Ok(ClientFrame::Chat { text }) => handle
                            .chat(me.clone(), text)
                            .get()
                            .await
                            .err()
                            .map(|e| error_frame(e.code(), e.to_string())),
                        Ok(ClientFrame::Hello { .. }) => {
                            Some(error_frame("already_greeted", "hello was already sent"))
                        }
                        Err(e) => Some(error_frame("bad_frame", e.to_string())),
                    };
                    if let Some(f) = failure {
                        if socket.send(f).await.is_err() {
                            return;
                        }
                    }
                }
            }
        }
    }
}
