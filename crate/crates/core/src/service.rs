//! HTTP assist service: lets a running agent ask the verifiers about one
//! state or one transition at a time. No retrieval, no storage access.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::{DisplayFinding, InteractionFinding, InteractionQuery, JudgeBackend};
use crate::model::{Observation, TestBasis};
use crate::verifiers::Transition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum AssistRequest {
    Display {
        observation: Observation,
    },
    Interaction {
        task: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        basis: Option<TestBasis>,
        /// Earlier transitions of the current segment, oldest first.
        #[serde(default)]
        history: Vec<Transition>,
        transition: Transition,
    },
}

impl AssistRequest {
    /// Boundary checks beyond the JSON shape.
    pub fn check(&self) -> Result<(), String> {
        match self {
            AssistRequest::Display { observation } => {
                if observation.is_empty() {
                    return Err("observation needs an image or text".into());
                }
            }
            AssistRequest::Interaction {
                task,
                history,
                transition,
                ..
            } => {
                if task.trim().is_empty() {
                    return Err("task must be non-empty".into());
                }
                if transition.ordinal == 0 {
                    return Err("transition.ordinal must be >= 1".into());
                }
                let mut prev = 0;
                for t in history {
                    if t.ordinal <= prev || t.ordinal >= transition.ordinal {
                        return Err("history ordinals must increase and precede transition.ordinal".into());
                    }
                    prev = t.ordinal;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssistResponse {
    Display { finding: DisplayFinding, latency_ms: f64 },
    Interaction { finding: InteractionFinding, latency_ms: f64 },
}

#[derive(Clone)]
struct AppState {
    backend: Arc<dyn JudgeBackend>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

/// Decodes and checks a request; the error is the 400 message.
fn parse(body: &Bytes, kind: &str) -> Result<AssistRequest, String> {
    let req: AssistRequest = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let matches = matches!(
        (&req, kind),
        (AssistRequest::Display { .. }, "display") | (AssistRequest::Interaction { .. }, "interaction")
    );
    if !matches {
        return Err(format!("this endpoint expects kind={kind}"));
    }
    req.check()?;
    Ok(req)
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

async fn verify_display(State(state): State<AppState>, body: Bytes) -> Response {
    let start = Instant::now();
    let AssistRequest::Display { observation } = (match parse(&body, "display") {
        Ok(r) => r,
        Err(msg) => return error(StatusCode::BAD_REQUEST, msg),
    }) else {
        unreachable!("kind checked in parse")
    };
    match state.backend.verify_display_state(&observation).await {
        Ok(finding) => Json(AssistResponse::Display {
            finding,
            latency_ms: elapsed_ms(start),
        })
        .into_response(),
        Err(e) => error(StatusCode::BAD_GATEWAY, e.to_string()),
    }
}

async fn verify_interaction(State(state): State<AppState>, body: Bytes) -> Response {
    let start = Instant::now();
    let AssistRequest::Interaction {
        task,
        basis,
        mut history,
        transition,
    } = (match parse(&body, "interaction") {
        Ok(r) => r,
        Err(msg) => return error(StatusCode::BAD_REQUEST, msg),
    })
    else {
        unreachable!("kind checked in parse")
    };
    history.push(transition);
    let query = InteractionQuery {
        task: &task,
        basis: basis.as_ref(),
        history: &history,
        transition: history.last().expect("just pushed"),
    };
    match state.backend.verify_interaction_transition(query).await {
        Ok(finding) => Json(AssistResponse::Interaction {
            finding,
            latency_ms: elapsed_ms(start),
        })
        .into_response(),
        Err(e) => error(StatusCode::BAD_GATEWAY, e.to_string()),
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

pub fn assist_router(backend: Arc<dyn JudgeBackend>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/verify/display", post(verify_display))
        .route("/verify/interaction", post(verify_interaction))
        .with_state(AppState { backend })
}

/// Serves on an already-bound listener until the task is dropped.
pub async fn serve_on(listener: tokio::net::TcpListener, backend: Arc<dyn JudgeBackend>) -> std::io::Result<()> {
    axum::serve(listener, assist_router(backend)).await
}

pub async fn serve_assist(addr: SocketAddr, backend: Arc<dyn JudgeBackend>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "assist service listening");
    serve_on(listener, backend).await
}
