//! HTTP API over exploration sessions.
//!
//! Sessions live in memory; every evaluated window is also persisted to
//! `<output>/<session id>/`. Codes travel as decimal strings.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use vvv_core::codec::{parse_code, CodeScheme, Natural, PhaseShares, Settings};
use vvv_core::explorer::{
    init_session, CandidateStatus, CandidateSummary, ExplorerError, HistoryEntry, Session, Step,
    Termination,
};
use vvv_core::io::config::ConfigDocument;
use vvv_core::io::image::encode_png;
use vvv_core::io::{ConfigError, RunConfig};
use vvv_core::pipeline::{registry, StageDescriptor};

/// Error body: `{"error": "...", "details": [...]}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    details: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            details: Vec::new(),
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)?;
        for d in &self.details {
            write!(f, "\n  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ApiError {}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    details: &'a [String],
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: &self.message,
            details: &self.details,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<ExplorerError> for ApiError {
    fn from(e: ExplorerError) -> Self {
        match e {
            ExplorerError::Validation(details) => ApiError {
                status: StatusCode::BAD_REQUEST,
                message: "invalid session configuration".into(),
                details,
            },
            ExplorerError::Selection(e) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndCause {
    Stopped,
    Timeout,
}

#[derive(Debug, Clone)]
enum Published {
    Active(Session),
    Terminated {
        last: Session,
        end: Termination,
        cause: EndCause,
    },
}

impl Published {
    fn session(&self) -> &Session {
        match self {
            Published::Active(s) | Published::Terminated { last: s, .. } => s,
        }
    }
}

struct Slot {
    id: String,
    published: RwLock<Arc<Published>>,
    selecting: tokio::sync::Mutex<()>,
    touched: Mutex<Instant>,
}

impl Slot {
    fn current(&self) -> Arc<Published> {
        Arc::clone(&self.published.read().expect("lock poisoned"))
    }

    fn publish(&self, next: Published) {
        *self.published.write().expect("lock poisoned") = Arc::new(next);
    }

    fn touch(&self) {
        *self.touched.lock().expect("lock poisoned") = Instant::now();
    }

    fn idle(&self) -> Duration {
        self.touched.lock().expect("lock poisoned").elapsed()
    }
}

/// Shared server state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Slot>>>>,
    base: Arc<PathBuf>,
}

impl AppState {
    /// Relative paths in posted configs resolve against `base`.
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self {
            sessions: Arc::default(),
            base: Arc::new(base.into()),
        }
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .expect("lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }

    /// Starts a session from a validated config and evaluates window 0.
    /// Artifacts go to `<output_root>/<id>/`.
    pub async fn create_session(&self, config: RunConfig) -> Result<Snapshot, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut config = config;
        config.output_root = config.output_root.join(&id);
        let pause = config.pause_timeout;
        let session = tokio::task::spawn_blocking(move || {
            init_session(&config).and_then(|s| s.evaluate_window())
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| match e {
            ExplorerError::Io(io) => ApiError {
                status: StatusCode::BAD_REQUEST,
                message: "could not load the session inputs".into(),
                details: vec![io.to_string()],
            },
            other => other.into(),
        })?;
        let slot = Arc::new(Slot {
            id: id.clone(),
            published: RwLock::new(Arc::new(Published::Active(session))),
            selecting: tokio::sync::Mutex::new(()),
            touched: Mutex::new(Instant::now()),
        });
        self.sessions
            .write()
            .expect("lock poisoned")
            .insert(id, Arc::clone(&slot));
        if let Some(pause) = pause {
            tokio::spawn(watch_idle(Arc::clone(&slot), pause));
        }
        Ok(snapshot(&slot.id, &slot.current()))
    }
}

async fn watch_idle(slot: Arc<Slot>, pause: Duration) {
    let mut wait = pause;
    loop {
        tokio::time::sleep(wait).await;
        let _guard = slot.selecting.lock().await;
        let current = slot.current();
        let Published::Active(session) = &*current else {
            return;
        };
        let idle = slot.idle();
        if idle >= pause {
            slot.publish(Published::Terminated {
                last: session.clone(),
                end: session.terminate(),
                cause: EndCause::Timeout,
            });
            return;
        }
        wait = pause - idle;
    }
}

/// Candidate entry of a snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateView {
    #[serde(flatten)]
    pub summary: CandidateSummary,
    /// Phase name to image URL; feasible candidates only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TerminationView {
    pub cause: EndCause,
    #[serde(flatten)]
    pub termination: Termination,
}

/// Serialized session state.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub id: String,
    pub active: bool,
    pub iteration: u64,
    pub code: String,
    pub scheme: CodeScheme,
    pub shares: PhaseShares,
    pub settings: Settings,
    pub values: Vec<f64>,
    pub window: Vec<CandidateView>,
    pub history: Vec<HistoryEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<TerminationView>,
}

fn snapshot(id: &str, published: &Published) -> Snapshot {
    let session = published.session();
    let summary = session.summary();
    let window = summary
        .window
        .into_iter()
        .zip(session.window())
        .map(|(summary, candidate)| {
            let images = candidate.outputs.as_ref().map(|outputs| {
                let mut phases = vec!["veni", "vidi", "vici"];
                if outputs[0][1].rendering.is_some() {
                    phases.push("vidi_render");
                }
                phases
                    .into_iter()
                    .map(|p| {
                        let url = format!("/sessions/{id}/candidates/{}/image/{p}", summary.code);
                        (p.to_owned(), url)
                    })
                    .collect()
            });
            CandidateView { summary, images }
        })
        .collect();
    let termination = match published {
        Published::Active(_) => None,
        Published::Terminated { end, cause, .. } => Some(TerminationView {
            cause: *cause,
            termination: end.clone(),
        }),
    };
    Snapshot {
        id: id.to_owned(),
        active: termination.is_none(),
        iteration: summary.iteration,
        code: summary.code,
        scheme: summary.scheme,
        shares: summary.shares,
        settings: summary.settings,
        values: summary.values,
        window,
        history: summary.history,
        termination,
    }
}

/// `POST /sessions/{id}/selection` body. `code: null` stops the session.
/// `iteration`, when given, must match the current one.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRequest {
    pub code: Option<String>,
    #[serde(default)]
    pub iteration: Option<u64>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("malformed request body: {e}"),
        )
    })
}

async fn list_stages() -> Json<Vec<StageDescriptor>> {
    Json(registry())
}

async fn create(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let doc: ConfigDocument = parse_json(&body)?;
    let config = doc.validate(state.base()).map_err(|e| match e {
        ConfigError::Invalid(details) => ApiError {
            status: StatusCode::BAD_REQUEST,
            message: "invalid session configuration".into(),
            details,
        },
        other => ApiError::new(StatusCode::BAD_REQUEST, other.to_string()),
    })?;
    let snap = state.create_session(config).await?;
    Ok((StatusCode::CREATED, Json(snap)).into_response())
}

async fn show(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Snapshot>, ApiError> {
    let slot = state.slot(&id)?;
    Ok(Json(snapshot(&slot.id, &slot.current())))
}

#[derive(Deserialize)]
struct ImageQuery {
    #[serde(default)]
    image: usize,
}

async fn candidate_image(
    State(state): State<AppState>,
    UrlPath((id, code, phase)): UrlPath<(String, String, String)>,
    Query(query): Query<ImageQuery>,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let current = slot.current();
    let not_found = || {
        ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no candidate `{code}` in the current window"),
        )
    };
    let parsed: Natural = parse_code(&code).ok_or_else(not_found)?;
    let candidate = current.session().candidate(&parsed).ok_or_else(not_found)?;
    let outputs = match (&candidate.status, &candidate.outputs) {
        (CandidateStatus::Feasible { .. }, Some(outputs)) => outputs,
        (CandidateStatus::Infeasible { reason }, _) => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("candidate {code} is infeasible: {reason}"),
            ))
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("candidate {code} has no outputs"),
            ))
        }
    };
    let per_image = outputs.get(query.image).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no input image {}", query.image),
        )
    })?;
    let img = match phase.as_str() {
        "veni" => Some(&per_image[0].image),
        "vidi" => Some(&per_image[1].image),
        "vici" => Some(&per_image[2].image),
        "vidi_render" => per_image[1].rendering.as_ref(),
        _ => None,
    }
    .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no image `{phase}`")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], encode_png(img)).into_response())
}

async fn select(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Snapshot>, ApiError> {
    let slot = state.slot(&id)?;
    let request: SelectionRequest = parse_json(&body)?;
    let Ok(_guard) = slot.selecting.try_lock() else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "a selection for this session is already being processed",
        ));
    };
    let current = slot.current();
    let Published::Active(session) = &*current else {
        return Err(ApiError::new(StatusCode::CONFLICT, "session is terminated"));
    };
    if let Some(iteration) = request.iteration {
        if iteration != session.iteration() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!(
                    "selection targets iteration {iteration}, the session is at {}",
                    session.iteration()
                ),
            ));
        }
    }
    let code = match &request.code {
        None => None,
        Some(text) => Some(parse_code(text).ok_or_else(|| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("`{text}` is not a decimal code"),
            )
        })?),
    };
    if let Some(code) = &code {
        session.check_selection(code).map_err(ExplorerError::from)?;
    }
    let session = session.clone();
    let step = tokio::task::spawn_blocking(move || {
        session
            .apply_selection(code.as_ref())
            .map(|step| (session, step))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    slot.publish(match step {
        (_, Step::Continue(next)) => Published::Active(next),
        (last, Step::Terminated(end)) => Published::Terminated {
            last,
            end,
            cause: EndCause::Stopped,
        },
    });
    slot.touch();
    Ok(Json(snapshot(&slot.id, &slot.current())))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/stages", get(list_stages))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/selection", post(select))
        .route(
            "/sessions/{id}/candidates/{code}/image/{phase}",
            get(candidate_image),
        )
        .with_state(state)
}

/// Serves the API until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
