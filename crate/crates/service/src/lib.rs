//! HTTP service: the pipeline's front door and the anonymized A/B preference
//! study served to the browser tool.

pub mod votes;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use stylecraft::clips::{Clip, ComparisonBook};
use stylecraft::llm::LanguageModel;
use stylecraft::orchestrator::{
    run_command, NoObserver, PipelineConfig, PipelineData, PipelineError, PipelineOutcome, Retrieved, UserCommand,
};
use stylecraft::statseval::{Comparison, MetricName};
use stylecraft::styledb::StyleDatabase;
use tower_http::services::ServeDir;

pub use votes::{Choice, Preference, Results, TallyRow, VoteRecord, VoteStore};

/// Everything `POST /api/commands` needs. `llm` holds the connection error
/// when the backend could not be set up, which the endpoint reports as 503.
pub struct PipelineHost {
    pub db: StyleDatabase,
    /// Directory the database is persisted to after each command.
    pub db_dir: Option<PathBuf>,
    pub data: PipelineData,
    pub llm: Result<Box<dyn LanguageModel>, String>,
    pub cfg: PipelineConfig,
}

struct Shared {
    book: ComparisonBook,
    votes: Mutex<VoteStore>,
    pipeline: Option<Mutex<PipelineHost>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(book: ComparisonBook, votes: VoteStore, pipeline: Option<PipelineHost>) -> Self {
        Self(Arc::new(Shared { book, votes: Mutex::new(votes), pipeline: pipeline.map(Mutex::new) }))
    }

    /// Loads `comparisons.json` (empty when absent) and `votes.jsonl` from `data_dir`.
    pub fn from_dir(data_dir: &Path, pipeline: Option<PipelineHost>) -> Result<Self, String> {
        let book_path = data_dir.join("comparisons.json");
        let book = if book_path.exists() {
            ComparisonBook::load(&book_path).map_err(|e| e.to_string())?
        } else {
            ComparisonBook::default()
        };
        let votes = VoteStore::open(data_dir.join("votes.jsonl")).map_err(|e| e.to_string())?;
        Ok(Self::new(book, votes, pipeline))
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

/// A clip as shown to participants: no model identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicClip {
    pub clip_id: String,
    pub event_id: String,
    pub frames: Vec<stylecraft::trajdata::Frame>,
    pub lead_length: f64,
}

impl From<&Clip> for PublicClip {
    fn from(c: &Clip) -> Self {
        Self { clip_id: c.clip_id.clone(), event_id: c.event_id.clone(), frames: c.frames.clone(), lead_length: c.lead_length }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPayload {
    pub comparison_id: String,
    pub command: String,
    pub event_id: String,
    pub side_a: PublicClip,
    pub side_b: PublicClip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub command: String,
    pub chosen_record_id: String,
    pub provisional_record_id: String,
    pub fuzzy_hit: Option<Retrieved>,
    pub retrieved: Vec<Retrieved>,
    pub selected_metrics: Vec<MetricName>,
    pub alignment_summary: Vec<Comparison>,
    pub replacement: Option<String>,
    pub trainings_launched: usize,
    pub degraded: Vec<String>,
}

impl From<&PipelineOutcome> for OutcomeSummary {
    fn from(o: &PipelineOutcome) -> Self {
        Self {
            command: o.command.clone(),
            chosen_record_id: o.chosen_record_id.clone(),
            provisional_record_id: o.provisional_record_id.clone(),
            fuzzy_hit: o.fuzzy_hit.clone(),
            retrieved: o.retrieved.clone(),
            selected_metrics: o.selected_metrics.clone(),
            alignment_summary: o.alignment_summary.clone(),
            replacement: o.replacement.clone(),
            trainings_launched: o.trainings_launched,
            degraded: o.degraded.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CommandRequest {
    #[serde(default)]
    text: String,
}

fn now_s() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

async fn post_command(State(state): State<AppState>, body: Option<Json<CommandRequest>>) -> Response {
    let text = body.map(|Json(b)| b.text).unwrap_or_default();
    if text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "command text is empty");
    }
    if state.0.pipeline.is_none() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "the pipeline is not configured on this server");
    }
    let joined = tokio::task::spawn_blocking(move || {
        let host = state.0.pipeline.as_ref().expect("checked above");
        let mut host = host.lock().unwrap_or_else(|p| p.into_inner());
        let host = &mut *host;
        let llm = match &host.llm {
            Ok(l) => l,
            Err(e) => return Err(error(StatusCode::SERVICE_UNAVAILABLE, format!("language model unavailable: {e}"))),
        };
        let cmd = UserCommand::new(text, now_s());
        let outcome = run_command(&cmd, &mut host.db, &host.data, llm.as_ref(), &host.cfg, &NoObserver).map_err(|e| {
            let status = match e {
                PipelineError::Llm { .. } | PipelineError::Verdict { .. } => StatusCode::SERVICE_UNAVAILABLE,
                PipelineError::EmptyCommand => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(status, e.to_string())
        })?;
        if let Some(dir) = &host.db_dir {
            host.db.persist(dir).map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
        Ok(OutcomeSummary::from(&outcome))
    })
    .await;
    match joined {
        Ok(Ok(summary)) => Json(summary).into_response(),
        Ok(Err(resp)) => resp,
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("pipeline task failed: {e}")),
    }
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    session: Option<String>,
}

async fn next_comparison(State(state): State<AppState>, Query(q): Query<NextQuery>) -> Response {
    let Some(session) = q.session.filter(|s| !s.is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "missing session");
    };
    let book = &state.0.book;
    let spec = {
        let mut votes = state.0.votes.lock().unwrap_or_else(|p| p.into_inner());
        votes.next_for(book, &session).cloned()
    };
    let Some(spec) = spec else {
        return StatusCode::NO_CONTENT.into_response();
    };
    let (Some(a), Some(b)) = (book.clip(&spec.side_a), book.clip(&spec.side_b)) else {
        return error(StatusCode::INTERNAL_SERVER_ERROR, "comparison references a missing clip");
    };
    Json(ComparisonPayload {
        comparison_id: spec.comparison_id,
        command: spec.command,
        event_id: spec.event_id,
        side_a: a.into(),
        side_b: b.into(),
    })
    .into_response()
}

#[derive(Debug, Deserialize)]
struct VoteRequest {
    comparison_id: String,
    choice: Choice,
    #[serde(default)]
    session: Option<String>,
}

async fn post_vote(State(state): State<AppState>, Json(req): Json<VoteRequest>) -> Response {
    let mut votes = state.0.votes.lock().unwrap_or_else(|p| p.into_inner());
    match votes.vote(&state.0.book, &req.comparison_id, req.choice, req.session) {
        Ok(Ok(_)) => Json(json!({ "recorded": true })).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("could not store vote: {e}")),
        Err(votes::VoteError::Unknown) => error(StatusCode::NOT_FOUND, "unknown comparison"),
        Err(votes::VoteError::AlreadyVoted) => error(StatusCode::CONFLICT, "comparison already has a vote"),
    }
}

async fn results(State(state): State<AppState>) -> Json<Results> {
    let votes = state.0.votes.lock().unwrap_or_else(|p| p.into_inner());
    Json(votes.results(&state.0.book))
}

async fn clip(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    match state.0.book.clip(&id) {
        Some(c) => Json(PublicClip::from(c)).into_response(),
        None => error(StatusCode::NOT_FOUND, "unknown clip"),
    }
}

/// API routes, plus the UI bundle at `/` when `static_dir` is given.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/commands", post(post_command))
        .route("/api/comparisons/next", get(next_comparison))
        .route("/api/votes", post(post_vote))
        .route("/api/results", get(results))
        .route("/api/clips/{id}", get(clip))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}
