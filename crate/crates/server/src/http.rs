//! JSON-over-HTTP front end.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use simsearch::planner::{UdfCache, UdfRegistry};
use simsearch::projection::{pca_project, Projection};
use simsearch::vset::{load_store, load_store_dir, STORE_VSET};
use simsearch::{Snapshots, VectorStore};

use crate::engine::{bad, execute, ApiError, HitOut, SearchContext, SearchRequest, SearchResponse};
use crate::session::{
    FeedbackOutcome, FeedbackParams, FeedbackRequest, LabelIn, ReplayReport, Session,
    SessionConfig, SessionMode, SessionView, Strategy,
};
use simsearch::{Embedding, Metric};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

/// One registered dataset: its snapshots and the UDF results cached for them.
pub struct Dataset {
    pub snapshots: Snapshots<VectorStore>,
    pub udf_cache: UdfCache,
}

impl Dataset {
    pub fn new(store: VectorStore) -> Self {
        let udf_cache = UdfCache::new(store.version());
        Self {
            snapshots: Snapshots::new(store),
            udf_cache,
        }
    }
}

#[derive(Default)]
pub struct AppState {
    /// Relative dataset paths resolve against this directory.
    pub root: Option<PathBuf>,
    pub registry: UdfRegistry,
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(root: Option<PathBuf>) -> Self {
        Self {
            root,
            ..Self::default()
        }
    }

    /// Registers (or replaces) a dataset. Replacing resets its UDF cache.
    pub fn insert_dataset(&self, name: &str, store: VectorStore) {
        self.datasets
            .write()
            .expect("dataset lock")
            .insert(name.to_string(), Arc::new(Dataset::new(store)));
    }

    pub fn dataset(&self, name: &str) -> Result<Arc<Dataset>, ApiError> {
        self.datasets
            .read()
            .expect("dataset lock")
            .get(name)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown dataset {name:?}")))
    }

    /// Loads every subdirectory of `root` holding a store, named after the directory.
    pub fn load_root(&self) -> std::io::Result<Vec<String>> {
        let Some(root) = &self.root else {
            return Ok(Vec::new());
        };
        let mut loaded = Vec::new();
        for entry in std::fs::read_dir(root)? {
            let path = entry?.path();
            if !path.join(STORE_VSET).is_file() {
                continue;
            }
            let Some(name) = path
                .file_name()
                .and_then(|n| n.to_str())
                .map(str::to_string)
            else {
                continue;
            };
            match load_store_dir(&path) {
                Ok(store) => {
                    self.insert_dataset(&name, store);
                    loaded.push(name);
                }
                Err(e) => eprintln!("skipping {}: {e}", path.display()),
            }
        }
        loaded.sort();
        Ok(loaded)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        match &self.root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets).post(register_dataset))
        .route("/datasets/{name}/projection", get(projection))
        .route("/search", post(search))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(session_view))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/replay", post(replay))
        .route("/feedback", post(one_shot_feedback))
        .with_state(state)
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| bad(format!("worker failed: {e}")))?
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterDataset {
    pub name: String,
    pub vset_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub count: usize,
    pub dim: usize,
    pub version: u64,
}

fn info(name: &str, store: &VectorStore) -> DatasetInfo {
    DatasetInfo {
        name: name.to_string(),
        count: store.len(),
        dim: store.dim(),
        version: store.version(),
    }
}

async fn register_dataset(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RegisterDataset>, JsonRejection>,
) -> Result<Json<DatasetInfo>, ApiError> {
    let Json(req) = body?;
    if req.name.is_empty() {
        return Err(bad("dataset name must not be empty"));
    }
    blocking(move || {
        let vset = state.resolve(&req.vset_path);
        let meta = req.meta_path.as_deref().map(|m| state.resolve(m));
        let store = load_store(&vset, meta.as_deref())
            .map_err(|e| bad(format!("cannot load {}: {e}", vset.display())))?;
        let out = info(&req.name, &store);
        state.insert_dataset(&req.name, store);
        Ok(Json(out))
    })
    .await
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Json<Vec<DatasetInfo>> {
    let map = state.datasets.read().expect("dataset lock");
    Json(
        map.iter()
            .map(|(name, d)| info(name, &d.snapshots.load()))
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct ProjectionParams {
    dims: Option<usize>,
}

async fn projection(
    State(state): State<Arc<AppState>>,
    UrlPath(name): UrlPath<String>,
    Query(params): Query<ProjectionParams>,
) -> Result<Json<Projection>, ApiError> {
    let store = state.dataset(&name)?.snapshots.load();
    blocking(move || Ok(Json(pca_project(&store, params.dims.unwrap_or(2))?))).await
}

async fn search(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let Json(req) = body?;
    let name = req
        .dataset
        .clone()
        .ok_or_else(|| bad("missing field `dataset`"))?;
    let dataset = state.dataset(&name)?;
    blocking(move || {
        let store = dataset.snapshots.load();
        let ctx = SearchContext {
            store: &store,
            registry: &state.registry,
            cache: &dataset.udf_cache,
        };
        Ok(Json(execute(&ctx, &req)?))
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionOpened {
    pub session_id: u64,
    pub dataset: String,
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hits: Option<Vec<HitOut>>,
}

async fn open_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SessionConfig>, JsonRejection>,
) -> Result<Json<SessionOpened>, ApiError> {
    let Json(config) = body?;
    let pinned = state.dataset(&config.dataset)?.snapshots.load();
    blocking(move || {
        let id = state.next_session.fetch_add(1, Ordering::Relaxed) + 1;
        let dataset = config.dataset.clone();
        let session = Session::open(id, config, pinned)?;
        let out = SessionOpened {
            session_id: id,
            dataset,
            version: session.version(),
            hits: session.initial_hits(),
        };
        state
            .sessions
            .lock()
            .expect("session map lock")
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(Json(out))
    })
    .await
}

async fn session_view(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(id)?;
    let view = session.lock().expect("session lock").view();
    Ok(Json(view))
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<FeedbackOutcome>, ApiError> {
    let Json(req) = body?;
    let session = state.session(id)?;
    // the per-session lock serializes rounds of one session
    blocking(move || Ok(Json(session.lock().expect("session lock").feedback(&req)?))).await
}

async fn replay(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
) -> Result<Json<ReplayReport>, ApiError> {
    let session = state.session(id)?;
    blocking(move || Ok(Json(session.lock().expect("session lock").replay()?))).await
}

/// A single feedback round without a stored session.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneShotFeedback {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<u64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub mode: SessionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub labels: Vec<LabelIn>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub params: FeedbackParams,
}

fn default_k() -> usize {
    10
}

async fn one_shot_feedback(
    State(state): State<Arc<AppState>>,
    body: Result<Json<OneShotFeedback>, JsonRejection>,
) -> Result<Json<FeedbackOutcome>, ApiError> {
    let Json(req) = body?;
    let pinned = state.dataset(&req.dataset)?.snapshots.load();
    blocking(move || {
        let config = SessionConfig {
            dataset: req.dataset,
            query: req.query,
            query_id: req.query_id,
            k: req.k,
            mode: req.mode,
            lambda: req.lambda,
            metric: req.metric,
        };
        if config.query.is_none() && config.query_id.is_none() {
            return Err(bad("one of `query` or `query_id` is required"));
        }
        let mut session = Session::open(0, config, pinned)?;
        let round = FeedbackRequest {
            labels: req.labels,
            strategy: req.strategy,
            params: req.params,
            query: None,
        };
        Ok(Json(session.feedback(&round)?))
    })
    .await
}
