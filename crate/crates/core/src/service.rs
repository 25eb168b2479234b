//! HTTP session service: a person answers clustering queries in place of the
//! simulated expert.
//!
//! Endpoints (JSON unless noted):
//!
//! | method | path                      | body / result                               |
//! |--------|---------------------------|---------------------------------------------|
//! | GET    | /datasets                 | ingested dataset ids and sizes              |
//! | POST   | /sessions                 | [`CreateSession`] → [`Created`] (201)       |
//! | GET    | /sessions/{id}/query      | [`QueryView`]                               |
//! | POST   | /sessions/{id}/feedback   | [`FeedbackBody`] → [`FeedbackAck`] (202)    |
//! | GET    | /sessions/{id}/trace      | JSON Lines, one trace record per line       |
//! | GET    | /sessions/{id}/state      | [`StateView`]                               |
//! | DELETE | /sessions/{id}            | closes the session                          |
//!
//! Errors use [`ErrorBody`].

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster_models::{MixtureOfBernoullis, MixtureOfGaussians, MobHyper, MogHyper};
use crate::error::{Error, Result};
use crate::experiments::data::{binarize_sample, blobs, bundled_data_dir, idx_paths, load_uci, read_idx_pair, UciDataset};
use crate::interactive::{ClusterPending, ClusteringConfig, ClusteringSession, ClusteringState};
use crate::posterior::FeedbackEvent;
use crate::query_engine::{Response, SessionTrace};
use crate::structures::{Answer, Atom};

/// Uniform error envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: serde_json::Value,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> ApiError {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into(), detail: serde_json::Value::Null } }
    }

    fn with_detail(mut self, detail: serde_json::Value) -> ApiError {
        self.body.detail = detail;
        self
    }

    fn not_found(what: &str) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        let (status, code) = match e {
            Error::InvalidQuery(_) | Error::AnswerMismatch(_) | Error::AtomMismatch { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_feedback")
            }
            Error::Config(_) | Error::Domain(_) | Error::InvalidStructure(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> HttpResponse {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Mixture family of an ingested dataset.
#[derive(Clone, Debug)]
pub enum DatasetData {
    Gaussian { features: Arc<Vec<Vec<f64>>>, sigma: f64, sigma0: f64 },
    Bernoulli { bits: Arc<Vec<Vec<bool>>> },
}

#[derive(Clone, Debug)]
pub struct DatasetEntry {
    pub data: DatasetData,
    pub default_k: usize,
}

impl DatasetEntry {
    pub fn len(&self) -> usize {
        match &self.data {
            DatasetData::Gaussian { features, .. } => features.len(),
            DatasetData::Bernoulli { bits } => bits.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn features(&self, i: usize) -> Vec<f64> {
        match &self.data {
            DatasetData::Gaussian { features, .. } => features[i].clone(),
            DatasetData::Bernoulli { bits } => bits[i].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Bundled datasets: standardised iris and wine, 60 blobs (seed 0), and 150
/// binarised digits of classes 0, 1, 2 (seed 0).
pub fn builtin_datasets() -> Result<HashMap<String, DatasetEntry>> {
    let dir = bundled_data_dir();
    let mut out = HashMap::new();
    let iris = load_uci(&dir.join("iris.data"), UciDataset::Iris)?;
    out.insert(
        "iris".into(),
        DatasetEntry { data: DatasetData::Gaussian { features: Arc::new(iris.features), sigma: 1.0, sigma0: 2.0 }, default_k: 3 },
    );
    let wine = load_uci(&dir.join("wine.data"), UciDataset::Wine)?;
    out.insert(
        "wine".into(),
        DatasetEntry { data: DatasetData::Gaussian { features: Arc::new(wine.features), sigma: 2.0, sigma0: 4.0 }, default_k: 3 },
    );
    let b = blobs(60, 3, 2, 8.0, &mut ChaCha8Rng::seed_from_u64(0))?;
    out.insert(
        "blobs".into(),
        DatasetEntry { data: DatasetData::Gaussian { features: Arc::new(b.features), sigma: 1.0, sigma0: 8.0 }, default_k: 3 },
    );
    if let Some((im, lb)) = idx_paths(&dir.join("digits"), "train") {
        let (images, labels) = read_idx_pair(&im, &lb)?;
        let (bits, _) = binarize_sample(&images, &labels, &[0, 1, 2], 50, 128, &mut ChaCha8Rng::seed_from_u64(0))?;
        out.insert("digits".into(), DatasetEntry { data: DatasetData::Bernoulli { bits: Arc::new(bits) }, default_k: 3 });
    }
    Ok(out)
}

/// Mixture hyperparameters; dataset defaults fill the gaps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub sigma0: Option<f64>,
    pub beta_a: Option<f64>,
    pub gamma_a: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub dataset: String,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub config: ClusteringConfig,
}

/// Type-erased engine over the two mixture families.
pub enum Engine {
    Gaussian(ClusteringSession<MixtureOfGaussians>),
    Bernoulli(ClusteringSession<MixtureOfBernoullis>),
}

macro_rules! on_engine {
    ($e:expr, $s:ident => $body:expr) => {
        match $e {
            Engine::Gaussian($s) => $body,
            Engine::Bernoulli($s) => $body,
        }
    };
}

impl Engine {
    pub fn build(entry: &DatasetEntry, params: &ModelParams, config: ClusteringConfig) -> Result<Engine> {
        let k = params.k.unwrap_or(entry.default_k);
        if k == 0 || k > entry.len() {
            return Err(Error::Config(format!("k = {k} must lie in [1, {}]", entry.len())));
        }
        let alpha = params.alpha.unwrap_or(1.0);
        match &entry.data {
            DatasetData::Gaussian { features, sigma, sigma0 } => {
                let hyper = MogHyper::new(k, alpha, params.sigma0.unwrap_or(*sigma0), params.sigma.unwrap_or(*sigma));
                let model = MixtureOfGaussians::new(features.clone(), &hyper)?;
                Ok(Engine::Gaussian(ClusteringSession::new(model, config)?))
            }
            DatasetData::Bernoulli { bits } => {
                let hyper =
                    MobHyper { k, alpha, beta_a: params.beta_a.unwrap_or(1.0), gamma_a: params.gamma_a.unwrap_or(1.0) };
                let model = MixtureOfBernoullis::new(bits.clone(), hyper)?;
                Ok(Engine::Bernoulli(ClusteringSession::new(model, config)?))
            }
        }
    }

    pub fn prepare(&mut self) -> Result<bool> {
        on_engine!(self, s => s.prepare().map(|p| p.is_some()))
    }

    pub fn submit(&mut self, r: Response) -> Result<FeedbackEvent> {
        on_engine!(self, s => s.submit(r))
    }

    pub fn pending(&self) -> Option<&ClusterPending> {
        on_engine!(self, s => s.pending())
    }

    pub fn trace(&self) -> &SessionTrace {
        on_engine!(self, s => s.trace())
    }

    pub fn state(&self) -> Result<ClusteringState> {
        on_engine!(self, s => s.state())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Selecting,
    AwaitingFeedback,
    Converged,
    Closed,
    Failed,
}

/// Everything a client reads while the engine may be busy.
struct Slot {
    dataset: String,
    /// Taken out while the next query is being computed.
    engine: Option<Engine>,
    status: Lifecycle,
    failure: Option<String>,
    view: Option<QueryView>,
    trace: SessionTrace,
    state: Option<ClusteringState>,
}

pub struct AppState {
    datasets: HashMap<String, DatasetEntry>,
    sessions: RwLock<HashMap<u64, Arc<Mutex<Slot>>>>,
    next_id: AtomicU64,
    trace_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(datasets: HashMap<String, DatasetEntry>, trace_dir: Option<PathBuf>) -> Arc<AppState> {
        Arc::new(AppState { datasets, sessions: RwLock::new(HashMap::new()), next_id: AtomicU64::new(1), trace_dir })
    }

    fn slot(&self, id: u64) -> ApiResult<Arc<Mutex<Slot>>> {
        self.sessions.read().expect("session map lock").get(&id).cloned().ok_or_else(|| ApiError::not_found("session"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: u64,
    pub status: Lifecycle,
    pub n_items: usize,
    pub config: ClusteringConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: usize,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub atom: Atom,
    pub same: bool,
}

/// The pending query and its proposed grouping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub status: Lifecycle,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<ItemView>>,
    /// Committee member shown as the snapshot.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member: Option<usize>,
    /// The query items grouped by the snapshot's clustering.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<PairView>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl QueryView {
    fn bare(status: Lifecycle, message: Option<String>) -> QueryView {
        QueryView { status, step: None, items: None, member: None, groups: None, pairs: None, message }
    }
}

fn query_view(entry: &DatasetEntry, p: &ClusterPending) -> QueryView {
    let z = p.committee.structure(p.snapshot.member).assignment();
    let items = p.query.items();
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in items {
        match groups.iter_mut().find(|(c, _)| *c == z[i]) {
            Some(g) => g.1.push(i),
            None => groups.push((z[i], vec![i])),
        }
    }
    let pairs = p
        .snapshot
        .answers
        .iter()
        .map(|(a, y)| PairView { atom: *a, same: matches!(y, Answer::Same(true)) })
        .collect();
    QueryView {
        status: Lifecycle::AwaitingFeedback,
        step: Some(p.step),
        items: Some(items.iter().map(|&id| ItemView { id, features: entry.features(id) }).collect()),
        member: Some(p.snapshot.member),
        groups: Some(groups.into_iter().map(|g| g.1).collect()),
        pairs: Some(pairs),
        message: None,
    }
}

/// Feedback on the pending query: either `{"step": s, "accept": true}` or
/// `{"step": s, "atom": [i, j], "same": b}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBody {
    pub step: usize,
    #[serde(default)]
    pub accept: bool,
    #[serde(default)]
    pub atom: Option<Atom>,
    #[serde(default)]
    pub same: Option<bool>,
}

impl FeedbackBody {
    pub fn from_response(step: usize, r: &Response) -> FeedbackBody {
        match r {
            Response::Accept => FeedbackBody { step, accept: true, atom: None, same: None },
            Response::Answer { atom, answer } => {
                FeedbackBody { step, accept: false, atom: Some(*atom), same: Some(matches!(answer, Answer::Same(true))) }
            }
        }
    }

    fn response(&self) -> ApiResult<Response> {
        match (self.accept, self.atom, self.same) {
            (true, None, None) => Ok(Response::Accept),
            (false, Some(atom), Some(same)) => Ok(Response::Answer { atom, answer: Answer::Same(same) }),
            _ => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", "send either accept: true or both atom and same")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub event: FeedbackEvent,
    pub constraints: usize,
    pub confirmations: usize,
    pub status: Lifecycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub status: Lifecycle,
    pub dataset: String,
    pub step: usize,
    #[serde(flatten)]
    pub state: Option<ClusteringState>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(close_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/sessions/{id}/state", get(get_state))
        .with_state(state)
}

async fn list_datasets(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let mut ids: Vec<(&String, usize)> = app.datasets.iter().map(|(k, v)| (k, v.len())).collect();
    ids.sort();
    Json(serde_json::json!(ids.into_iter().map(|(k, n)| serde_json::json!({"id": k, "n_items": n})).collect::<Vec<_>>()))
}

/// Runs sweeps and selection off the request path, then parks the engine.
fn spawn_prepare(app: Arc<AppState>, id: u64, slot: Arc<Mutex<Slot>>, mut engine: Engine) {
    tokio::task::spawn_blocking(move || {
        let outcome = engine.prepare().and_then(|ready| engine.state().map(|s| (ready, s)));
        let mut g = slot.lock().expect("slot lock");
        if g.status == Lifecycle::Closed {
            return;
        }
        match outcome {
            Ok((ready, st)) => {
                let entry = &app.datasets[&g.dataset];
                g.view = engine.pending().map(|p| query_view(entry, p));
                g.status = if ready { Lifecycle::AwaitingFeedback } else { Lifecycle::Converged };
                g.state = Some(st);
            }
            Err(e) => {
                log::error!("session {id}: {e}");
                g.status = Lifecycle::Failed;
                g.failure = Some(e.to_string());
            }
        }
        g.engine = Some(engine);
    });
}

async fn create_session(State(app): State<Arc<AppState>>, Json(body): Json<CreateSession>) -> ApiResult<(StatusCode, Json<Created>)> {
    let entry = app.datasets.get(&body.dataset).ok_or_else(|| ApiError::not_found(&format!("dataset {}", body.dataset)))?;
    let engine = Engine::build(entry, &body.model, body.config)?;
    let id = app.next_id.fetch_add(1, Ordering::Relaxed);
    let slot = Arc::new(Mutex::new(Slot {
        dataset: body.dataset.clone(),
        engine: None,
        status: Lifecycle::Selecting,
        failure: None,
        view: None,
        trace: SessionTrace::new(),
        state: None,
    }));
    app.sessions.write().expect("session map lock").insert(id, slot.clone());
    spawn_prepare(app.clone(), id, slot, engine);
    let created = Created { session_id: id, status: Lifecycle::Selecting, n_items: entry.len(), config: body.config };
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_query(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<QueryView>> {
    let slot = app.slot(id)?;
    let g = slot.lock().expect("slot lock");
    Ok(Json(match g.status {
        Lifecycle::AwaitingFeedback => g.view.clone().expect("view is set with the status"),
        Lifecycle::Selecting => QueryView::bare(Lifecycle::Selecting, Some("computing".into())),
        Lifecycle::Converged => QueryView::bare(Lifecycle::Converged, Some("committee is unanimous; no informative query".into())),
        Lifecycle::Closed => QueryView::bare(Lifecycle::Closed, Some("session closed".into())),
        Lifecycle::Failed => QueryView::bare(Lifecycle::Failed, g.failure.clone()),
    }))
}

async fn post_feedback(
    State(app): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Json(body): Json<FeedbackBody>,
) -> ApiResult<(StatusCode, Json<FeedbackAck>)> {
    let slot = app.slot(id)?;
    let response = body.response()?;
    let (ack, engine) = {
        let mut g = slot.lock().expect("slot lock");
        match g.status {
            Lifecycle::AwaitingFeedback => {}
            Lifecycle::Selecting => {
                return Err(ApiError::new(StatusCode::CONFLICT, "not_ready", "the next query is still being computed"))
            }
            ref s => {
                return Err(ApiError::new(StatusCode::CONFLICT, "no_pending_query", format!("session is {s:?}")));
            }
        }
        let expected = g.view.as_ref().and_then(|v| v.step).expect("awaiting sessions have a step");
        if body.step != expected {
            return Err(ApiError::new(StatusCode::CONFLICT, "stale_step", format!("feedback for step {} but step {expected} is pending", body.step))
                .with_detail(serde_json::json!({ "expected": expected, "got": body.step })));
        }
        let mut engine = g.engine.take().expect("engine is parked while awaiting feedback");
        let event = match engine.submit(response) {
            Ok(ev) => ev,
            Err(e) => {
                g.engine = Some(engine);
                return Err(e.into());
            }
        };
        let st = engine.state()?;
        g.trace = engine.trace().clone();
        g.status = Lifecycle::Selecting;
        g.view = None;
        let ack = FeedbackAck { event, constraints: st.constraints, confirmations: st.confirmations, status: Lifecycle::Selecting };
        g.state = Some(st);
        if let Some(dir) = &app.trace_dir {
            let path = dir.join(format!("session-{id}.jsonl"));
            if let Err(e) = std::fs::write(&path, g.trace.to_jsonl()) {
                log::warn!("could not write {}: {e}", path.display());
            }
        }
        (ack, engine)
    };
    spawn_prepare(app.clone(), id, slot, engine);
    Ok((StatusCode::ACCEPTED, Json(ack)))
}

async fn get_trace(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<HttpResponse> {
    let slot = app.slot(id)?;
    let body = slot.lock().expect("slot lock").trace.to_jsonl();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn get_state(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<StateView>> {
    let slot = app.slot(id)?;
    let g = slot.lock().expect("slot lock");
    Ok(Json(StateView { status: g.status.clone(), dataset: g.dataset.clone(), step: g.trace.len(), state: g.state.clone() }))
}

async fn close_session(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<StatusCode> {
    let slot = app.slot(id)?;
    let mut g = slot.lock().expect("slot lock");
    g.status = Lifecycle::Closed;
    g.view = None;
    Ok(StatusCode::NO_CONTENT)
}

/// Blocks serving the API on `addr`. `SQBC_TRACE_DIR`, when set, receives one
/// JSON Lines trace file per session.
pub fn serve(addr: &str) -> Result<()> {
    let trace_dir = std::env::var_os("SQBC_TRACE_DIR").map(PathBuf::from);
    if let Some(d) = &trace_dir {
        std::fs::create_dir_all(d)?;
    }
    let app = router(AppState::new(builtin_datasets()?, trace_dir));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        eprintln!("sqbc serving on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await
    })?;
    Ok(())
}
