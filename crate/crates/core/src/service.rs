//! HTTP API for the web UI and scripts: schema, experiment lifecycle, live
//! progress over server-sent events, reports and static files.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc};
use tower_http::services::ServeDir;

use crate::experiment::{expand_forks, parse_descriptor, DescriptorError, ExperimentDescriptor};
use crate::herd::{discover_workers, master_run, probe_workers, DiscoveredWorker};
use crate::params::ParamValue;
use crate::reports::{self, PlotStyle, ReportQuery};
use crate::runner::{run_local, CancelRegistry, ProgressReport, RunState, RunStatus};
use crate::schema::schema_json;

const SNAPSHOT_PERIOD: Duration = Duration::from_millis(1000);
const DISCOVERY_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Output root; experiments live in `<root>/<name>/`.
    pub root: PathBuf,
    /// Directory served under `/`.
    pub static_dir: Option<PathBuf>,
    /// UDP targets probed by `GET /api/workers`.
    pub discovery_targets: Vec<SocketAddr>,
    /// Job addresses handshaken by `GET /api/workers`.
    pub static_workers: Vec<SocketAddr>,
    /// Threads for launches that select no workers.
    pub local_jobs: usize,
}

struct Session {
    descriptor: ExperimentDescriptor,
    statuses: BTreeMap<String, RunStatus>,
    cancel: Arc<CancelRegistry>,
    launched: bool,
    events: broadcast::Sender<ProgressReport>,
}

pub struct AppState {
    cfg: ServiceConfig,
    sessions: Mutex<BTreeMap<String, Session>>,
    workers: Mutex<Vec<DiscoveredWorker>>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState { cfg, sessions: Mutex::default(), workers: Mutex::default() })
    }

    fn record(&self, name: &str, r: &ProgressReport) {
        let mut sessions = self.sessions.lock().expect("sessions");
        let Some(s) = sessions.get_mut(name) else { return };
        if let Some(st) = s.statuses.get_mut(&r.unit_id) {
            if st.state.is_final() || r.fraction_done < st.progress {
                return;
            }
            st.state = r.state;
            st.progress = r.fraction_done;
            st.avg_episode_reward = r.avg_episode_reward;
            st.last_eval_reward = r.last_eval_reward;
        }
        let _ = s.events.send(r.clone());
    }

    fn settle(&self, name: &str, finals: BTreeMap<String, RunStatus>) {
        let mut sessions = self.sessions.lock().expect("sessions");
        let Some(s) = sessions.get_mut(name) else { return };
        for (id, st) in finals {
            let _ = s.events.send(ProgressReport::new(&id, &st));
            s.statuses.insert(id, st);
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), details: None }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut err = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.details {
            err["violations"] = d;
        }
        (self.status, Json(json!({ "error": err }))).into_response()
    }
}

impl From<reports::ReportError> for ApiError {
    fn from(e: reports::ReportError) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_query", e.to_string())
    }
}

impl From<DescriptorError> for ApiError {
    fn from(e: DescriptorError) -> Self {
        let mut err = ApiError::new(StatusCode::BAD_REQUEST, "invalid_descriptor", e.to_string());
        err.details = Some(serde_json::to_value(e.violations()).expect("violations serialize"));
        err
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/schema", get(get_schema))
        .route("/api/workers", get(get_workers))
        .route("/api/experiments", post(create_experiment))
        .route("/api/experiments/{name}/launch", post(launch))
        .route("/api/experiments/{name}/progress", get(progress))
        .route("/api/experiments/{name}/units/{unit_id}/cancel", post(cancel_unit))
        .route("/api/experiments/{name}/cancel", post(cancel_all))
        .route("/api/experiments/{name}/report", get(report))
        .route("/api/experiments/{name}/plot", get(plot))
        .with_state(state.clone());
    match &state.cfg.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until the process ends.
pub async fn serve(cfg: ServiceConfig, bind: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(cfg))).await?;
    Ok(())
}

async fn get_schema() -> Response {
    ([(header::CONTENT_TYPE, "application/json")], schema_json()).into_response()
}

async fn get_workers(State(st): State<Arc<AppState>>) -> ApiResult<Json<Vec<DiscoveredWorker>>> {
    let mut found = probe_workers(&st.cfg.static_workers, DISCOVERY_TIMEOUT).await;
    if !st.cfg.discovery_targets.is_empty() {
        let udp = discover_workers(&st.cfg.discovery_targets, DISCOVERY_TIMEOUT)
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "discovery", e.to_string()))?;
        for w in udp {
            if !found.iter().any(|f| f.descriptor.worker_id == w.descriptor.worker_id) {
                found.push(w);
            }
        }
    }
    *st.workers.lock().expect("workers") = found.clone();
    Ok(Json(found))
}

#[derive(Serialize)]
struct UnitRow {
    unit_id: String,
    seed: u64,
    assignments: BTreeMap<String, ParamValue>,
}

async fn create_experiment(State(st): State<Arc<AppState>>, body: String) -> ApiResult<(StatusCode, Json<Value>)> {
    let d = parse_descriptor(&body)?;
    let units = expand_forks(&d)?;
    let rows: Vec<UnitRow> =
        units.iter().map(|u| UnitRow { unit_id: u.unit_id.clone(), seed: u.seed, assignments: u.assignments.clone() }).collect();
    let mut sessions = st.sessions.lock().expect("sessions");
    if let Some(s) = sessions.get(&d.name) {
        if s.launched && s.statuses.values().any(|x| !x.state.is_final()) {
            return Err(ApiError::new(StatusCode::CONFLICT, "running", format!("experiment '{}' is running", d.name)));
        }
    }
    let (events, _) = broadcast::channel(1024);
    sessions.insert(
        d.name.clone(),
        Session {
            statuses: units.iter().map(|u| (u.unit_id.clone(), RunStatus::pending())).collect(),
            descriptor: d.clone(),
            cancel: Arc::new(CancelRegistry::new()),
            launched: false,
            events,
        },
    );
    Ok((StatusCode::CREATED, Json(json!({ "name": d.name, "unit_count": rows.len(), "units": rows }))))
}

#[derive(Debug, Default, Deserialize)]
struct LaunchBody {
    #[serde(default)]
    workers: Vec<String>,
}

async fn launch(State(st): State<Arc<AppState>>, Path(name): Path<String>, body: Option<Json<LaunchBody>>) -> ApiResult<(StatusCode, Json<Value>)> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let addrs: Vec<SocketAddr> = {
        let known = st.workers.lock().expect("workers");
        body.workers
            .iter()
            .map(|id| {
                known
                    .iter()
                    .find(|w| &w.descriptor.worker_id == id)
                    .map(|w| w.addr)
                    .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "unknown_worker", format!("no discovered worker '{id}'")))
            })
            .collect::<Result<_, _>>()?
    };
    let (d, cancel) = {
        let mut sessions = st.sessions.lock().expect("sessions");
        let s = sessions.get_mut(&name).ok_or_else(|| ApiError::not_found(&format!("experiment '{name}'")))?;
        if s.launched {
            return Err(ApiError::new(StatusCode::CONFLICT, "already_launched", format!("experiment '{name}' was already launched")));
        }
        s.launched = true;
        (s.descriptor.clone(), s.cancel.clone())
    };
    let root = st.cfg.root.clone();
    let mode = if addrs.is_empty() { "local" } else { "distributed" };
    let state = st.clone();
    if addrs.is_empty() {
        let jobs = st.cfg.local_jobs.max(1);
        tokio::task::spawn_blocking(move || {
            let cb = |r: &ProgressReport| state.record(&d.name, r);
            match run_local(&d, &root, jobs, &cb, &cancel) {
                Ok(finals) => state.settle(&d.name, finals),
                Err(e) => log::error!("local run of {}: {e}", d.name),
            }
        });
    } else {
        tokio::spawn(async move {
            let cb = |r: &ProgressReport| state.record(&d.name, r);
            match master_run(&d, &addrs, &root, &cb, &cancel).await {
                Ok(finals) => state.settle(&d.name, finals),
                Err(e) => log::error!("distributed run of {}: {e}", d.name),
            }
        });
    }
    Ok((StatusCode::ACCEPTED, Json(json!({ "name": name, "mode": mode, "workers": body.workers }))))
}

fn snapshot(st: &AppState, name: &str) -> Option<(Vec<ProgressReport>, bool)> {
    let sessions = st.sessions.lock().expect("sessions");
    let s = sessions.get(name)?;
    let reports = s.statuses.iter().map(|(id, x)| ProgressReport::new(id, x)).collect();
    let done = s.launched && s.statuses.values().all(|x| x.state.is_final());
    Some((reports, done))
}

fn event(r: &ProgressReport) -> Event {
    Event::default().event("progress").json_data(r).expect("report serializes")
}

async fn progress(
    State(st): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let mut rx = {
        let sessions = st.sessions.lock().expect("sessions");
        let s = sessions.get(&name).ok_or_else(|| ApiError::not_found(&format!("experiment '{name}'")))?;
        s.events.subscribe()
    };
    let (tx, out) = mpsc::channel::<Event>(256);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(SNAPSHOT_PERIOD);
        loop {
            tokio::select! {
                _ = tick.tick() => {
                    let Some((reports, done)) = snapshot(&st, &name) else { return };
                    for r in reports.iter().filter(|r| !r.state.is_final() || done) {
                        if tx.send(event(r)).await.is_err() {
                            return;
                        }
                    }
                    if done {
                        let _ = tx.send(Event::default().event("done").data("{}")).await;
                        return;
                    }
                }
                r = rx.recv() => match r {
                    Ok(r) => {
                        if tx.send(event(&r)).await.is_err() {
                            return;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => {}
                    Err(broadcast::error::RecvError::Closed) => return,
                },
            }
        }
    });
    let stream = futures::stream::unfold(out, |mut out| async move { out.recv().await.map(|e| (Ok(e), out)) });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn full_unit_id(name: &str, unit_id: &str) -> String {
    if unit_id.contains('/') {
        unit_id.to_string()
    } else {
        format!("{name}/{unit_id}")
    }
}

async fn cancel_unit(State(st): State<Arc<AppState>>, Path((name, unit_id)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let id = full_unit_id(&name, &unit_id);
    let mut sessions = st.sessions.lock().expect("sessions");
    let s = sessions.get_mut(&name).ok_or_else(|| ApiError::not_found(&format!("experiment '{name}'")))?;
    let status = s.statuses.get_mut(&id).ok_or_else(|| ApiError::not_found(&format!("unit '{id}'")))?;
    s.cancel.cancel_unit(&id);
    if !s.launched && status.state == RunState::Pending {
        *status = RunStatus::cancelled();
        let _ = s.events.send(ProgressReport::new(&id, status));
    }
    Ok(Json(json!({ "cancelled": [id] })))
}

async fn cancel_all(State(st): State<Arc<AppState>>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let mut sessions = st.sessions.lock().expect("sessions");
    let s = sessions.get_mut(&name).ok_or_else(|| ApiError::not_found(&format!("experiment '{name}'")))?;
    s.cancel.cancel_all();
    let mut ids = Vec::new();
    for (id, status) in s.statuses.iter_mut() {
        if status.state.is_final() {
            continue;
        }
        if !s.launched {
            *status = RunStatus::cancelled();
            let _ = s.events.send(ProgressReport::new(id, status));
        }
        ids.push(id.clone());
    }
    Ok(Json(json!({ "cancelled": ids })))
}

#[derive(Debug, Deserialize)]
struct QueryParam {
    query: String,
}

#[derive(Debug, Deserialize)]
struct PlotQuery {
    #[serde(flatten)]
    query: ReportQuery,
    #[serde(default)]
    title: Option<String>,
}

fn experiment_dir(st: &AppState, name: &str) -> ApiResult<PathBuf> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) && name != "." && name != "..";
    let dir = st.cfg.root.join(name);
    if !ok || !dir.is_dir() {
        return Err(ApiError::not_found(&format!("experiment '{name}'")));
    }
    Ok(dir)
}

fn parse_query<T: for<'de> Deserialize<'de>>(q: &str) -> ApiResult<T> {
    serde_json::from_str(q).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_query", e.to_string()))
}

async fn report(State(st): State<Arc<AppState>>, Path(name): Path<String>, Query(q): Query<QueryParam>) -> ApiResult<Json<Vec<reports::SeriesStats>>> {
    let query: ReportQuery = parse_query(&q.query)?;
    let dir = experiment_dir(&st, &name)?;
    let results = tokio::task::spawn_blocking(move || reports::load_experiment(&dir))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(reports::run_query(&results, &query)?))
}

async fn plot(State(st): State<Arc<AppState>>, Path(name): Path<String>, Query(q): Query<QueryParam>) -> ApiResult<Response> {
    let pq: PlotQuery = parse_query(&q.query)?;
    let dir = experiment_dir(&st, &name)?;
    let results = tokio::task::spawn_blocking(move || reports::load_experiment(&dir))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let series = reports::run_query(&results, &pq.query)?;
    let style = PlotStyle { title: pq.title.unwrap_or(name), group_by: pq.query.group_by.clone(), ..PlotStyle::default() };
    let svg = reports::render_svg(&series, &style)?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}
