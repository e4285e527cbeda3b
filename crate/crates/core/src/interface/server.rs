use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use super::{run_job, JobOptions, BENCHMARKS};
use crate::data::{Configuration, Format};
use crate::estimator::{FittedEstimator, KernelParams};
use crate::geometry::RegionSet;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobRecord {
    pub id: u64,
    pub state: JobState,
    pub config: Value,
    pub logs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Job {
    record: JobRecord,
    config: Configuration,
    /// The result document exactly as the CLI prints it.
    result_text: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    jobs: Arc<Mutex<HashMap<u64, Job>>>,
    next_id: Arc<Mutex<u64>>,
    queue: mpsc::UnboundedSender<u64>,
}

impl AppState {
    /// Creates the state and spawns the single FIFO worker on the current runtime.
    pub fn new() -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        let state = AppState { jobs: Arc::default(), next_id: Arc::new(Mutex::new(1)), queue: tx };
        tokio::spawn(worker(state.jobs.clone(), rx));
        state
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new()
    }
}

async fn worker(jobs: Arc<Mutex<HashMap<u64, Job>>>, mut rx: mpsc::UnboundedReceiver<u64>) {
    while let Some(id) = rx.recv().await {
        let config = {
            let mut map = jobs.lock().unwrap();
            let Some(job) = map.get_mut(&id) else { continue };
            job.record.state = JobState::Running;
            job.config.clone()
        };
        let log_jobs = jobs.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let sink = move |line: &str| {
                if let Some(job) = log_jobs.lock().unwrap().get_mut(&id) {
                    job.record.logs.push(line.to_string());
                }
            };
            run_job(&config, &JobOptions::default(), &sink)
        })
        .await;
        let mut map = jobs.lock().unwrap();
        if let Some(job) = map.get_mut(&id) {
            match outcome {
                Ok(Ok(result)) => {
                    job.record.result = Some(serde_json::to_value(&result).expect("result serializes"));
                    job.result_text = Some(result.to_json() + "\n");
                    job.record.state = JobState::Done;
                }
                Ok(Err(e)) => {
                    job.record.logs.push(format!("error: {e}"));
                    job.record.error = Some(e.to_string());
                    job.record.state = JobState::Failed;
                }
                Err(e) => {
                    job.record.error = Some(format!("job panicked: {e}"));
                    job.record.state = JobState::Failed;
                }
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/jobs", post(submit_job))
        .route("/api/jobs/:id", get(get_job))
        .route("/api/jobs/:id/logs", get(get_logs))
        .route("/api/jobs/:id/result", get(get_result))
        .route("/api/preview", post(preview))
        .route("/api/benchmarks", get(benchmarks))
        .with_state(state)
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn parse_config(body: &str) -> std::result::Result<Configuration, Response> {
    Configuration::parse(body, Format::Json).map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn submit_job(State(state): State<AppState>, body: String) -> Response {
    let config = match parse_config(&body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    let id = {
        let mut next = state.next_id.lock().unwrap();
        let id = *next;
        *next += 1;
        id
    };
    let record = JobRecord {
        id,
        state: JobState::Queued,
        config: config.to_json_value(),
        logs: Vec::new(),
        result: None,
        error: None,
    };
    state.jobs.lock().unwrap().insert(id, Job { record, config, result_text: None });
    if state.queue.send(id).is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "job worker stopped");
    }
    (StatusCode::CREATED, Json(json!({ "id": id }))).into_response()
}

async fn get_job(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    match state.jobs.lock().unwrap().get(&id) {
        Some(job) => Json(job.record.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown job {id}")),
    }
}

/// The finished result as raw JSON text, byte-identical to the CLI output.
async fn get_result(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    let map = state.jobs.lock().unwrap();
    let Some(job) = map.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown job {id}"));
    };
    match (&job.result_text, job.record.state) {
        (Some(text), _) => ([(header::CONTENT_TYPE, "application/json")], text.clone()).into_response(),
        (None, JobState::Failed) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, job.record.error.clone().unwrap_or_default())
        }
        (None, _) => error(StatusCode::CONFLICT, format!("job {id} has not finished")),
    }
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    from: Option<usize>,
}

async fn get_logs(State(state): State<AppState>, Path(id): Path<u64>, Query(q): Query<LogQuery>) -> Response {
    let map = state.jobs.lock().unwrap();
    let Some(job) = map.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown job {id}"));
    };
    let logs = &job.record.logs;
    let from = q.from.unwrap_or(0).min(logs.len());
    Json(json!({
        "from": from,
        "next": logs.len(),
        "lines": &logs[from..],
        "state": job.record.state,
    }))
    .into_response()
}

pub const PREVIEW_POINTS_1D: usize = 101;
pub const PREVIEW_POINTS_2D: usize = 21;

/// Estimator mean predictions on a grid over the domain plus set boxes.
pub fn preview_json(config: &Configuration) -> Result<Value> {
    let data = config.load_dataset()?;
    let params = KernelParams::new(config.sigma_f, config.sigma_l.clone(), config.lambda)?;
    let est = FittedEstimator::fit(&params, &data)?;
    let (lo, hi) = config.spec.domain.bounding_box();
    let n = lo.len();
    let per = if n == 1 { PREVIEW_POINTS_1D } else { PREVIEW_POINTS_2D };
    let total = per.checked_pow(n as u32).filter(|t| *t <= 1_000_000).unwrap_or(0);
    let mut pts = DMatrix::zeros(total, n);
    for k in 0..total {
        let mut rest = k;
        for d in 0..n {
            let i = rest % per;
            rest /= per;
            pts[(k, d)] = lo[d] + (hi[d] - lo[d]) * i as f64 / (per - 1) as f64;
        }
    }
    let pred = est.predict_many(&pts);
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let boxes = |s: &RegionSet| -> Vec<Value> {
        s.members()
            .into_iter()
            .map(|m| {
                let (l, h) = m.bounding_box();
                json!({ "lower": l, "upper": h })
            })
            .collect()
    };
    Ok(json!({
        "points": rows(&pts),
        "mean": rows(&pred),
        "sets": {
            "X_bounds": boxes(&config.spec.domain),
            "X_init": boxes(&config.spec.initial),
            "X_unsafe": boxes(&config.spec.unsafe_set),
        },
    }))
}

async fn preview(body: String) -> Response {
    let config = match parse_config(&body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    match tokio::task::spawn_blocking(move || preview_json(&config)).await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn benchmarks() -> Response {
    let list: Vec<Value> = BENCHMARKS
        .iter()
        .map(|(name, text)| {
            let cfg = Configuration::parse(text, Format::Yaml).expect("shipped benchmark parses");
            json!({ "name": name, "config": cfg.to_json_value() })
        })
        .collect();
    Json(list).into_response()
}

/// Runs the service until the process is stopped.
pub fn serve_blocking(port: u16) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        log::info!("listening on http://127.0.0.1:{port}");
        axum::serve(listener, router(AppState::new())).await?;
        Ok(())
    })
}
