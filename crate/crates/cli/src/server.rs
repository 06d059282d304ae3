//! JSON-over-HTTP service.
//!
//! Uploaded datasets are estimated once and stored immutably behind an id;
//! band and test requests are stateless computations on the stored fit.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use honest_esp::honest::{plot_data, HonestConfig, HonestEventStudy, PlotRow};
use honest_esp::panel::{read_csv, AssignmentColumn, CsvSchema};
use honest_esp::ErrorClass;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EstimateResponse};
use crate::ops::{compute_band, compute_report, BandsRequest, BandsResponse};

#[derive(Default)]
pub struct AppState {
    datasets: RwLock<HashMap<String, Arc<Dataset>>>,
    next_id: AtomicU64,
}

impl AppState {
    fn get(&self, id: &str) -> Result<Arc<Dataset>, ApiError> {
        self.datasets
            .read()
            .expect("dataset map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn insert(&self, ds: Dataset) -> String {
        let id = format!("ds{}", self.next_id.fetch_add(1, Ordering::SeqCst) + 1);
        self.datasets
            .write()
            .expect("dataset map poisoned")
            .insert(id.clone(), Arc::new(ds));
        id
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    class: &'static str,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn validation(msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: msg.into(),
                class: "validation",
            },
        }
    }

    fn not_found(id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: ErrorBody {
                error: format!("unknown dataset `{id}`"),
                class: "not_found",
            },
        }
    }
}

impl From<honest_esp::Error> for ApiError {
    fn from(e: honest_esp::Error) -> Self {
        match e.class() {
            ErrorClass::Validation => Self::validation(e.to_string()),
            ErrorClass::Numerical => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    error: e.to_string(),
                    class: "numerical",
                },
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Column names for an upload; defaults match the bundled demo file.
#[derive(Debug, Deserialize)]
pub struct UploadQuery {
    #[serde(default = "default_unit")]
    unit: String,
    #[serde(default = "default_time")]
    time: String,
    #[serde(default = "default_outcome")]
    outcome: String,
    treat: Option<String>,
    group: Option<String>,
    /// Comma-separated.
    covariates: Option<String>,
    time_scale: Option<f64>,
}

fn default_unit() -> String {
    "unit".into()
}
fn default_time() -> String {
    "time".into()
}
fn default_outcome() -> String {
    "outcome".into()
}

impl UploadQuery {
    fn schema(&self) -> Result<CsvSchema, ApiError> {
        let assignment = match (&self.treat, &self.group) {
            (Some(_), Some(_)) => return Err(ApiError::validation("give either treat or group, not both")),
            (Some(t), None) => AssignmentColumn::Treat(t.clone()),
            (None, Some(g)) => AssignmentColumn::Group(g.clone()),
            (None, None) => AssignmentColumn::Treat("treat".into()),
        };
        let covariates = self
            .covariates
            .as_deref()
            .map(|c| c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        Ok(CsvSchema {
            unit: self.unit.clone(),
            time: self.time.clone(),
            outcome: self.outcome.clone(),
            assignment,
            covariates,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub id: String,
    pub design: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub event_times: Vec<i64>,
}

/// Report plus plot rows: everything the event-study chart draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResponse {
    #[serde(flatten)]
    pub report: HonestEventStudy,
    pub plot: Vec<PlotRow>,
}

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::validation(format!("worker failed: {e}")))?
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn upload(
    State(state): State<Arc<AppState>>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<(StatusCode, Json<UploadResponse>), ApiError> {
    let schema = q.schema()?;
    let scale = q.time_scale.unwrap_or(1.0);
    let ds = blocking(move || {
        let panel = read_csv(body.as_ref(), &schema)?;
        Ok(Dataset::new(panel, scale)?)
    })
    .await?;
    let resp = UploadResponse {
        id: String::new(),
        design: ds.design().into(),
        n: ds.panel.n_units(),
        t: ds.panel.n_times(),
        event_times: ds.fit.estimate.event_times.clone(),
    };
    let id = state.insert(ds);
    Ok((StatusCode::CREATED, Json(UploadResponse { id, ..resp })))
}

async fn estimate(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<EstimateResponse>, ApiError> {
    Ok(Json(state.get(&id)?.estimate_response()))
}

async fn bands(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<BandsResponse>, ApiError> {
    let ds = state.get(&id)?;
    let req: BandsRequest = parse_body(&body)?;
    blocking(move || Ok(compute_band(&ds.fit, &req)?)).await.map(Json)
}

async fn test(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TestResponse>, ApiError> {
    let ds = state.get(&id)?;
    let cfg: HonestConfig = parse_body(&body)?;
    blocking(move || {
        let report = compute_report(&ds.fit, &cfg)?;
        let plot = plot_data(&ds.fit, &report)?;
        Ok(TestResponse { report, plot })
    })
    .await
    .map(Json)
}

pub fn router() -> Router {
    router_with_state(Arc::new(AppState::default()))
}

pub fn router_with_state(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/datasets", post(upload))
        .route("/datasets/{id}/estimate", get(estimate))
        .route("/datasets/{id}/bands", post(bands))
        .route("/datasets/{id}/test", post(test))
        .with_state(state)
}

pub async fn serve(host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router()).await
}
