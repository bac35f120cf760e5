//! REST handlers. Every mutation is written to the store file before the
//! response goes out.

use std::collections::BTreeMap;
use std::net::IpAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use homescope_core::endpoints::ListDatabases;
use homescope_core::export::render_release;
use homescope_core::flows::WINDOW_SECS;
use homescope_core::identity::{Category, FixtureFingerbank, LabelRules, LabelTriple, ValidationOutcome};
use homescope_core::privacy::DeviceId;
use homescope_core::reports::{run_report, ExpectedResolvers, ReportFormat, ReportKind};
use homescope_core::store::{device_list, BandwidthSeries, DeviceSummary, EndpointRow, HintFilter, Store, StoreData, StoreError};
use homescope_core::tls::CipherRegistry;
use homescope_core::wire::{IngestAck, TableCounts, UploadBatch};
use homescope_core::Timestamp;
use serde::{Deserialize, Serialize};

/// Batches from a busy LAN can exceed axum's 2 MiB default.
const MAX_BODY: usize = 32 * 1024 * 1024;

pub struct AppState {
    store: RwLock<Store>,
    pub dbs: ListDatabases,
    pub rules: LabelRules,
    pub registry: CipherRegistry,
    pub fingerbank: FixtureFingerbank,
}

impl AppState {
    pub fn new(store: Store, dbs: ListDatabases, rules: LabelRules, registry: CipherRegistry) -> Self {
        AppState { store: RwLock::new(store), dbs, rules, registry, fingerbank: FixtureFingerbank::bundled() }
    }

    pub fn read<T>(&self, f: impl FnOnce(&StoreData) -> T) -> T {
        f(self.store.read().expect("store lock").data())
    }

    fn write<T>(&self, f: impl FnOnce(&mut StoreData) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut s = self.store.write().expect("store lock");
        let out = f(s.data_mut())?;
        // On a failed save the change stays in memory and goes out with the
        // next successful one; the client sees a 500 and retries.
        s.save().map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(out)
    }
}

pub type Shared = Arc<AppState>;

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Internal(String),
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownDevice(_) => ApiError::NotFound(e.to_string()),
            StoreError::EmptyLabel | StoreError::Batch(_) => ApiError::BadRequest(e.to_string()),
            StoreError::Corrupt(..) | StoreError::Io(_) => ApiError::Internal(e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Internal(m) => {
                tracing::error!(error = %m, "request failed");
                (StatusCode::INTERNAL_SERVER_ERROR, m)
            }
        };
        (status, Json(ErrorBody { error: msg })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn device(id: &str) -> ApiResult<DeviceId> {
    DeviceId::parse(id).map_err(|e| ApiError::BadRequest(e.to_string()))
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/batch", post(post_batch))
        .route("/v1/devices", get(get_devices))
        .route("/v1/devices/{id}", axum::routing::delete(delete_device))
        .route("/v1/devices/{id}/endpoints", get(get_endpoints))
        .route("/v1/devices/{id}/bandwidth", get(get_bandwidth))
        .route("/v1/devices/{id}/labels", post(post_label))
        .route("/v1/devices/{id}/monitor", post(post_monitor))
        .route("/v1/devices/{id}/validation", get(get_validation))
        .route("/v1/labels/vocabulary", get(get_vocabulary))
        .route("/v1/export", get(get_export))
        .route("/v1/reports/{kind}", get(get_report))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

async fn post_batch(State(s): State<Shared>, Json(batch): Json<UploadBatch>) -> ApiResult<Json<IngestAck>> {
    let ack = s.write(|d| d.ingest(&batch, &s.rules).map_err(|e| ApiError::BadRequest(e.to_string())))?;
    tracing::debug!(batch = %ack.batch_id, accepted = ack.accepted.total(), rejected = ack.rejected.len(), "ingested");
    Ok(Json(ack))
}

async fn get_devices(State(s): State<Shared>) -> Json<Vec<DeviceSummary>> {
    Json(s.read(device_list))
}

async fn get_endpoints(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Vec<EndpointRow>>> {
    let id = device(&id)?;
    Ok(Json(s.read(|d| d.resolver(&s.dbs).endpoint_table(&id))?))
}

#[derive(Debug, Deserialize)]
struct BandwidthQuery {
    window: Option<i64>,
}

async fn get_bandwidth(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<BandwidthQuery>,
) -> ApiResult<Json<Vec<BandwidthSeries>>> {
    let id = device(&id)?;
    let window = q.window.unwrap_or(WINDOW_SECS);
    if window <= 0 || window % WINDOW_SECS != 0 {
        return Err(ApiError::BadRequest(format!("window must be a positive multiple of {WINDOW_SECS} s")));
    }
    Ok(Json(s.read(|d| d.resolver(&s.dbs).bandwidth(&id, window))?))
}

#[derive(Debug, Deserialize)]
struct LabelForm {
    #[serde(default)]
    name: String,
    #[serde(default)]
    category: String,
    #[serde(default)]
    vendor: String,
}

async fn post_label(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(f): Json<LabelForm>,
) -> ApiResult<Json<LabelTriple>> {
    let id = device(&id)?;
    let t = s.write(|d| Ok(d.submit_label(&id, &f.name, &f.category, &f.vendor, &s.rules, Timestamp::now())?))?;
    Ok(Json(t))
}

#[derive(Debug, Serialize, Deserialize)]
struct MonitorForm {
    monitored: bool,
}

#[derive(Debug, Serialize)]
struct MonitorState {
    device_id: DeviceId,
    monitored: bool,
}

async fn post_monitor(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(f): Json<MonitorForm>,
) -> ApiResult<Json<MonitorState>> {
    let id = device(&id)?;
    s.write(|d| Ok(d.set_monitored(&id, f.monitored)?))?;
    Ok(Json(MonitorState { device_id: id, monitored: f.monitored }))
}

#[derive(Debug, Deserialize)]
struct DeleteQuery {
    only: Option<String>,
}

async fn delete_device(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<DeleteQuery>,
) -> ApiResult<Json<TableCounts>> {
    let id = device(&id)?;
    let filter = q.only.as_deref().map(str::parse::<HintFilter>).transpose().map_err(ApiError::BadRequest)?;
    let now = Timestamp::now();
    let counts = s.write(|d| {
        Ok(match filter {
            Some(f) => d.delete_hint_kind(&id, f, now)?,
            None => d.delete_device_data(&id, now)?,
        })
    })?;
    tracing::info!(device = %id, removed = counts.total(), "deleted");
    Ok(Json(counts))
}

async fn get_validation(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Vec<ValidationOutcome>>> {
    let id = device(&id)?;
    Ok(Json(s.read(|d| d.validation(&id, &s.dbs, &s.rules, Some(&s.fingerbank)))?))
}

#[derive(Debug, Serialize)]
struct Vocabulary {
    categories: Vec<Category>,
    vendors: Vec<String>,
}

async fn get_vocabulary(State(s): State<Shared>) -> Json<Vocabulary> {
    Json(Vocabulary {
        categories: Category::ALL.to_vec(),
        vendors: s.rules.vendors().into_iter().map(str::to_string).collect(),
    })
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    file: Option<String>,
}

async fn get_export(State(s): State<Shared>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let csvs = s.read(|d| render_release(d, &s.dbs));
    let Some(want) = q.file else {
        let all: BTreeMap<&str, &str> = csvs.files().into_iter().collect();
        return Ok(Json(all).into_response());
    };
    let (name, body) = csvs
        .files()
        .into_iter()
        .find(|(n, _)| *n == want)
        .ok_or_else(|| ApiError::NotFound(format!("no export file {want:?}")))?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{name}\"")),
        ],
        body.to_string(),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    format: Option<String>,
    dhcp_resolver: Option<IpAddr>,
}

async fn get_report(
    State(s): State<Shared>,
    Path(kind): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    let kind: ReportKind = kind.parse().map_err(ApiError::NotFound)?;
    let format: ReportFormat = q.format.as_deref().unwrap_or("json").parse().map_err(ApiError::BadRequest)?;
    let expected = ExpectedResolvers { per_device: BTreeMap::new(), default: q.dhcp_resolver };
    let body = s.read(|d| run_report(kind, d, &s.dbs, &s.registry, &expected, format));
    let ctype = match format {
        ReportFormat::Csv => "text/csv; charset=utf-8",
        ReportFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, ctype)], body).into_response())
}
