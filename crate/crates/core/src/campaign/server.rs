//! HTTP service over a [`CampaignStore`].
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/campaigns` | create from a JSON config |
//! | GET | `/campaigns` | list ids |
//! | GET | `/campaigns/{id}` | state |
//! | POST | `/campaigns/{id}/observations` | tell; needs `If-Match: <revision>` |
//! | GET | `/campaigns/{id}/suggestion` | ask |
//! | GET | `/campaigns/{id}/curve?axis=&resolution=&slice=` | posterior slice |
//! | GET | `/campaigns/{id}/diagnostics?refit_per_fold=&format=` | LOO report (JSON or CSV) |
//!
//! Every response carries the campaign revision in `ETag`. Errors are JSON
//! objects `{"error": kind, "message": text}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CampaignConfig, CampaignState, CampaignStore};
use crate::diagnostics::{report_to_table, write_csv};
use crate::error::Error;

pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": kind, "message": message.into() }),
        }
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let status = match &err {
            Error::CampaignNotFound(_) => StatusCode::NOT_FOUND,
            Error::RevisionMismatch { .. } => StatusCode::CONFLICT,
            e if e.is_numerical() || e.is_environment() => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let mut api = ApiError::new(status, err.kind(), err.to_string());
        if let Error::RevisionMismatch { current, .. } = err {
            api.body["current_revision"] = json!(current);
        }
        api
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn with_etag<T: Serialize>(status: StatusCode, revision: u64, body: &T) -> Response {
    let mut resp = (status, Json(body)).into_response();
    let tag = HeaderValue::from_str(&format!("\"{revision}\"")).expect("ascii etag");
    resp.headers_mut().insert(header::ETAG, tag);
    resp
}

/// Public view of a campaign.
#[derive(Debug, Serialize, Deserialize)]
pub struct CampaignView {
    pub n: usize,
    #[serde(flatten)]
    pub state: CampaignState,
}

impl From<CampaignState> for CampaignView {
    fn from(state: CampaignState) -> Self {
        Self { n: state.n(), state }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationBody {
    pub x: Vec<f64>,
    pub y: f64,
    #[serde(default)]
    pub tag: Option<String>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))
}

fn if_match(headers: &HeaderMap) -> Result<u64, ApiError> {
    let raw = headers.get(header::IF_MATCH).ok_or_else(|| {
        ApiError::new(
            StatusCode::PRECONDITION_REQUIRED,
            "missing_if_match",
            "mutations require an If-Match header with the current revision",
        )
    })?;
    let text = raw.to_str().unwrap_or("").trim();
    let text = text.strip_prefix("W/").unwrap_or(text).trim_matches('"');
    text.parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "invalid_if_match", format!("not a revision: {text:?}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

type Store = Arc<CampaignStore>;

async fn create(State(store): State<Store>, body: Bytes) -> ApiResult {
    let config: CampaignConfig = parse_json(&body)?;
    let state = blocking(move || store.create(config)).await?;
    Ok(with_etag(StatusCode::CREATED, state.revision, &CampaignView::from(state)))
}

async fn list(State(store): State<Store>) -> ApiResult {
    let ids = blocking(move || store.ids()).await?;
    Ok(Json(json!({ "campaigns": ids })).into_response())
}

async fn show(State(store): State<Store>, Path(id): Path<String>) -> ApiResult {
    let state = blocking(move || store.state(&id)).await?;
    Ok(with_etag(StatusCode::OK, state.revision, &CampaignView::from(state)))
}

async fn observe(State(store): State<Store>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let expected = if_match(&headers)?;
    let obs: ObservationBody = parse_json(&body)?;
    let state = blocking(move || store.tell(&id, obs.x, obs.y, obs.tag, Some(expected))).await?;
    Ok(with_etag(StatusCode::OK, state.revision, &CampaignView::from(state)))
}

async fn suggestion(State(store): State<Store>, Path(id): Path<String>) -> ApiResult {
    let sug = blocking(move || store.ask(&id)).await?;
    Ok(with_etag(StatusCode::OK, sug.revision, &sug))
}

#[derive(Debug, Deserialize)]
pub struct CurveQuery {
    #[serde(default)]
    pub axis: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Comma-separated coordinates for the fixed dimensions.
    pub slice: Option<String>,
}

fn default_resolution() -> usize {
    100
}

fn parse_point(text: &str) -> Result<Vec<f64>, ApiError> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", format!("bad coordinate list: {e}")))
}

async fn curve(State(store): State<Store>, Path(id): Path<String>, Query(q): Query<CurveQuery>) -> ApiResult {
    let slice = q.slice.as_deref().map(parse_point).transpose()?;
    let (revision, rows) = blocking(move || {
        let state = store.state(&id)?;
        let rows = state.posterior_curve(q.axis, slice.as_deref(), q.resolution)?;
        Ok((state.revision, rows))
    })
    .await?;
    Ok(with_etag(
        StatusCode::OK,
        revision,
        &json!({ "revision": revision, "axis": q.axis, "rows": rows }),
    ))
}

async fn diagnostics(
    State(store): State<Store>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let refit = match q.get("refit_per_fold").map(String::as_str) {
        None => None,
        Some("true" | "1") => Some(true),
        Some("false" | "0") => Some(false),
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid_query",
                format!("refit_per_fold must be true or false, got {other:?}"),
            ))
        }
    };
    let csv = q.get("format").is_some_and(|f| f == "csv");
    let (revision, report) = blocking(move || {
        let state = store.state(&id)?;
        Ok((state.revision, state.diagnose(refit)?))
    })
    .await?;
    if csv {
        let mut buf = Vec::new();
        write_csv(&report_to_table(&report), &mut buf).map_err(ApiError::from)?;
        let mut resp = (StatusCode::OK, buf).into_response();
        resp.headers_mut()
            .insert(header::CONTENT_TYPE, HeaderValue::from_static("text/csv"));
        return Ok(resp);
    }
    Ok(with_etag(
        StatusCode::OK,
        revision,
        &json!({ "revision": revision, "report": report }),
    ))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(store: Arc<CampaignStore>) -> Router {
    Router::new()
        .route("/campaigns", post(create).get(list))
        .route("/campaigns/{id}", get(show))
        .route("/campaigns/{id}/observations", post(observe))
        .route("/campaigns/{id}/suggestion", get(suggestion))
        .route("/campaigns/{id}/curve", get(curve))
        .route("/campaigns/{id}/diagnostics", get(diagnostics))
        .fallback(not_found)
        .with_state(store)
}

/// Binds the listening socket, mapping an occupied port to `PortInUse`.
pub async fn bind(addr: SocketAddr) -> crate::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => Error::PortInUse(addr.port()),
        _ => e.into(),
    })
}

/// Serves the campaigns under `state_dir` until the process ends. Every
/// stored campaign is loaded first so corrupt state surfaces at startup.
pub async fn serve(state_dir: PathBuf, addr: SocketAddr) -> crate::Result<()> {
    let store = Arc::new(CampaignStore::open(state_dir)?);
    let count = {
        let store = store.clone();
        tokio::task::spawn_blocking(move || store.load_all())
            .await
            .map_err(|e| Error::Io(e.to_string()))??
    };
    let listener = bind(addr).await?;
    log::info!("serving {count} campaign(s) on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await?;
    Ok(())
}
