//! HTTP+JSON front of [`AnnotationService`].
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | [`OpenRequest`] |
//! | GET | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/clicks` | [`ClickRequest`] |
//! | POST | `/sessions/{id}/undo` | [`VersionRequest`] (optional) |
//! | POST | `/sessions/{id}/commit` | [`VersionRequest`] (optional) |
//! | GET | `/frames/{capture}/{frame}/views` | |
//! | GET | `/images/{view}/{frame}` | frame token is `{capture}_{frame}` |
//! | GET | `/schema` | |
//!
//! Errors are `{format_version, code, message, field}`.

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::service::{AnnotationService, ClickRequest, OpenRequest, ServiceError, VersionRequest};
use crate::FORMAT_VERSION;

#[derive(Serialize)]
struct ErrorBody {
    format_version: &'static str,
    code: String,
    message: String,
    field: Option<String>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: String, field: Option<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                format_version: FORMAT_VERSION,
                code: code.into(),
                message,
                field,
            },
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownFrame { .. } | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::UnknownView(_) | ServiceError::UnknownJoint(_) | ServiceError::InvalidRequest { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::VersionConflict { .. } | ServiceError::NothingToCommit => StatusCode::CONFLICT,
            ServiceError::Dataset(crate::dataset_io::DatasetError::Locked(_)) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Dataset(_) | ServiceError::Journal { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string(), e.field())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parse a JSON body; an empty body means `T::default()` when `optional`.
fn parse_body<T: DeserializeOwned + Default>(body: &Bytes, optional: bool) -> Result<T, ApiError> {
    if optional && body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let field = (path != ".").then_some(path);
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", inner.to_string(), field)
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None)
    })?
    .map_err(ApiError::from)
}

async fn open_session(State(svc): State<AnnotationService>, body: Bytes) -> Result<Response, ApiError> {
    let req: OpenRequest = parse_body(&body, false)?;
    let view = blocking(move || svc.open_session(&req)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(svc): State<AnnotationService>, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    Ok(Json(blocking(move || svc.get_session(&id)).await?))
}

async fn submit_click(
    State(svc): State<AnnotationService>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl Serialize> {
    let req: ClickRequest = parse_body(&body, false)?;
    Ok(Json(blocking(move || svc.submit_click(&id, &req)).await?))
}

async fn undo(State(svc): State<AnnotationService>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl Serialize> {
    let req: VersionRequest = parse_body(&body, true)?;
    Ok(Json(blocking(move || svc.undo(&id, &req)).await?))
}

async fn commit(State(svc): State<AnnotationService>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl Serialize> {
    let req: VersionRequest = parse_body(&body, true)?;
    Ok(Json(blocking(move || svc.commit_frame(&id, &req)).await?))
}

async fn frame_views(
    State(svc): State<AnnotationService>,
    Path((capture, frame)): Path<(u64, u64)>,
) -> ApiResult<impl Serialize> {
    Ok(Json(blocking(move || svc.frame_views(capture, frame)).await?))
}

fn parse_frame_token(token: &str) -> Result<(u64, u64), ApiError> {
    let bad = || {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            format!("frame token {token:?} must look like <capture>_<frame>"),
            Some("frame".into()),
        )
    };
    let (c, f) = token.split_once('_').ok_or_else(bad)?;
    Ok((c.parse().map_err(|_| bad())?, f.parse().map_err(|_| bad())?))
}

async fn image(
    State(svc): State<AnnotationService>,
    Path((view, token)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let (capture, frame) = parse_frame_token(&token)?;
    let (bytes, mime) = blocking(move || svc.image(&view, capture, frame)).await?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn joint_schema() -> Json<serde_json::Value> {
    let mut doc = crate::pose::schema_document();
    doc["format_version"] = FORMAT_VERSION.into();
    Json(doc)
}

pub fn router(svc: AnnotationService) -> Router {
    Router::new()
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/clicks", post(submit_click))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/commit", post(commit))
        .route("/frames/{capture}/{frame}/views", get(frame_views))
        .route("/images/{view}/{frame}", get(image))
        .route("/schema", get(joint_schema))
        .with_state(svc)
}

/// Serve until Ctrl-C.
pub async fn serve(svc: AnnotationService, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
