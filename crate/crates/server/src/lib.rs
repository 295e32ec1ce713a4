//! HTTP front end for the family loop.
//!
//! Handlers are thin: each one checks the caller's family, hands the
//! request to the shared [`Engine`] on the blocking pool and maps the result
//! to a status code. Generation work is queued on a bounded executor and
//! reported through `GET /jobs/{id}`.

pub mod client;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use storyecho_core::domain::*;
use storyecho_core::engine::{
    Accepted, Engine, EngineError, ErrorClass, GenerateRequest, NewAvatar, NewFramework, NewInteraction,
    NewPostMealRecord, NewSession, ReviewDecision, ReviewRequest, Task,
};
use storyecho_core::pipeline::MediaBlob;
use storyecho_core::store::{IdempotentResponse, StoreError};
use storyecho_core::validate::ValidationReport;

/// Largest request body accepted, which bounds voice uploads.
pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
}

impl ApiError {
    pub fn new(status: u16, code: impl Into<String>, detail: impl Into<String>) -> Self {
        ApiError { http_status: status, code: code.into(), detail: detail.into(), report: None }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        ApiError::new(404, "NotFound", format!("{what} not found"))
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let report = match &e {
            EngineError::Validation(r) => Some(r.clone()),
            EngineError::Pipeline(storyecho_core::pipeline::PipelineError::GenerationFailed { report, .. }) => {
                Some(report.clone())
            }
            _ => None,
        };
        ApiError { http_status: e.class().http_status(), code: e.code(), detail: e.to_string(), report }
    }
}

impl From<DomainError> for ApiError {
    fn from(e: DomainError) -> Self {
        ApiError::new(ErrorClass::Validation.http_status(), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    jobs: Arc<Semaphore>,
    /// Held while a keyed request runs, so a concurrent retry waits for the
    /// first response instead of racing it.
    keyed: Arc<tokio::sync::Mutex<()>>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, job_parallelism: usize) -> Self {
        AppState {
            engine,
            jobs: Arc::new(Semaphore::new(job_parallelism.max(1))),
            keyed: Arc::new(tokio::sync::Mutex::new(())),
        }
    }

    /// Queues a task on the bounded job executor.
    fn spawn(&self, task: Task) {
        let engine = self.engine.clone();
        let permits = self.jobs.clone();
        tokio::spawn(async move {
            let Ok(_permit) = permits.acquire_owned().await else { return };
            let ids = task.job_ids();
            let outcome = tokio::task::spawn_blocking(move || engine.run(task)).await;
            match outcome {
                Ok(Ok(())) => {}
                Ok(Err(e)) => tracing::warn!(jobs = ?ids, error = %e, "generation job failed"),
                Err(e) => tracing::error!(jobs = ?ids, error = %e, "generation worker panicked"),
            }
        });
    }
}

/// The family the caller's bearer token belongs to.
#[derive(Debug, Clone)]
struct Family(String);

async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(500, "InternalError", e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    let bytes = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { bytes };
    parse_schema_only(bytes).map_err(ApiError::from)
}

// ---- ownership ------------------------------------------------------------

fn check_child(engine: &Engine, family: &str, child: &ChildId) -> Result<(), EngineError> {
    let store = engine.read();
    store.avatar(child)?;
    match store.family_of(child) {
        Some(f) if f == family => Ok(()),
        _ => Err(StoreError::ChildNotFound(child.clone()).into()),
    }
}

fn check_session(engine: &Engine, family: &str, session: &SessionId) -> Result<(), EngineError> {
    let child = engine.session(session)?.child_id;
    check_child(engine, family, &child).map_err(|_| storyecho_core::session::LoopError::SessionNotFound(session.clone()).into())
}

// ---- middleware -------------------------------------------------------------

fn public(method: &Method, path: &str) -> bool {
    path == "/health" || (method == Method::GET && path.starts_with("/assets/"))
}

async fn auth(State(state): State<AppState>, mut req: Request, next: Next) -> Response {
    if public(req.method(), req.uri().path()) {
        return next.run(req).await;
    }
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .map(str::to_string);
    let family = token.and_then(|t| state.engine.token_family(&t));
    match family {
        Some(f) => {
            req.extensions_mut().insert(Family(f));
            next.run(req).await
        }
        None => ApiError::new(401, "Unauthorized", "a valid bearer token is required").into_response(),
    }
}

/// Replays the stored response for a repeated `Idempotency-Key`.
async fn idempotency(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let key = req.headers().get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_string);
    let (Some(key), true) = (key, req.method() == Method::POST) else {
        return next.run(req).await;
    };
    let family = req.extensions().get::<Family>().map(|f| f.0.clone()).unwrap_or_default();
    let scoped = format!("{family}\u{1f}{}\u{1f}{key}", req.uri().path());
    let _serial = state.keyed.clone().lock_owned().await;
    if let Some(saved) = state.engine.idempotent(&scoped) {
        return replay(saved);
    }
    let response = next.run(req).await;
    let (parts, body) = response.into_parts();
    let bytes = match to_bytes(body, MAX_BODY_BYTES).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(500, "InternalError", e.to_string()).into_response(),
    };
    if !parts.status.is_server_error() {
        let saved = IdempotentResponse {
            status: parts.status.as_u16(),
            body: String::from_utf8_lossy(&bytes).into_owned(),
        };
        let engine = state.engine.clone();
        let stored = tokio::task::spawn_blocking(move || engine.remember(&scoped, saved)).await;
        if let Ok(Err(e)) = stored {
            tracing::warn!(error = %e, "could not remember an idempotent response");
        }
    }
    Response::from_parts(parts, Body::from(bytes))
}

fn replay(saved: IdempotentResponse) -> Response {
    let status = StatusCode::from_u16(saved.status).unwrap_or(StatusCode::OK);
    let mut resp = (status, saved.body).into_response();
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    resp.headers_mut().insert("idempotent-replay", HeaderValue::from_static("true"));
    resp
}

// ---- router -----------------------------------------------------------------

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/avatars", post(create_avatar))
        .route("/avatars/{id}", get(get_avatar))
        .route("/frameworks", post(create_framework))
        .route("/frameworks/{id}", get(get_framework))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/episode", get(get_episode))
        .route("/sessions/{id}/review", post(review))
        .route("/sessions/{id}/events", post(record_event))
        .route("/sessions/{id}/reading-finished", post(reading_finished))
        .route("/sessions/{id}/revisit", post(revisit))
        .route("/sessions/{id}/task", post(task_done))
        .route("/sessions/{id}/post-meal", post(post_meal))
        .route("/sessions/{id}/feedback", get(get_feedback))
        .route("/sessions/{id}/ending", get(get_ending))
        .route("/sessions/{id}/pages/{page}/speech", post(page_speech))
        .route("/children/{id}/library", get(library))
        .route("/jobs/{id}", get(get_job))
        .route("/assets", post(upload_asset))
        .route("/assets/{hash}", get(get_asset))
        .route("/assets/{hash}/transcript", post(transcript))
        .route("/validate/episode", post(validate_episode))
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .layer(axum::extract::DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Binds to `addr` and serves in the background. Returns the bound address.
pub async fn spawn(state: AppState, addr: &str) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = serve(state, listener, std::future::pending()).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok((local, handle))
}

/// A server on its own runtime, for callers that are not async themselves.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    runtime: tokio::runtime::Runtime,
}

impl BackgroundServer {
    pub fn start(state: AppState, addr: &str) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let (addr, _handle) = runtime.block_on(spawn(state, addr))?;
        Ok(BackgroundServer { addr, runtime })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(self) {
        self.runtime.shutdown_timeout(std::time::Duration::from_secs(5));
    }
}

// ---- handlers -----------------------------------------------------------------

async fn health(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.engine.health())
}

async fn create_avatar(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: NewAvatar = parse_json(&body)?;
    let avatar = blocking(&state, move |e| e.create_avatar(req, Some(&family))).await?;
    Ok((StatusCode::CREATED, Json(avatar)))
}

async fn get_avatar(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<Json<ChildAvatar>> {
    let id = AvatarId::new(id);
    Ok(Json(
        blocking(&state, move |e| {
            check_child(e, &family, &id)?;
            e.avatar(&id)
        })
        .await?,
    ))
}

async fn create_framework(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: NewFramework = parse_json(&body)?;
    let task = blocking(&state, move |e| {
        check_child(e, &family, &req.child_id)?;
        e.enqueue_framework(req)
    })
    .await?;
    let accepted = task.accepted();
    state.spawn(task);
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn get_framework(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<Json<StoryFramework>> {
    let id = FrameworkId::new(id);
    Ok(Json(
        blocking(&state, move |e| {
            let stored = e.read().framework(&id)?;
            check_child(e, &family, &stored.child_id)?;
            Ok(stored.framework)
        })
        .await?,
    ))
}

async fn create_session(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: NewSession = parse_json(&body)?;
    let session = blocking(&state, move |e| {
        check_child(e, &family, &req.child_id)
            .map_err(|_| storyecho_core::session::LoopError::ChildNotFound(req.child_id.clone()))?;
        e.create_session(req)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(session)))
}

macro_rules! session_call {
    ($state:expr, $family:expr, $id:expr, |$e:ident, $sid:ident| $body:expr) => {{
        let $sid = SessionId::new($id);
        let family = $family;
        blocking(&$state, move |$e| {
            check_session($e, &family, &$sid)?;
            $body
        })
        .await
    }};
}

async fn get_session(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(session_call!(state, family, id, |e, sid| e.session(&sid))?))
}

async fn generate(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: GenerateRequest = parse_json(&body)?;
    let task = session_call!(state, family, id, |e, sid| e.start_generation(&sid, req))?;
    let accepted = task.accepted();
    state.spawn(task);
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn get_episode(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(session_call!(state, family, id, |e, sid| e.episode(&sid))?))
}

async fn review(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: ReviewRequest = parse_json(&body)?;
    let decision = req.decision;
    let (session, task) = session_call!(state, family, id, |e, sid| e.review(&sid, req))?;
    let accepted = match task {
        Some(task) => {
            let a = task.accepted();
            state.spawn(task);
            a
        }
        None => Accepted { session_id: Some(session.session_id), jobs: Vec::new() },
    };
    let status = if decision == ReviewDecision::Approve { StatusCode::OK } else { StatusCode::ACCEPTED };
    Ok((status, Json(accepted)))
}

async fn record_event(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: NewInteraction = parse_json(&body)?;
    let event = session_call!(state, family, id, |e, sid| e.record_interaction(&sid, req))?;
    Ok((StatusCode::CREATED, Json(event)))
}

async fn reading_finished(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(session_call!(state, family, id, |e, sid| e.reading_finished(&sid))?))
}

async fn revisit(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(session_call!(state, family, id, |e, sid| e.revisit(&sid))?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDone {
    done: bool,
}

async fn task_done(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: TaskDone = parse_json(&body)?;
    Ok(Json(session_call!(state, family, id, |e, sid| e.set_task_done(&sid, req.done))?))
}

async fn post_meal(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: NewPostMealRecord = parse_json(&body)?;
    let (_, task) = session_call!(state, family, id, |e, sid| e.submit_post_meal(&sid, req))?;
    let accepted = task.accepted();
    state.spawn(task);
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn get_feedback(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(session_call!(state, family, id, |e, sid| e.feedback(&sid))?))
}

async fn get_ending(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(session_call!(state, family, id, |e, sid| e.ending(&sid))?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetRef {
    pub asset_id: AssetId,
}

async fn page_speech(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path((id, page)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let page = PageId::new(page);
    let asset_id = session_call!(state, family, id, |e, sid| e.page_speech(&sid, &page))?;
    Ok((StatusCode::CREATED, Json(AssetRef { asset_id })))
}

async fn library(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let id = ChildId::new(id);
    Ok(Json(
        blocking(&state, move |e| {
            check_child(e, &family, &id)?;
            e.library(&id)
        })
        .await?,
    ))
}

async fn get_job(
    State(state): State<AppState>,
    Extension(Family(family)): Extension<Family>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let id = JobId::new(id);
    Ok(Json(
        blocking(&state, move |e| {
            let job = e.job(&id)?;
            if let Some(s) = &job.session_id {
                check_session(e, &family, s)
                    .map_err(|_| StoreError::NotFound { kind: "job", id: id.to_string() })?;
            }
            Ok(job)
        })
        .await?,
    ))
}

async fn upload_asset(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    if body.is_empty() {
        return Err(ApiError::new(422, "InvariantViolation", "an asset needs a non-empty body"));
    }
    let media_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream")
        .to_string();
    let blob = MediaBlob { media_type, bytes: body.to_vec() };
    let asset_id = blocking(&state, move |e| e.put_asset(&blob)).await?;
    Ok((StatusCode::CREATED, Json(AssetRef { asset_id })))
}

async fn get_asset(State(state): State<AppState>, Path(hash): Path<String>) -> ApiResult<Response> {
    if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ApiError::not_found(format!("asset {hash}")));
    }
    let id = AssetId::new(hash);
    let blob = blocking(&state, move |e| e.asset(&id)).await?;
    let mut resp = blob.bytes.into_response();
    if let Ok(v) = HeaderValue::from_str(&blob.media_type) {
        resp.headers_mut().insert(header::CONTENT_TYPE, v);
    }
    resp.headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=31536000, immutable"));
    Ok(resp)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transcript {
    pub text: String,
}

async fn transcript(State(state): State<AppState>, Path(hash): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = AssetId::new(hash);
    let text = blocking(&state, move |e| e.transcribe(&id)).await?;
    Ok(Json(Transcript { text }))
}

/// 200 with the report when the episode passes, 422 with the same report
/// when it does not, 422 with a parse or schema code when it is not an
/// episode at all.
async fn validate_episode(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let report = state.engine.validate_episode_bytes(&body)?;
    if report.ok {
        Ok(Json(report))
    } else {
        Err(EngineError::Validation(report).into())
    }
}
