//! HTTP API over the enhancement pipeline: uploads, sessions, parse
//! previews, edits and their history.

mod error;
pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lumactl_core::image::{decode_image, encode_png, max_channel};
use lumactl_core::mask::{Mask, SeedPoint};
use lumactl_core::pipeline::{enhance, parse_instruction, EnhanceOptions, EnhanceRequest, MaskSource, Mode};
use lumactl_core::prompt::Scope;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::{ApiError, ErrorBody};
pub use store::{HistoryEntry, Session, Store};

/// What to do with an edit that arrives while the session is busy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BusyPolicy {
    #[default]
    Queue,
    Reject,
}

impl FromStr for BusyPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "queue" => Ok(BusyPolicy::Queue),
            "reject" => Ok(BusyPolicy::Reject),
            _ => Err(format!("expected queue or reject, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub busy_policy: BusyPolicy,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
    pub max_upload_bytes: usize,
    pub max_image_side: usize,
    /// Base options for every edit; seed, ratio override and mask come from the request.
    pub options: EnhanceOptions,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            busy_policy: BusyPolicy::Queue,
            cors_origins: Vec::new(),
            max_upload_bytes: 16 << 20,
            max_image_side: 4096,
            options: EnhanceOptions::default(),
        }
    }
}

type SessionCell = Arc<tokio::sync::Mutex<Session>>;

pub struct AppState {
    config: ServiceConfig,
    store: Store,
    sessions: Mutex<HashMap<String, SessionCell>>,
    /// result id to stored image id
    results: Mutex<HashMap<String, String>>,
}

impl AppState {
    /// Opens the data directory and reloads every journaled session.
    pub fn open(config: ServiceConfig) -> std::io::Result<Arc<Self>> {
        let store = Store::open(&config.data_dir)?;
        let mut sessions = HashMap::new();
        let mut results = HashMap::new();
        for s in store.load_sessions()? {
            for e in &s.history {
                results.insert(e.result_id.clone(), e.image_id.clone());
            }
            sessions.insert(s.id.clone(), Arc::new(tokio::sync::Mutex::new(s)));
        }
        Ok(Arc::new(Self { config, store, sessions: Mutex::new(sessions), results: Mutex::new(results) }))
    }

    fn session(&self, id: &str) -> Result<SessionCell, ApiError> {
        self.sessions.lock().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }

    fn image(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        self.store.image(id)?.ok_or_else(|| ApiError::not_found("image", id))
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn new_token() -> String {
    hex::encode(rand::random::<[u8; 16]>())
}

fn json_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    let origin = if state.config.cors_origins.is_empty() {
        AllowOrigin::from(Any)
    } else {
        AllowOrigin::list(state.config.cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/images", post(upload_image))
        .route("/v1/images/{id}", get(get_image))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/parse", post(parse_preview))
        .route("/v1/sessions/{id}/enhance", post(enhance_session))
        .route("/v1/sessions/{id}/history", get(history))
        .route("/v1/results/{id}/image", get(result_image))
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors)
        .with_state(state)
}

/// Builds the router over `config.data_dir`.
pub fn app(config: ServiceConfig) -> std::io::Result<Router> {
    Ok(router(AppState::open(config)?))
}

pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let app = app(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn upload_image(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let img = decode_image(&body).map_err(|e| ApiError::bad_request("bad_image", e.to_string()))?;
    let (h, w) = img.dims();
    let cap = st.config.max_image_side;
    if h.max(w) > cap {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_large",
            format!("image is {h}x{w}, above the {cap} px cap"),
        ));
    }
    let id = st.store.put_image(&encode_png(&img))?;
    Ok((StatusCode::CREATED, Json(json!({ "image_id": id, "width": w, "height": h }))).into_response())
}

async fn get_image(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(png_response(st.image(&id)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    image_id: String,
}

#[derive(Serialize)]
struct SessionView<'a> {
    session_id: &'a str,
    base_image_id: &'a str,
    current_image_id: &'a str,
    edits: usize,
    created_ms: u64,
    updated_ms: u64,
}

impl<'a> From<&'a Session> for SessionView<'a> {
    fn from(s: &'a Session) -> Self {
        Self {
            session_id: &s.id,
            base_image_id: &s.base_image_id,
            current_image_id: s.current_image_id(),
            edits: s.history.len(),
            created_ms: s.created_ms,
            updated_ms: s.updated_ms,
        }
    }
}

async fn create_session(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = json_body(&body)?;
    st.image(&req.image_id)?;
    let t = now_ms();
    let s = Session { id: new_token(), base_image_id: req.image_id, created_ms: t, updated_ms: t, history: Vec::new() };
    st.store.save_session(&s)?;
    let view = serde_json::to_value(SessionView::from(&s)).map_err(|e| ApiError::internal(e.to_string()))?;
    st.sessions.lock().unwrap().insert(s.id.clone(), Arc::new(tokio::sync::Mutex::new(s)));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let cell = st.session(&id)?;
    let s = cell.lock().await;
    Ok(Json(SessionView::from(&*s)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParseBody {
    prompt: String,
    #[serde(default)]
    ratio_override: Option<f64>,
}

async fn parse_preview(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    st.session(&id)?;
    let req: ParseBody = json_body(&body)?;
    let opts = EnhanceOptions { ratio_override: req.ratio_override, ..st.config.options.clone() };
    let instruction = parse_instruction(&req.prompt, &opts)?;
    Ok(Json(json!({ "instruction": instruction })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnhanceBody {
    prompt: String,
    #[serde(default)]
    mode: Option<Mode>,
    #[serde(default)]
    seed_point: Option<SeedPoint>,
    #[serde(default)]
    mask_id: Option<String>,
    #[serde(default)]
    ratio_override: Option<f64>,
    /// Only for replaying a recorded edit; fresh edits get a server-side seed.
    #[serde(default)]
    seed: Option<u64>,
}

async fn enhance_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let cell = st.session(&id)?;
    let req: EnhanceBody = json_body(&body)?;
    let mut session = match st.config.busy_policy {
        BusyPolicy::Queue => cell.lock_owned().await,
        BusyPolicy::Reject => cell
            .try_lock_owned()
            .map_err(|_| ApiError::new(StatusCode::CONFLICT, "busy", "an edit is already running for this session"))?,
    };

    let mode = req.mode.unwrap_or_default();
    let options = EnhanceOptions {
        ratio_override: req.ratio_override,
        seed: req.seed.unwrap_or_else(|| u64::from(rand::random::<u32>())),
        ..st.config.options.clone()
    };
    let instruction = parse_instruction(&req.prompt, &options)?;
    let source_image_id = session.current_image_id().to_string();
    let image = decode_image(&st.image(&source_image_id)?).map_err(|e| ApiError::internal(e.to_string()))?;
    let mask_source = match (&req.mask_id, req.seed_point) {
        (Some(mid), _) => {
            let m = decode_image(&st.image(mid)?).map_err(|e| ApiError::bad_request("bad_mask", e.to_string()))?;
            if m.dims() != image.dims() {
                return Err(ApiError::bad_request(
                    "bad_mask",
                    format!("mask is {:?}, image is {:?}", m.dims(), image.dims()),
                ));
            }
            MaskSource::Provided(Mask::threshold(&max_channel(&m)))
        }
        (None, Some(p)) => MaskSource::Heuristic(p),
        (None, None) if instruction.scope == Scope::Global => MaskSource::Full,
        (None, None) => {
            return Err(ApiError::bad_request("mask_required", "region and background edits need seed_point or mask_id"))
        }
    };

    let request = EnhanceRequest { image, prompt: req.prompt.clone(), mode, mask_source, options };
    let (out, report) = tokio::task::spawn_blocking(move || enhance(&request))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;

    let image_id = st.store.put_image(&encode_png(&out))?;
    let result_id = new_token();
    let t = now_ms();
    let entry = HistoryEntry {
        index: session.history.len(),
        result_id: result_id.clone(),
        source_image_id,
        image_id: image_id.clone(),
        prompt: req.prompt,
        mode,
        seed_point: req.seed_point,
        mask_id: req.mask_id,
        ratio_override: req.ratio_override,
        instruction: report.instruction.clone(),
        report: report.clone(),
        created_ms: t,
    };
    session.history.push(entry);
    session.updated_ms = t;
    if let Err(e) = st.store.save_session(&session) {
        session.history.pop();
        return Err(e.into());
    }
    st.results.lock().unwrap().insert(result_id.clone(), image_id.clone());
    Ok(Json(json!({
        "result_id": result_id,
        "image_id": image_id,
        "instruction": report.instruction,
        "report": report,
    }))
    .into_response())
}

async fn history(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let cell = st.session(&id)?;
    let s = cell.lock().await;
    Ok(Json(&s.history).into_response())
}

async fn result_image(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let image_id = st.results.lock().unwrap().get(&id).cloned().ok_or_else(|| ApiError::not_found("result", &id))?;
    Ok(png_response(st.image(&image_id)?))
}
