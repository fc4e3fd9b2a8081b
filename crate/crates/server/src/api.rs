//! HTTP routes over the content store, the city generator, the marker lab
//! and the session log.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use immercity_core::content::{Page, StoreError};
use immercity_core::cues::{interactive_targets, CueConfig, HighlightStyle, TargetMode};
use immercity_core::marker::{render_marker, reliability_score, MarkerDesign, MarkerReport, MIN_MAP_SIZE};
use immercity_core::nav::{path_to_building, Travel};
use immercity_core::{generate_city, CityScene, ContentKind, ContentStore, TravelMode};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::Config;
use crate::sessions::{CueEvent, Platform, SessionError, SessionStore};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_MARKER_SIZE: u32 = 4096;

pub struct AppState {
    pub config: Config,
    pub store: Arc<ContentStore>,
    pub sessions: Arc<SessionStore>,
    cities: Mutex<HashMap<u64, Arc<CityEntry>>>,
    markers: Mutex<HashMap<(MarkerDesign, u32, u64), Arc<MarkerEntry>>>,
}

struct CityEntry {
    scene: CityScene,
    json: String,
}

struct MarkerEntry {
    png: Vec<u8>,
    report: MarkerReport,
}

impl AppState {
    pub fn new(config: Config, store: Arc<ContentStore>, sessions: Arc<SessionStore>) -> Self {
        Self { config, store, sessions, cities: Mutex::default(), markers: Mutex::default() }
    }

    fn city(&self, seed: u64) -> Result<Arc<CityEntry>, ApiError> {
        if let Some(hit) = self.cities.lock().unwrap().get(&seed) {
            return Ok(hit.clone());
        }
        let scene = generate_city(seed, &self.config.layout).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let entry = Arc::new(CityEntry { json: scene.to_json(), scene });
        self.cities.lock().unwrap().insert(seed, entry.clone());
        Ok(entry)
    }

    fn marker(&self, design: MarkerDesign, size: u32, seed: u64) -> Result<Arc<MarkerEntry>, ApiError> {
        if let Some(hit) = self.markers.lock().unwrap().get(&(design, size, seed)) {
            return Ok(hit.clone());
        }
        let city = self.city(seed)?;
        let raster = render_marker(&city.scene, size, design).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let png = raster.to_png().map_err(|e| ApiError::internal(e.to_string()))?;
        let entry = Arc::new(MarkerEntry { png, report: reliability_score(&raster, &self.config.marker) });
        self.markers.lock().unwrap().insert((design, size, seed), entry.clone());
        Ok(entry)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    id: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), id: None }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    fn not_found(message: impl Into<String>, id: &str) -> Self {
        Self { id: Some(id.to_string()), ..Self::new(StatusCode::NOT_FOUND, message) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(id) = self.id {
            body["id"] = Value::String(id);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::UnknownItem(id) | StoreError::UnknownDevice(id) => ApiError::not_found(message, &id),
            StoreError::NotADevice(id) => Self { id: Some(id), ..ApiError::unprocessable(message) },
            StoreError::InvalidComparison(_) | StoreError::InvalidItem(_) | StoreError::InvalidAttribute(_) => {
                ApiError::unprocessable(message)
            }
            StoreError::InvalidPage { .. } => ApiError::bad_request(message),
            StoreError::Corrupt { .. } | StoreError::Io(_) => ApiError::internal(message),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::UnknownSession(id) => ApiError::not_found(message, &id),
            SessionError::NonMonotone { .. } => ApiError::new(StatusCode::CONFLICT, message),
            SessionError::WrongSession { .. } => ApiError::bad_request(message),
            SessionError::Corrupt { .. } | SessionError::Io(_) => ApiError::internal(message),
        }
    }
}

type Params = Query<HashMap<String, String>>;
type ApiResult<T> = Result<T, ApiError>;

fn param<T: FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    match q.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("malformed {key}: {raw:?}"))),
    }
}

fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

fn json_text(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut app = Router::new()
        .route("/api/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/api/city", get(city))
        .route("/api/path", get(travel))
        .route("/api/targets", get(targets))
        .route("/api/collections/{kind}", get(collection))
        .route("/api/items/{id}", get(item))
        .route("/api/devices/compare", get(compare))
        .route("/api/bookmarks", get(list_bookmarks).post(toggle_bookmark))
        .route("/api/marker", get(marker_image))
        .route("/api/marker/report", get(marker_report))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/events", post(post_events))
        .with_state(state.clone());
    if let Some(origin) = &state.config.cors_origin {
        let allow = if origin == "*" {
            AllowOrigin::any()
        } else {
            match HeaderValue::from_str(origin) {
                Ok(v) => AllowOrigin::exact(v),
                Err(_) => {
                    tracing::warn!(%origin, "ignoring unusable cors origin");
                    return app;
                }
            }
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app
}

fn seed_of(state: &AppState, q: &HashMap<String, String>) -> ApiResult<u64> {
    Ok(param(q, "seed")?.unwrap_or(state.config.default_seed))
}

async fn city(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult<Response> {
    let seed = seed_of(&state, &q)?;
    let entry = state.city(seed)?;
    let etag = format!("\"{seed}-{}\"", state.config.layout.digest());
    let mut response = json_text(entry.json.clone());
    if let Ok(v) = HeaderValue::from_str(&etag) {
        response.headers_mut().insert(header::ETAG, v);
    }
    Ok(response)
}

async fn travel(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult<Json<Travel>> {
    let entry = state.city(seed_of(&state, &q)?)?;
    let scene = &entry.scene;
    let target = q.get("building").ok_or_else(|| ApiError::bad_request("missing building"))?;
    let building_id = match scene.building(target) {
        Some(b) => b.id.clone(),
        None => ContentKind::from_str(target)
            .ok()
            .and_then(|k| scene.key_index.get(&k).cloned())
            .ok_or_else(|| ApiError::not_found(format!("unknown building {target}"), target))?,
    };
    let mode = match q.get("mode").map(String::as_str) {
        None | Some("path_follow") => TravelMode::PathFollow,
        Some("teleport") => TravelMode::Teleport,
        Some(other) => return Err(ApiError::bad_request(format!("unknown mode {other:?}"))),
    };
    let from = match (param::<f64>(&q, "x")?, param::<f64>(&q, "z")?) {
        (Some(x), Some(z)) if x.is_finite() && z.is_finite() => [x, z],
        (None, None) => scene.spawn.position,
        _ => return Err(ApiError::bad_request("x and z must be given together as finite numbers")),
    };
    path_to_building(scene, from, &building_id, mode)
        .map(Json)
        .map_err(|e| ApiError::unprocessable(e.to_string()))
}

fn enum_param<T: for<'de> Deserialize<'de>>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    q.get(key)
        .map(|raw| {
            serde_json::from_value(Value::String(raw.clone())).map_err(|_| ApiError::bad_request(format!("malformed {key}: {raw:?}")))
        })
        .transpose()
}

async fn targets(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult<Response> {
    let entry = state.city(seed_of(&state, &q)?)?;
    let cues = CueConfig {
        target_mode: enum_param::<TargetMode>(&q, "target_mode")?.unwrap_or(state.config.cues.target_mode),
        highlight_style: enum_param::<HighlightStyle>(&q, "highlight_style")?.unwrap_or(state.config.cues.highlight_style),
        ..state.config.cues
    };
    let list = interactive_targets(&entry.scene, &cues).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(Json(list).into_response())
}

fn page_of(q: &HashMap<String, String>) -> ApiResult<Page> {
    let index = param(q, "page")?.unwrap_or(0);
    let size = param(q, "size")?.unwrap_or(DEFAULT_PAGE_SIZE);
    Ok(Page::new(index, size)?)
}

async fn collection(State(state): State<Arc<AppState>>, Path(kind): Path<String>, Query(q): Params) -> ApiResult<Json<Value>> {
    let kind = ContentKind::from_str(&kind).map_err(|_| ApiError::not_found(format!("unknown collection {kind}"), &kind))?;
    let page = page_of(&q)?;
    let (items, total) = if kind == ContentKind::Bookmark {
        let user = q.get("user").ok_or_else(|| ApiError::bad_request("the bookmark collection needs a user"))?;
        (state.store.bookmarked_items(user, page), state.store.list_bookmarks(user).len())
    } else {
        (state.store.list_collection(kind, page), state.store.collection_len(kind))
    };
    Ok(Json(json!({
        "kind": kind,
        "building": kind.building_name(),
        "page": page.index(),
        "size": page.size(),
        "total": total,
        "items": items,
    })))
}

async fn item(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let item = state.store.get_item(&id).ok_or_else(|| ApiError::not_found(format!("unknown item {id}"), &id))?;
    let mut body = serde_json::to_value(item).map_err(|e| ApiError::internal(e.to_string()))?;
    if let Some(spec) = state.store.device_spec(&id) {
        body["attributes"] = serde_json::to_value(spec.attributes).map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok(Json(body))
}

async fn compare(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult<Response> {
    let ids: Vec<String> = q
        .get("ids")
        .map(|raw| raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    let table = state.store.compare_devices(&ids)?;
    Ok(Json(table).into_response())
}

#[derive(Deserialize)]
struct BookmarkRequest {
    user_id: String,
    item_id: String,
}

async fn toggle_bookmark(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: BookmarkRequest = json_body(&body)?;
    if req.user_id.trim().is_empty() {
        return Err(ApiError::bad_request("empty user_id"));
    }
    let on = state.store.toggle_bookmark(&req.user_id, &req.item_id)?;
    Ok(Json(json!({ "user_id": req.user_id, "item_id": req.item_id, "state": on })))
}

async fn list_bookmarks(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult<Response> {
    let user = q.get("user").ok_or_else(|| ApiError::bad_request("missing user"))?;
    let page = page_of(&q)?;
    let all = state.store.list_bookmarks(user);
    let total = all.len();
    let items: Vec<_> = all.into_iter().skip(page.index() * page.size()).take(page.size()).collect();
    Ok(Json(json!({ "user_id": user, "page": page.index(), "size": page.size(), "total": total, "items": items })).into_response())
}

fn marker_params(state: &AppState, q: &HashMap<String, String>) -> ApiResult<(MarkerDesign, u32, u64)> {
    let design = match q.get("style").map(String::as_str) {
        None | Some("final") => MarkerDesign::Final,
        Some("plan") => MarkerDesign::Plan,
        Some(other) => return Err(ApiError::bad_request(format!("style must be plan or final, got {other:?}"))),
    };
    let size = param(q, "size")?.unwrap_or(state.config.marker_size);
    if !(MIN_MAP_SIZE..=MAX_MARKER_SIZE).contains(&size) {
        return Err(ApiError::bad_request(format!("size must be in {MIN_MAP_SIZE}..={MAX_MARKER_SIZE}, got {size}")));
    }
    Ok((design, size, seed_of(state, q)?))
}

async fn marker_entry(state: Arc<AppState>, q: HashMap<String, String>) -> ApiResult<Arc<MarkerEntry>> {
    let (design, size, seed) = marker_params(&state, &q)?;
    tokio::task::spawn_blocking(move || state.marker(design, size, seed))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn marker_image(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult<Response> {
    let entry = marker_entry(state, q).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], entry.png.clone()).into_response())
}

async fn marker_report(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult<Json<MarkerReport>> {
    Ok(Json(marker_entry(state, q).await?.report.clone()))
}

#[derive(Deserialize)]
struct SessionRequest {
    participant_index: u64,
    platform: Platform,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: SessionRequest = json_body(&body)?;
    let session = state.sessions.create(req.participant_index, req.platform, &state.config.cues)?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.sessions.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown session {id}"), &id))?;
    Ok(Json(session).into_response())
}

async fn post_events(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    if state.sessions.get(&id).is_none() {
        return Err(ApiError::not_found(format!("unknown session {id}"), &id));
    }
    let events: Vec<CueEvent> = json_body(&body)?;
    state.sessions.append_events(&id, events)?;
    Ok(StatusCode::NO_CONTENT)
}
