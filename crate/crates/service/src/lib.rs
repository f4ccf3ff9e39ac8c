//! HTTP JSON API over stored documents.
//!
//! Responses under `/documents/{id}` use document-local ids (`s3`, `c1`).
//! Routes outside that prefix take global ids of the form `{doc}.{local}`,
//! e.g. `POST /suggestions/d1.s3/verify`.
//!
//! Each document has one writer at a time. Provider calls run with the
//! document unlocked, so a slow chat answer does not block typing; calls for
//! the same component of the same document are queued behind each other.

pub mod config;

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex as StdMutex};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;

use redline_core::provider::OutputStats;
use redline_core::session::{MarkerPatch, Mode, Step, DEFAULT_SAMPLE_PERIOD_MS};
use redline_core::store::StoreError;
use redline_core::suggestion::{SuggestionError, UnderlineStyle};
use redline_core::verify::{self, VerifyError};
use redline_core::{
    BrainstormId, Command, CommentId, Component, ExecutableEdit, FileStore, Label, MarkerId, Outcome, PerturbMode,
    PromptKind, Provider, ProviderError, Session, SessionError, Settings, Status, SuggestionId, TemplateSet,
    Timestamp, VerificationId,
};

pub use config::Config;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

type Entry = Arc<Mutex<Session>>;

pub struct AppState {
    store: FileStore,
    provider: Arc<dyn Provider>,
    templates: TemplateSet,
    config: Config,
    clock: Clock,
    docs: StdMutex<HashMap<String, Entry>>,
    lanes: StdMutex<HashMap<(String, PromptKind), Arc<Mutex<()>>>>,
    creating: Mutex<()>,
    /// Version each document had at its last background marker pass.
    refreshed: StdMutex<HashMap<String, u64>>,
    pub stats: OutputStats,
}

impl AppState {
    pub fn new(store: FileStore, provider: Arc<dyn Provider>, templates: TemplateSet, config: Config) -> Arc<Self> {
        Self::with_clock(store, provider, templates, config, Arc::new(Timestamp::now))
    }

    pub fn with_clock(
        store: FileStore,
        provider: Arc<dyn Provider>,
        templates: TemplateSet,
        config: Config,
        clock: Clock,
    ) -> Arc<Self> {
        Arc::new(AppState {
            store,
            provider,
            templates,
            config,
            clock,
            docs: StdMutex::default(),
            lanes: StdMutex::default(),
            creating: Mutex::default(),
            refreshed: StdMutex::default(),
            stats: OutputStats::default(),
        })
    }

    pub fn store(&self) -> &FileStore {
        &self.store
    }

    fn entry(&self, doc: &str) -> Result<Entry, ApiError> {
        let mut docs = self.docs.lock().expect("doc table poisoned");
        if let Some(e) = docs.get(doc) {
            return Ok(e.clone());
        }
        let session = self.store.load(doc)?;
        let e = Arc::new(Mutex::new(session));
        docs.insert(doc.to_owned(), e.clone());
        Ok(e)
    }

    fn lane(&self, doc: &str, kind: PromptKind) -> Arc<Mutex<()>> {
        let mut lanes = self.lanes.lock().expect("lane table poisoned");
        lanes.entry((doc.to_owned(), kind)).or_default().clone()
    }

    fn persist(&self, doc: &str, session: &mut Session) -> Result<(), ApiError> {
        if let Err(e) = self.store.save(doc, session) {
            // the disk copy is now the reference; reload it on next use
            self.docs.lock().expect("doc table poisoned").remove(doc);
            return Err(e.into());
        }
        Ok(())
    }

    /// Run one command against a document and persist what it emitted.
    pub async fn run(&self, doc: &str, cmd: Command) -> Result<Outcome, ApiError> {
        let now = (self.clock)();
        let lane = cmd.provider_lane().map(|k| self.lane(doc, k));
        let _queued = match &lane {
            Some(l) => Some(l.lock().await),
            None => None,
        };
        let entry = self.entry(doc)?;
        let mut step = {
            let mut s = entry.lock().await;
            let r = s.begin(cmd, &self.templates, now);
            self.persist(doc, &mut s)?;
            r?
        };
        loop {
            match step {
                Step::Done(outcome) => return Ok(outcome),
                Step::Call(call) => {
                    let provider = self.provider.clone();
                    let prompt = call.prompt.clone();
                    let raw = tokio::task::spawn_blocking(move || provider.complete(&prompt))
                        .await
                        .map_err(|e| ApiError::internal(e.to_string()))?;
                    self.stats.record(&raw);
                    let mut s = entry.lock().await;
                    let r = s.finish(call, raw, &self.templates, now);
                    self.persist(doc, &mut s)?;
                    step = r?;
                }
            }
        }
    }

    /// Read a document without mutating it.
    pub async fn read<T>(&self, doc: &str, f: impl FnOnce(&Session) -> T) -> Result<T, ApiError> {
        let entry = self.entry(doc)?;
        let s = entry.lock().await;
        Ok(f(&s))
    }

    pub async fn create(&self, template: String, settings: Settings) -> Result<String, ApiError> {
        let _one_at_a_time = self.creating.lock().await;
        let id = self.store.create_id()?;
        let mut s = Session::create(template, settings, (self.clock)());
        self.store.save(&id, &mut s)?;
        self.docs
            .lock()
            .expect("doc table poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(s)));
        Ok(id)
    }

    /// Flush due snapshots and refresh markers on documents edited since the
    /// last pass.
    pub async fn background_pass(&self) {
        let ids: Vec<String> = self.docs.lock().expect("doc table poisoned").keys().cloned().collect();
        for id in ids {
            if let Err(e) = self.run(&id, Command::Tick).await {
                log::warn!("tick on {id}: {}", e.message());
                continue;
            }
            let Ok((version, mode, has_markers)) = self
                .read(&id, |s| {
                    (
                        s.manager.doc.version_id,
                        s.mode,
                        s.markers.values().any(|m| m.visible),
                    )
                })
                .await
            else {
                continue;
            };
            let last = self.refreshed.lock().expect("refresh table poisoned").get(&id).copied();
            if mode != Mode::Edit || !has_markers || last == Some(version) {
                continue;
            }
            match self.run(&id, Command::RefreshMarkers { marker: None }).await {
                Ok(_) => {
                    self.refreshed
                        .lock()
                        .expect("refresh table poisoned")
                        .insert(id, version);
                }
                Err(e) => log::warn!("marker refresh on {id}: {}", e.message()),
            }
        }
    }
}

/// Run [`AppState::background_pass`] every `config.marker_period`.
pub fn spawn_background(state: Arc<AppState>) -> Option<tokio::task::JoinHandle<()>> {
    let period = state.config.marker_period;
    if period.is_zero() {
        return None;
    }
    Some(tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        interval.tick().await;
        loop {
            interval.tick().await;
            state.background_pass().await;
        }
    }))
}

// ---- errors -------------------------------------------------------------

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"code": code, "error": message.into()}),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.body[key] = value.into();
        self
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }

    pub fn message(&self) -> &str {
        self.body["error"].as_str().unwrap_or_default()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn status_name(status: Status) -> Value {
    serde_json::to_value(status).unwrap_or_default()
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use StatusCode as C;
        let msg = e.to_string();
        match e {
            SessionError::Suggestion(s) => match s {
                SuggestionError::NotFound(_) => Self::new(C::NOT_FOUND, "not_found", msg),
                SuggestionError::NotPending { id, status } => Self::new(C::CONFLICT, "not_pending", msg)
                    .with("suggestion", id.to_string())
                    .with("status", status_name(status)),
                SuggestionError::StaleSuggestion(id) => Self::new(C::CONFLICT, "stale_suggestion", msg)
                    .with("suggestion", id.to_string())
                    .with("status", status_name(Status::ImplicitlyDismissed)),
                SuggestionError::RangeOutOfBounds { .. } => Self::new(C::BAD_REQUEST, "range_out_of_bounds", msg),
                SuggestionError::PasteRejected { .. } => Self::new(C::BAD_REQUEST, "paste_rejected", msg),
                SuggestionError::Provenance(_) => Self::internal(msg),
            },
            SessionError::Verify(v) => match v {
                VerifyError::NotVerifiable(_) => Self::new(C::CONFLICT, "not_verifiable", msg),
                _ => Self::new(C::BAD_REQUEST, "invalid_verification", msg),
            },
            SessionError::Provider(p) => {
                let status = match p {
                    ProviderError::TransportFailure(_) => C::SERVICE_UNAVAILABLE,
                    _ => C::BAD_GATEWAY,
                };
                let code = match p {
                    ProviderError::TransportFailure(_) => "transport_failure",
                    _ => "invalid_provider_output",
                };
                Self::new(status, code, p.user_message()).with("detail", msg)
            }
            SessionError::Prompt(_) | SessionError::Replay(_) => Self::internal(msg),
            SessionError::ReadOnly => Self::new(C::CONFLICT, "read_only", msg),
            SessionError::NotFound(_) => Self::new(C::NOT_FOUND, "not_found", msg),
            SessionError::ThreadResolved(_) => Self::new(C::CONFLICT, "thread_resolved", msg),
            SessionError::BrainstormClosed(_) => Self::new(C::CONFLICT, "brainstorm_closed", msg),
            SessionError::DuplicateMarker(_) => Self::new(C::CONFLICT, "duplicate_marker", msg),
            SessionError::OptionOutOfRange { .. }
            | SessionError::NotBracketed { .. }
            | SessionError::BadSelection { .. } => Self::new(C::BAD_REQUEST, "invalid_range", msg),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", msg),
            StoreError::InvalidId(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_id", msg),
            StoreError::Exists(_) => Self::new(StatusCode::CONFLICT, "exists", msg),
            StoreError::Io(_) => Self::internal(msg),
            StoreError::StoreCorrupt { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store_corrupt", msg),
        }
    }
}

fn parse_local<T: FromStr>(s: &str) -> Result<T, ApiError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| ApiError::bad_request(e.to_string()))
}

/// Split `d1.s3` into the document and its local id.
fn parse_global<T: FromStr>(s: &str) -> Result<(String, T), ApiError>
where
    T::Err: std::fmt::Display,
{
    let (doc, local) = s
        .rsplit_once('.')
        .ok_or_else(|| ApiError::bad_request(format!("expected <document>.<id>, got {s:?}")))?;
    Ok((doc.to_owned(), parse_local(local)?))
}

fn parse_label(s: &str) -> Result<Label, ApiError> {
    s.parse().map_err(|e: VerifyError| ApiError::bad_request(e.to_string()))
}

// ---- routes -------------------------------------------------------------

type Shared = State<Arc<AppState>>;
type ApiResult = Result<Response, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/documents", get(list_documents).post(create_document))
        .route("/documents/{id}", get(get_document))
        .route("/documents/{id}/content", axum::routing::put(set_content))
        .route("/documents/{id}/manual-edit", post(manual_edit))
        .route("/documents/{id}/suggestions", get(list_suggestions).post(submit))
        .route("/documents/{id}/suggestions/{sid}/accept", post(accept))
        .route("/documents/{id}/suggestions/{sid}/dismiss", post(dismiss))
        .route("/documents/{id}/accept-all", post(accept_all))
        .route("/documents/{id}/dismiss-all", post(dismiss_all))
        .route("/documents/{id}/chat", post(chat))
        .route("/documents/{id}/comments", post(open_comment))
        .route("/comments/{cid}/message", post(comment_message))
        .route("/comments/{cid}/resolve", post(resolve_comment))
        .route("/documents/{id}/brainstorm", post(brainstorm))
        .route("/documents/{id}/bracket", post(bracket))
        .route("/brainstorms/{bid}/accept", post(choose_option))
        .route("/brainstorms/{bid}/close", post(close_brainstorm))
        .route("/documents/{id}/markers", get(list_markers).post(create_marker))
        .route("/documents/{id}/markers/refresh", post(refresh_all_markers))
        .route("/documents/{id}/markers/{mid}", patch(update_marker).delete(delete_marker))
        .route("/markers/{mid}/refresh", post(refresh_marker))
        .route("/suggestions/{sid}/verify", post(verify_suggestion))
        .route("/suggestions/{sid}/label", post(label_suggestion))
        .route("/verifications/{vid}", get(get_verification))
        .route("/verifications/{vid}/visit", post(visit))
        .route("/verifications/{vid}/label", post(label))
        .route("/documents/{id}/mode", post(switch_mode))
        .route("/documents/{id}/audit", get(audit))
        .route("/documents/{id}/audit/close", post(close_audit))
        .route("/documents/{id}/metrics", get(metrics))
        .route("/documents/{id}/events", get(events))
        .route("/documents/{id}/edit-distance", get(edit_distance))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(api)
        .with_state(state)
}

async fn require_token(State(st): Shared, req: Request, next: Next) -> Response {
    if let Some(token) = &st.config.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|given| given == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

fn outcome(doc: &str, o: Outcome) -> Response {
    let mut v = serde_json::to_value(o).expect("outcome serializes");
    v["document"] = doc.into();
    Json(v).into_response()
}

async fn health(State(st): Shared) -> Response {
    Json(json!({"status": "ok", "invalid_provider_output_rate": st.stats.invalid_rate()})).into_response()
}

async fn list_documents(State(st): Shared) -> ApiResult {
    Ok(Json(json!({"documents": st.store.list()?})).into_response())
}

#[derive(Deserialize)]
struct CreateBody {
    template: String,
    #[serde(default)]
    study: Option<bool>,
    #[serde(default)]
    perturb: Option<PerturbMode>,
}

async fn create_document(State(st): Shared, Json(b): Json<CreateBody>) -> ApiResult {
    let settings = Settings {
        study: b.study.unwrap_or(st.config.study),
        perturb: b.perturb.unwrap_or(st.config.perturb),
        snapshot_debounce_ms: st.config.snapshot_debounce_ms,
    };
    let id = st.create(b.template, settings).await?;
    let body = st
        .read(&id, |s| json!({"id": id, "content": s.content(), "version_id": s.manager.doc.version_id}))
        .await?;
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_document(State(st): Shared, Path(id): Path<String>) -> ApiResult {
    let now = (st.clock)();
    let body = st
        .read(&id, |s| {
            json!({
                "id": id,
                "content": s.content(),
                "version_id": s.manager.doc.version_id,
                "mode": s.mode,
                "settings": s.settings,
                "markers": s.markers.values().collect::<Vec<_>>(),
                "chat": s.chat,
                "comments": s.comments.values().collect::<Vec<_>>(),
                "brainstorms": s.brainstorms.values().collect::<Vec<_>>(),
                "warning": s.time_warning(now),
            })
        })
        .await?;
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct ContentBody {
    content: String,
}

async fn set_content(State(st): Shared, Path(id): Path<String>, Json(b): Json<ContentBody>) -> ApiResult {
    let o = st.run(&id, Command::SetContent { content: b.content }).await?;
    Ok(outcome(&id, o))
}

#[derive(Deserialize)]
struct Span {
    start: usize,
    end: usize,
}

#[derive(Deserialize)]
struct ManualEditBody {
    range: Span,
    replacement: String,
}

async fn manual_edit(State(st): Shared, Path(id): Path<String>, Json(b): Json<ManualEditBody>) -> ApiResult {
    let cmd = Command::ManualEdit {
        start: b.range.start,
        end: b.range.end,
        replacement: b.replacement,
    };
    Ok(outcome(&id, st.run(&id, cmd).await?))
}

#[derive(Deserialize)]
struct SuggestionFilter {
    status: Option<Status>,
}

async fn list_suggestions(
    State(st): Shared,
    Path(id): Path<String>,
    Query(f): Query<SuggestionFilter>,
) -> ApiResult {
    let list = st
        .read(&id, |s| {
            s.manager
                .records()
                .filter(|r| f.status.is_none_or(|want| r.status == want))
                .map(|r| {
                    let mut v = serde_json::to_value(r).expect("record serializes");
                    v["warning"] = verify::warn_check(r).map(|w| w.text).into();
                    v["actions"] = serde_json::to_value(verify::menu_actions(r)).expect("actions serialize");
                    v
                })
                .collect::<Vec<_>>()
        })
        .await?;
    Ok(Json(json!({"document": id, "suggestions": list})).into_response())
}

#[derive(Deserialize)]
struct SubmitBody {
    edits: Value,
    #[serde(default)]
    inaccurate: Vec<usize>,
}

async fn submit(State(st): Shared, Path(id): Path<String>, Json(b): Json<SubmitBody>) -> ApiResult {
    let raw = serde_json::to_vec(&b.edits).expect("value serializes");
    let edits: Vec<ExecutableEdit> = redline_core::edit::parse_edit_payload(&raw)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "schema_violation", e.to_string()))?;
    let cmd = Command::Submit {
        edits,
        inaccurate: b.inaccurate,
    };
    Ok(outcome(&id, st.run(&id, cmd).await?))
}

async fn accept(State(st): Shared, Path((id, sid)): Path<(String, String)>) -> ApiResult {
    let suggestion: SuggestionId = parse_local(&sid)?;
    Ok(outcome(&id, st.run(&id, Command::Accept { suggestion }).await?))
}

async fn dismiss(State(st): Shared, Path((id, sid)): Path<(String, String)>) -> ApiResult {
    let suggestion: SuggestionId = parse_local(&sid)?;
    Ok(outcome(&id, st.run(&id, Command::Dismiss { suggestion }).await?))
}

#[derive(Deserialize, Default)]
struct ComponentBody {
    #[serde(default)]
    component: Option<Component>,
}

async fn accept_all(State(st): Shared, Path(id): Path<String>, b: Option<Json<ComponentBody>>) -> ApiResult {
    let component = b.unwrap_or_default().0.component;
    Ok(outcome(&id, st.run(&id, Command::AcceptAll { component }).await?))
}

async fn dismiss_all(State(st): Shared, Path(id): Path<String>, b: Option<Json<ComponentBody>>) -> ApiResult {
    let component = b.unwrap_or_default().0.component;
    Ok(outcome(&id, st.run(&id, Command::DismissAll { component }).await?))
}

#[derive(Deserialize)]
struct MessageBody {
    message: String,
}

async fn chat(State(st): Shared, Path(id): Path<String>, Json(b): Json<MessageBody>) -> ApiResult {
    Ok(outcome(&id, st.run(&id, Command::Chat { message: b.message }).await?))
}

#[derive(Deserialize)]
struct CommentBody {
    span: Span,
    #[serde(default)]
    message: Option<String>,
}

async fn open_comment(State(st): Shared, Path(id): Path<String>, Json(b): Json<CommentBody>) -> ApiResult {
    let cmd = Command::OpenComment {
        start: b.span.start,
        end: b.span.end,
        message: b.message,
    };
    Ok(outcome(&id, st.run(&id, cmd).await?))
}

async fn comment_message(State(st): Shared, Path(cid): Path<String>, Json(b): Json<MessageBody>) -> ApiResult {
    let (doc, comment): (_, CommentId) = parse_global(&cid)?;
    let cmd = Command::CommentMessage {
        comment,
        message: b.message,
    };
    Ok(outcome(&doc, st.run(&doc, cmd).await?))
}

async fn resolve_comment(State(st): Shared, Path(cid): Path<String>) -> ApiResult {
    let (doc, comment): (_, CommentId) = parse_global(&cid)?;
    Ok(outcome(&doc, st.run(&doc, Command::ResolveComment { comment }).await?))
}

#[derive(Deserialize)]
struct SpanBody {
    span: Span,
}

async fn brainstorm(State(st): Shared, Path(id): Path<String>, Json(b): Json<SpanBody>) -> ApiResult {
    let cmd = Command::Brainstorm {
        start: b.span.start,
        end: b.span.end,
    };
    Ok(outcome(&id, st.run(&id, cmd).await?))
}

async fn bracket(State(st): Shared, Path(id): Path<String>, Json(b): Json<SpanBody>) -> ApiResult {
    let cmd = Command::Bracket {
        start: b.span.start,
        end: b.span.end,
    };
    Ok(outcome(&id, st.run(&id, cmd).await?))
}

#[derive(Deserialize)]
struct OptionBody {
    option_index: usize,
}

async fn choose_option(State(st): Shared, Path(bid): Path<String>, Json(b): Json<OptionBody>) -> ApiResult {
    let (doc, brainstorm): (_, BrainstormId) = parse_global(&bid)?;
    let cmd = Command::ChooseOption {
        brainstorm,
        index: b.option_index,
    };
    Ok(outcome(&doc, st.run(&doc, cmd).await?))
}

async fn close_brainstorm(State(st): Shared, Path(bid): Path<String>) -> ApiResult {
    let (doc, brainstorm): (_, BrainstormId) = parse_global(&bid)?;
    Ok(outcome(&doc, st.run(&doc, Command::CloseBrainstorm { brainstorm }).await?))
}

async fn list_markers(State(st): Shared, Path(id): Path<String>) -> ApiResult {
    let markers = st
        .read(&id, |s| serde_json::to_value(s.markers.values().collect::<Vec<_>>()).expect("markers serialize"))
        .await?;
    Ok(Json(json!({"document": id, "markers": markers})).into_response())
}

#[derive(Deserialize)]
struct MarkerBody {
    name: String,
    underline_style: UnderlineStyle,
    color: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    visible: Option<bool>,
}

async fn create_marker(State(st): Shared, Path(id): Path<String>, Json(b): Json<MarkerBody>) -> ApiResult {
    let cmd = Command::CreateMarker {
        name: b.name,
        underline_style: b.underline_style,
        color: b.color,
        description: b.description,
        visible: b.visible.unwrap_or(true),
    };
    let o = st.run(&id, cmd).await?;
    Ok((StatusCode::CREATED, outcome(&id, o)).into_response())
}

async fn update_marker(
    State(st): Shared,
    Path((id, mid)): Path<(String, String)>,
    Json(patch): Json<MarkerPatch>,
) -> ApiResult {
    let marker: MarkerId = parse_local(&mid)?;
    Ok(outcome(&id, st.run(&id, Command::UpdateMarker { marker, patch }).await?))
}

async fn delete_marker(State(st): Shared, Path((id, mid)): Path<(String, String)>) -> ApiResult {
    let marker: MarkerId = parse_local(&mid)?;
    Ok(outcome(&id, st.run(&id, Command::DeleteMarker { marker }).await?))
}

async fn refresh_all_markers(State(st): Shared, Path(id): Path<String>) -> ApiResult {
    Ok(outcome(&id, st.run(&id, Command::RefreshMarkers { marker: None }).await?))
}

async fn refresh_marker(State(st): Shared, Path(mid): Path<String>) -> ApiResult {
    let (doc, marker): (_, MarkerId) = parse_global(&mid)?;
    let cmd = Command::RefreshMarkers { marker: Some(marker) };
    Ok(outcome(&doc, st.run(&doc, cmd).await?))
}

async fn verification_body(st: &AppState, doc: &str, vid: VerificationId) -> Result<Value, ApiError> {
    let template = st.config.search_url.clone();
    st.read(doc, |s| {
        s.verifications.get(&vid).map(|v| {
            let mut body = serde_json::to_value(v).expect("verification serializes");
            body["search_urls"] = v.search_urls(&template).into();
            body["document"] = doc.into();
            body
        })
    })
    .await?
    .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {vid}")))
}

async fn verify_suggestion(State(st): Shared, Path(sid): Path<String>) -> ApiResult {
    let (doc, suggestion): (_, SuggestionId) = parse_global(&sid)?;
    let o = st.run(&doc, Command::Verify { suggestion }).await?;
    let vid = o.verification.expect("verify yields a verification");
    Ok(Json(verification_body(&st, &doc, vid).await?).into_response())
}

async fn get_verification(State(st): Shared, Path(vid): Path<String>) -> ApiResult {
    let (doc, vid): (_, VerificationId) = parse_global(&vid)?;
    Ok(Json(verification_body(&st, &doc, vid).await?).into_response())
}

#[derive(Deserialize)]
struct IndexBody {
    index: usize,
}

async fn visit(State(st): Shared, Path(vid): Path<String>, Json(b): Json<IndexBody>) -> ApiResult {
    let (doc, verification): (_, VerificationId) = parse_global(&vid)?;
    st.run(&doc, Command::Visit { verification, index: b.index }).await?;
    let body = verification_body(&st, &doc, verification).await?;
    let url = body["search_urls"][b.index].clone();
    Ok(Json(json!({"document": doc, "verification": verification, "url": url})).into_response())
}

#[derive(Deserialize)]
struct LabelBody {
    label: String,
}

async fn label(State(st): Shared, Path(vid): Path<String>, Json(b): Json<LabelBody>) -> ApiResult {
    let (doc, verification): (_, VerificationId) = parse_global(&vid)?;
    let label = parse_label(&b.label)?;
    Ok(outcome(&doc, st.run(&doc, Command::Label { verification, label }).await?))
}

async fn label_suggestion(State(st): Shared, Path(sid): Path<String>, Json(b): Json<LabelBody>) -> ApiResult {
    let (doc, suggestion): (_, SuggestionId) = parse_global(&sid)?;
    let label = parse_label(&b.label)?;
    Ok(outcome(&doc, st.run(&doc, Command::LabelSuggestion { suggestion, label }).await?))
}

#[derive(Deserialize)]
struct ModeBody {
    mode: Mode,
}

async fn switch_mode(State(st): Shared, Path(id): Path<String>, Json(b): Json<ModeBody>) -> ApiResult {
    Ok(outcome(&id, st.run(&id, Command::SwitchMode { mode: b.mode }).await?))
}

async fn close_audit(State(st): Shared, Path(id): Path<String>) -> ApiResult {
    Ok(outcome(&id, st.run(&id, Command::CloseAudit).await?))
}

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn audit(State(st): Shared, Path(id): Path<String>) -> ApiResult {
    Ok(json_text(st.read(&id, |s| s.audit_report().to_json()).await?))
}

async fn metrics(State(st): Shared, Path(id): Path<String>) -> ApiResult {
    Ok(Json(st.read(&id, Session::metrics).await?).into_response())
}

async fn events(State(st): Shared, Path(id): Path<String>) -> ApiResult {
    // make sure the document is not mid-write
    let entry = st.entry(&id)?;
    let _held = entry.lock().await;
    let mut body = String::new();
    for ev in st.store.load_events(&id)? {
        body.push_str(&serde_json::to_string(&ev).expect("event serializes"));
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

#[derive(Deserialize)]
struct PeriodQuery {
    period_ms: Option<u64>,
}

async fn edit_distance(State(st): Shared, Path(id): Path<String>, Query(q): Query<PeriodQuery>) -> ApiResult {
    let period = q.period_ms.unwrap_or(DEFAULT_SAMPLE_PERIOD_MS);
    let series = st.read(&id, |s| s.edit_distance_series(period)).await?;
    Ok(Json(json!({"document": id, "period_ms": period, "series": series})).into_response())
}
