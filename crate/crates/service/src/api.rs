//! HTTP routes. Handlers only parse input, call one engine operation and
//! serialize its result.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, patch, post, put};
use axum::{Json, Router};
use b2d_core::domain::{
    CardId, DeliverableContext, DesignArtifact, ElementType, EntryId, IntegratedPrompt, Orientation, RequirementEntry,
    RequirementField, SelectionSet, SessionId,
};
use b2d_core::store::{media_type_of, StoreError};
use b2d_core::{Engine, PipelineError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::jobs::{JobKind, JobRegistry};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub jobs: Arc<JobRegistry>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self { engine, jobs: Arc::new(JobRegistry::default()) }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/context", put(update_context))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/requirements/extract", post(extract))
        .route("/sessions/{id}/requirements/entries", post(add_entry))
        .route("/sessions/{id}/requirements/entries/{entry_id}", patch(edit_entry).delete(delete_entry))
        .route("/sessions/{id}/requirements/{field}/recommend", post(recommend_requirements))
        .route("/sessions/{id}/elements/{target}", delete(delete_card))
        .route("/sessions/{id}/elements/{target}/recommend", post(recommend_elements))
        .route("/sessions/{id}/elements/{target}/add", post(add_card))
        .route("/sessions/{id}/elements/{target}/edit", post(edit_card))
        .route("/sessions/{id}/elements/{target}/regenerate", post(regenerate_card))
        .route("/sessions/{id}/elements/{target}/enhance", post(enhance_card))
        .route("/sessions/{id}/elements/{target}/select", post(select_card))
        .route("/sessions/{id}/selection", put(set_selection))
        .route("/sessions/{id}/integrate", post(integrate))
        .route("/sessions/{id}/regenerate-design", post(regenerate_design))
        .route("/jobs/{job_id}", get(get_job))
        .route("/images/{hash}", get(get_image))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "route_not_found", "no such route") })
        .with_state(state)
}

/// JSON body extractor. An empty body reads as `{}`; malformed bodies are
/// 422 `invalid_request`.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes =
            Bytes::from_request(req, state).await.map_err(|e| ApiError::invalid("invalid_request", e.body_text()))?;
        let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &bytes };
        serde_json::from_slice(bytes).map(Body).map_err(|e| ApiError::invalid("invalid_request", e.to_string()))
    }
}

type ApiResult<T = Response> = Result<T, ApiError>;

fn ok<T: Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

fn known_session(state: &AppState, id: &str) -> ApiResult<SessionId> {
    let id = SessionId::from(id.to_owned());
    if state.engine.store().session_exists(&id) {
        Ok(id)
    } else {
        Err(ApiError::not_found("session_not_found", format_args!("session {id}")))
    }
}

fn card_type(state: &AppState, id: &str, card: &str) -> ApiResult<(SessionId, CardId, ElementType)> {
    let sid = known_session(state, id)?;
    let card = CardId::from(card.to_owned());
    let ty = match state.engine.session(&sid)?.card(&card) {
        Some(c) => c.element_type,
        None => return Err(ApiError::not_found("card_not_found", format_args!("card {card}"))),
    };
    Ok((sid, card, ty))
}

fn known_card(state: &AppState, id: &str, card: &str) -> ApiResult<(SessionId, CardId)> {
    card_type(state, id, card).map(|(s, c, _)| (s, c))
}

fn parse<T: std::str::FromStr<Err = b2d_core::DomainError>>(raw: &str) -> ApiResult<T> {
    raw.parse().map_err(|e: b2d_core::DomainError| ApiError::from(PipelineError::from(e)))
}

fn spawn<T, F>(state: &AppState, kind: JobKind, sid: SessionId, op: F) -> ApiResult
where
    T: Serialize,
    F: FnOnce(&Engine, &SessionId) -> Result<T, PipelineError> + Send + 'static,
{
    let engine = Arc::clone(&state.engine);
    let label = sid.to_string();
    let handle = state.jobs.submit(kind, &label, move || {
        let out = op(&engine, &sid)?;
        serde_json::to_value(out)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
    });
    Ok((StatusCode::ACCEPTED, Json(handle)).into_response())
}

fn default_language() -> String {
    "English".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub brief_text: String,
    #[serde(default = "default_language")]
    pub output_language: String,
    #[serde(default)]
    pub deliverable_format: Option<String>,
    #[serde(default)]
    pub orientation: Option<Orientation>,
}

async fn create_session(State(s): State<AppState>, Body(req): Body<CreateSession>) -> ApiResult {
    let ctx = DeliverableContext { deliverable_format: req.deliverable_format, orientation: req.orientation };
    let session = s.engine.create_session(&req.brief_text, &req.output_language, ctx)?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn list_sessions(State(s): State<AppState>) -> ApiResult {
    ok(s.engine.store().list_sessions()?)
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = known_session(&s, &id)?;
    ok(s.engine.session(&id)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HistoryItem {
    pub artifact: DesignArtifact,
    pub integrated_prompt: Option<IntegratedPrompt>,
}

async fn history(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = known_session(&s, &id)?;
    let session = s.engine.session(&id)?;
    let items: Vec<HistoryItem> = session
        .history
        .iter()
        .map(|a| HistoryItem {
            artifact: a.clone(),
            integrated_prompt: session.integrated_prompt(&a.integrated_prompt_id).cloned(),
        })
        .collect();
    ok(items)
}

async fn events(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = known_session(&s, &id)?;
    ok(s.engine.events(&id)?)
}

async fn metrics(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = known_session(&s, &id)?;
    let engine = Arc::clone(&s.engine);
    let report = tokio::task::spawn_blocking(move || engine.metrics(&id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    ok(report)
}

async fn update_context(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(ctx): Body<DeliverableContext>,
) -> ApiResult {
    let id = known_session(&s, &id)?;
    ok(s.engine.update_context(&id, ctx)?)
}

async fn close(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = known_session(&s, &id)?;
    ok(s.engine.close_session(&id)?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractRequest {
    #[serde(default)]
    pub brief_text: Option<String>,
}

async fn extract(State(s): State<AppState>, Path(id): Path<String>, Body(req): Body<ExtractRequest>) -> ApiResult {
    let id = known_session(&s, &id)?;
    spawn(&s, JobKind::Extract, id, move |e, id| e.extract_requirements(id, req.brief_text.as_deref()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRequest {
    #[serde(default)]
    pub n: Option<usize>,
}

async fn recommend_requirements(
    State(s): State<AppState>,
    Path((id, field)): Path<(String, String)>,
    Body(req): Body<CountRequest>,
) -> ApiResult {
    let id = known_session(&s, &id)?;
    let field: RequirementField = parse(&field)?;
    let n = req.n.unwrap_or(s.engine.config().n_requirements);
    spawn(&s, JobKind::RecommendRequirements, id, move |e, id| e.recommend_requirements(id, field, n))
}

/// Either an accepted recommendation or a manual `{field, text}` entry.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum NewEntry {
    Candidate { candidate: RequirementEntry },
    Manual { field: String, text: String },
}

async fn add_entry(State(s): State<AppState>, Path(id): Path<String>, Body(req): Body<NewEntry>) -> ApiResult {
    let id = known_session(&s, &id)?;
    let cards = match req {
        NewEntry::Candidate { candidate } => s.engine.accept_candidate(&id, candidate)?,
        NewEntry::Manual { field, text } => s.engine.add_manual_entry(&id, parse(&field)?, &text)?,
    };
    ok(cards)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextRequest {
    pub text: String,
}

async fn edit_entry(
    State(s): State<AppState>,
    Path((id, entry)): Path<(String, String)>,
    Body(req): Body<TextRequest>,
) -> ApiResult {
    let id = known_session(&s, &id)?;
    ok(s.engine.edit_entry(&id, &EntryId::from(entry), &req.text)?)
}

async fn delete_entry(State(s): State<AppState>, Path((id, entry)): Path<(String, String)>) -> ApiResult {
    let id = known_session(&s, &id)?;
    ok(s.engine.delete_entry(&id, &EntryId::from(entry))?)
}

async fn recommend_elements(
    State(s): State<AppState>,
    Path((id, target)): Path<(String, String)>,
    Body(req): Body<CountRequest>,
) -> ApiResult {
    let id = known_session(&s, &id)?;
    let ty: ElementType = parse(&target)?;
    let n = req.n.unwrap_or(s.engine.config().n_elements);
    spawn(&s, JobKind::RecommendElements, id, move |e, id| e.recommend_and_preview(id, ty, n))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughPromptRequest {
    pub rough_prompt: String,
}

async fn add_card(
    State(s): State<AppState>,
    Path((id, target)): Path<(String, String)>,
    Body(req): Body<RoughPromptRequest>,
) -> ApiResult {
    let id = known_session(&s, &id)?;
    let ty: ElementType = parse(&target)?;
    Ok((StatusCode::CREATED, Json(s.engine.add_manual_card(&id, ty, &req.rough_prompt)?)).into_response())
}

async fn edit_card(
    State(s): State<AppState>,
    Path((id, target)): Path<(String, String)>,
    Body(req): Body<RoughPromptRequest>,
) -> ApiResult {
    let (id, card) = known_card(&s, &id, &target)?;
    spawn(&s, JobKind::EnhancePreview, id, move |e, id| e.edit_rough(id, &card, &req.rough_prompt))
}

async fn regenerate_card(State(s): State<AppState>, Path((id, target)): Path<(String, String)>) -> ApiResult {
    let (id, card, ty) = card_type(&s, &id, &target)?;
    if !ty.is_visual() {
        return Err(PipelineError::UnsupportedForText(card.to_string()).into());
    }
    spawn(&s, JobKind::EnhancePreview, id, move |e, id| e.regenerate_preview(id, &card))
}

async fn enhance_card(State(s): State<AppState>, Path((id, target)): Path<(String, String)>) -> ApiResult {
    let (id, card) = known_card(&s, &id, &target)?;
    spawn(&s, JobKind::EnhancePreview, id, move |e, id| e.enhance_and_preview(id, &card))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub selected: bool,
}

async fn select_card(
    State(s): State<AppState>,
    Path((id, target)): Path<(String, String)>,
    Body(req): Body<SelectRequest>,
) -> ApiResult {
    let (id, card) = known_card(&s, &id, &target)?;
    ok(s.engine.set_selected(&id, &card, req.selected)?)
}

async fn delete_card(State(s): State<AppState>, Path((id, target)): Path<(String, String)>) -> ApiResult {
    let (id, card) = known_card(&s, &id, &target)?;
    s.engine.delete_card(&id, &card)?;
    ok(serde_json::json!({ "deleted": card }))
}

async fn set_selection(State(s): State<AppState>, Path(id): Path<String>, Body(sel): Body<SelectionSet>) -> ApiResult {
    let id = known_session(&s, &id)?;
    ok(s.engine.set_selection(&id, sel)?)
}

/// Rejects an integration the job would refuse anyway, so the client gets
/// the 409 up front instead of a failed job.
fn check_integrable(state: &AppState, id: &SessionId, needs_history: bool) -> ApiResult<()> {
    let session = state.engine.session(id)?;
    if needs_history && session.history.is_empty() {
        return Err(PipelineError::NoPriorArtifact.into());
    }
    session.validate_selection(&session.selection).map_err(PipelineError::from)?;
    Ok(())
}

async fn integrate(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = known_session(&s, &id)?;
    check_integrable(&s, &id, false)?;
    spawn(&s, JobKind::Integrate, id, |e, id| e.integrate_and_generate(id))
}

async fn regenerate_design(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = known_session(&s, &id)?;
    check_integrable(&s, &id, true)?;
    spawn(&s, JobKind::RegenerateDesign, id, |e, id| e.regenerate_design(id))
}

async fn get_job(State(s): State<AppState>, Path(job_id): Path<String>) -> ApiResult {
    match s.jobs.get(&job_id) {
        Some(job) => ok(job),
        None => Err(ApiError::not_found("job_not_found", format_args!("job {job_id}"))),
    }
}

async fn get_image(State(s): State<AppState>, Path(hash): Path<String>) -> ApiResult {
    match s.engine.store().get_blob(&hash) {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, media_type_of(&bytes))], bytes).into_response()),
        Err(StoreError::NotFound(_)) => Err(ApiError::not_found("image_not_found", format_args!("image {hash}"))),
        Err(e) => Err(e.into()),
    }
}
