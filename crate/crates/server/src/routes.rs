//! HTTP routes. Every participant route needs that participant's bearer
//! token (or the admin token); exports need the admin token.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use lbt_core::analytics::ExportFormat;
use lbt_core::clock::Clock;
use lbt_core::domain::{Conversion, Language, TestKind};
use lbt_core::protocol::SurveyStage;
use lbt_core::service::{Platform, ServiceError, ServiceErrorClass};
use serde::Deserialize;
use serde_json::json;

/// Header carrying a simulated "now" (RFC 3339). Honoured only in test mode.
pub const SIM_TIME_HEADER: &str = "x-lbt-sim-time";

pub struct AppState {
    pub platform: Arc<Platform>,
    pub clock: Arc<dyn Clock>,
    pub test_mode: bool,
    pub admin_token: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "invalid or missing token")
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, code) = match e.class() {
            ServiceErrorClass::BadRequest => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceErrorClass::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            ServiceErrorClass::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            ServiceErrorClass::Conflict => (StatusCode::CONFLICT, "conflict"),
            ServiceErrorClass::Upstream => (StatusCode::BAD_GATEWAY, "upstream"),
            ServiceErrorClass::Internal => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

impl AppState {
    fn now(&self, headers: &HeaderMap) -> ApiResult<DateTime<Utc>> {
        let Some(raw) = headers.get(SIM_TIME_HEADER) else {
            return Ok(self.clock.now());
        };
        if !self.test_mode {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "bad_request",
                format!("{SIM_TIME_HEADER} is only accepted in test mode"),
            ));
        }
        raw.to_str()
            .ok()
            .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
            .map(|t| t.with_timezone(&Utc))
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("bad {SIM_TIME_HEADER}")))
    }

    fn is_admin(&self, headers: &HeaderMap) -> bool {
        match (&self.admin_token, bearer(headers)) {
            (Some(want), Some(got)) => want.as_bytes() == got.as_bytes(),
            _ => false,
        }
    }

    fn admin(&self, headers: &HeaderMap) -> ApiResult<()> {
        if self.is_admin(headers) {
            Ok(())
        } else {
            Err(ApiError::unauthorized())
        }
    }

    fn participant(&self, id: &str, headers: &HeaderMap) -> ApiResult<()> {
        if self.is_admin(headers) {
            return Ok(());
        }
        let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
        self.platform.authenticate(id, token).map_err(|_| ApiError::unauthorized())
    }
}

/// Runs a platform call off the async workers; LLM calls block.
async fn blocking<T, F>(app: &Arc<AppState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Platform) -> Result<T, ServiceError> + Send + 'static,
{
    let platform = app.platform.clone();
    tokio::task::spawn_blocking(move || f(&platform))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/participants", post(create_participant))
        .route("/participants/{id}", get(view))
        .route("/participants/{id}/rounds", post(start_round))
        .route("/participants/{id}/test", get(current_test))
        .route("/participants/{id}/answers", post(submit_answers))
        .route("/participants/{id}/corrections", post(attempt_correction))
        .route("/participants/{id}/turns", post(teacher_turn))
        .route("/participants/{id}/notes", post(add_note))
        .route("/participants/{id}/study/finish", post(finish_study))
        .route("/participants/{id}/due", get(due_posttests))
        .route("/participants/{id}/posttests", post(start_posttest))
        .route("/participants/{id}/surveys/{stage}", get(questionnaire).post(submit_survey))
        .route("/participants/{id}/events", get(participant_events))
        .route("/admin/events", get(all_events))
        .route("/admin/analytics", get(analytics))
        .with_state(Arc::new(state))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
struct CreateParticipant {
    display_name: String,
    native_language: Language,
}

async fn create_participant(
    State(app): Shared,
    headers: HeaderMap,
    Json(body): Json<CreateParticipant>,
) -> ApiResult<impl IntoResponse> {
    let now = app.now(&headers)?;
    let enrollment = blocking(&app, move |p| p.create_participant(&body.display_name, body.native_language, now)).await?;
    Ok((StatusCode::CREATED, Json(enrollment)))
}

async fn view(State(app): Shared, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    Ok(Json(blocking(&app, move |p| p.view(&id, now)).await?))
}

async fn start_round(State(app): Shared, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    Ok((StatusCode::CREATED, Json(blocking(&app, move |p| p.start_round(&id, now)).await?)))
}

#[derive(Deserialize)]
struct RoundQuery {
    round: Option<usize>,
}

async fn current_test(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<RoundQuery>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    Ok(Json(blocking(&app, move |p| p.current_test(&id, q.round)).await?))
}

#[derive(Deserialize)]
struct Answers {
    #[serde(default)]
    round: Option<usize>,
    answers: Vec<usize>,
}

async fn submit_answers(
    State(app): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<Answers>,
) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    Ok(Json(blocking(&app, move |p| p.submit_answers(&id, body.round, &body.answers, now)).await?))
}

#[derive(Deserialize)]
struct Correction {
    item_id: String,
    replacements: Vec<Conversion>,
}

async fn attempt_correction(
    State(app): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<Correction>,
) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    Ok(Json(
        blocking(&app, move |p| p.attempt_correction(&id, &body.item_id, body.replacements, now)).await?,
    ))
}

#[derive(Deserialize)]
struct ItemText {
    item_id: String,
    text: String,
}

async fn teacher_turn(
    State(app): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<ItemText>,
) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    Ok(Json(blocking(&app, move |p| p.teacher_turn(&id, &body.item_id, &body.text, now)).await?))
}

async fn add_note(
    State(app): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<ItemText>,
) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    blocking(&app, move |p| p.add_note(&id, &body.item_id, &body.text, now)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn finish_study(State(app): Shared, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    Ok(Json(blocking(&app, move |p| p.finish_study(&id, now)).await?))
}

async fn due_posttests(State(app): Shared, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    Ok(Json(blocking(&app, move |p| p.due_posttests(&id, now)).await?))
}

#[derive(Deserialize)]
struct StartPosttest {
    round: usize,
    kind: TestKind,
}

async fn start_posttest(
    State(app): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<StartPosttest>,
) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let now = app.now(&headers)?;
    Ok(Json(blocking(&app, move |p| p.start_posttest(&id, body.round, body.kind, now)).await?))
}

fn parse_stage(raw: &str) -> ApiResult<SurveyStage> {
    serde_json::from_value(serde_json::Value::String(raw.to_owned()))
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown survey stage {raw:?}")))
}

async fn questionnaire(
    State(app): Shared,
    Path((id, stage)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let stage = parse_stage(&stage)?;
    Ok(Json(blocking(&app, move |p| p.questionnaire(&id, stage)).await?))
}

#[derive(Deserialize)]
struct SurveyAnswers {
    answers: Vec<String>,
}

async fn submit_survey(
    State(app): Shared,
    Path((id, stage)): Path<(String, String)>,
    headers: HeaderMap,
    Json(body): Json<SurveyAnswers>,
) -> ApiResult<impl IntoResponse> {
    app.participant(&id, &headers)?;
    let stage = parse_stage(&stage)?;
    let now = app.now(&headers)?;
    blocking(&app, move |p| p.submit_survey(&id, stage, body.answers, now)).await?;
    Ok(StatusCode::NO_CONTENT)
}

fn json_lines(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn participant_events(State(app): Shared, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Response> {
    app.participant(&id, &headers)?;
    Ok(json_lines(blocking(&app, move |p| p.events_jsonl(Some(&id))).await?))
}

async fn all_events(State(app): Shared, headers: HeaderMap) -> ApiResult<Response> {
    app.admin(&headers)?;
    Ok(json_lines(blocking(&app, |p| p.events_jsonl(None)).await?))
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

async fn analytics(State(app): Shared, Query(q): Query<FormatQuery>, headers: HeaderMap) -> ApiResult<Response> {
    app.admin(&headers)?;
    let raw = q.format.unwrap_or_else(|| "csv".into());
    let format = ExportFormat::parse(&raw)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("unknown format {raw:?}")))?;
    let body = blocking(&app, move |p| p.export_analytics(format)).await?;
    Ok(match format {
        ExportFormat::Csv => ([(header::CONTENT_TYPE, "text/csv")], body).into_response(),
        ExportFormat::JsonLines => json_lines(body),
    })
}
