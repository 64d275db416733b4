//! Request handlers and wire types.

use std::sync::Arc;

use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::Json;
use humbert::engine::{ParamOverrides, SessionParams, TurnRecord};
use humbert::Session;
use serde::{Deserialize, Serialize};

use crate::{ApiError, AppState};

/// `Json` whose rejections are reported as [`ApiError`].
pub struct ApiJson<T>(pub T);

impl<T, S> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = axum::extract::rejection::JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let Json(value) = Json::<T>::from_request(req, state).await?;
        Ok(Self(value))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub query: String,
    #[serde(default)]
    pub config_overrides: ParamOverrides,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub case_id: String,
    pub m: usize,
    pub params: SessionParams,
    pub reply: String,
    pub turn: TurnRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostMessage {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageReply {
    pub reply: String,
    pub turn: TurnRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub session_id: String,
    pub case_id: String,
    pub m: usize,
    pub params: SessionParams,
    pub turns: Vec<TurnRecord>,
}

impl History {
    pub(crate) fn of(session: &Session) -> Option<Self> {
        Some(Self {
            session_id: session.id().to_string(),
            case_id: session.case_id()?.to_string(),
            m: session.m()?,
            params: session.params().clone(),
            turns: session.turns().to_vec(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub title: String,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseList {
    pub cases: Vec<CaseSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub cases: usize,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

pub async fn create_session(
    State(state): State<Arc<AppState>>,
    ApiJson(body): ApiJson<CreateSession>,
) -> Result<impl IntoResponse, ApiError> {
    let mut session = state.engine.new_session(&body.config_overrides)?;
    let engine = state.engine.clone();
    let (session, turn) = blocking(move || engine.start(&mut session, &body.query).map(|t| (session, t))).await??;
    let created = SessionCreated {
        session_id: session.id().to_string(),
        case_id: session.case_id().expect("started").to_string(),
        m: session.m().expect("started"),
        params: session.params().clone(),
        reply: turn.reply.clone(),
        turn,
    };
    state.insert(session);
    Ok((StatusCode::CREATED, Json(created)))
}

pub async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<PostMessage>,
) -> Result<Json<MessageReply>, ApiError> {
    let slot = state.get(&id)?;
    let mut session = slot.lock_owned().await;
    let engine = state.engine.clone();
    let turn = blocking(move || engine.step(&mut session, &body.text)).await??;
    Ok(Json(MessageReply {
        reply: turn.reply.clone(),
        turn,
    }))
}

pub async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<History>, ApiError> {
    let slot = state.get(&id)?;
    let session = slot.lock().await;
    History::of(&session)
        .map(Json)
        .ok_or_else(|| ApiError::internal("stored session was never started"))
}

pub async fn cases(State(state): State<Arc<AppState>>) -> Json<CaseList> {
    let index = state.engine.index();
    let cases = index
        .cases()
        .iter()
        .zip(index.sentence_sets())
        .map(|(c, s)| CaseSummary {
            case_id: c.case_id.clone(),
            title: c.title.clone(),
            m: s.m(),
        })
        .collect();
    Json(CaseList { cases })
}

pub async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        cases: state.engine.index().k(),
    })
}

pub async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub async fn method_not_allowed() -> ApiError {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        "invalid_argument",
        "method not allowed on this endpoint",
    )
}
