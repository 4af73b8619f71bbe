//! HTTP routes. Bodies are JSON except `POST /messages`, which takes the
//! JSON-lines ingest format. Errors are `{"error": {"code", "message"}}`.

use axum::extract::{Path, Query, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::http::{Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use epiwatch_core::classifier::Relevance;
use epiwatch_core::series::{DateRange, DiseaseContext};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::service::{ContextRequest, Service};
use crate::state::AlertQuery;

pub fn router(svc: Service) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/messages", post(ingest))
        .route("/alerts", get(alerts))
        .route("/alerts/{id}", get(alert))
        .route("/alerts/{id}/tweets", get(tweets))
        .route("/contexts", get(list_contexts).post(save_context))
        .route("/labels/queue", get(queue))
        .route("/labels/{task}/judgment", post(judgment))
        .route("/series/{disease}/{country}", get(series))
        .fallback(|| async { ServiceError::NotFound("no such route".into()) })
        .layer(middleware::from_fn_with_state(svc.clone(), auth))
        .with_state(svc)
}

async fn auth(State(svc): State<Service>, req: Request, next: Next) -> Response {
    if req.method() != Method::GET {
        if let Some(token) = &svc.config().token {
            let ok = req
                .headers()
                .get(AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
                .is_some_and(|t| t == token);
            if !ok {
                return ServiceError::Unauthorized.into_response();
            }
        }
    }
    next.run(req).await
}

/// Runs blocking store work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))?
}

/// Query rejections come back as our error shape rather than plain text.
fn query<T: serde::de::DeserializeOwned>(raw: Option<Query<T>>) -> Result<T> {
    raw.map(|Query(q)| q)
        .ok_or_else(|| ServiceError::BadRequest("malformed query string".into()))
}

async fn health(State(svc): State<Service>) -> Result<Json<serde_json::Value>> {
    let h = blocking(move || Ok(svc.health())).await?;
    Ok(Json(serde_json::to_value(h)?))
}

async fn ingest(State(svc): State<Service>, body: String) -> Result<Json<crate::service::IngestReport>> {
    blocking(move || svc.ingest(&body)).await.map(Json)
}

async fn alerts(State(svc): State<Service>, q: Result<Query<AlertQuery>, axum::extract::rejection::QueryRejection>) -> Result<Json<serde_json::Value>> {
    let q = query(q.ok())?;
    let page = svc.state().query_alerts(&q)?;
    Ok(Json(serde_json::to_value(page)?))
}

async fn alert(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<serde_json::Value>> {
    let st = svc.state();
    let a = st
        .alerts
        .get(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown alert {id:?}")))?;
    let mut v = serde_json::to_value(a)?;
    v["id"] = json!(id);
    Ok(Json(v))
}

#[derive(Debug, Deserialize)]
struct TweetsQuery {
    context: Option<String>,
    n: Option<usize>,
}

async fn tweets(
    State(svc): State<Service>,
    Path(id): Path<String>,
    q: Result<Query<TweetsQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<crate::service::RankedTweets>> {
    let q = query(q.ok())?;
    let n = q.n.unwrap_or(10);
    if n == 0 || n > 1000 {
        return Err(ServiceError::BadRequest("n must be in 1..=1000".into()));
    }
    blocking(move || svc.ranked_tweets(&id, q.context.as_deref(), n)).await.map(Json)
}

async fn list_contexts(State(svc): State<Service>) -> Json<serde_json::Value> {
    let st = svc.state();
    let items: Vec<_> = st.contexts.iter().map(|(id, c)| json!({ "id": id, "context": c })).collect();
    Json(json!({ "contexts": items }))
}

async fn save_context(
    State(svc): State<Service>,
    body: Result<Json<ContextRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<crate::service::SavedContext>)> {
    let Json(req) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let saved = blocking(move || svc.save_context(req)).await?;
    Ok((StatusCode::CREATED, Json(saved)))
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    worker: Option<String>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize)]
struct QueueItem<'a> {
    task_id: &'a str,
    message_id: &'a str,
    text: &'a str,
    judgments: usize,
}

async fn queue(
    State(svc): State<Service>,
    q: Result<Query<QueueQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<serde_json::Value>> {
    let q = query(q.ok())?;
    let limit = q.limit.unwrap_or(20).min(500);
    let st = svc.state();
    let open: Vec<_> = st
        .queue
        .open_tasks()
        .filter(|t| q.worker.as_ref().is_none_or(|w| !t.judgments.iter().any(|j| &j.worker_id == w)))
        .collect();
    // gold tasks are served like any other so workers cannot tell them apart
    let items: Vec<QueueItem> = open
        .iter()
        .take(limit)
        .map(|t| QueueItem {
            task_id: &t.task_id,
            message_id: &t.message.id,
            text: &t.message.text,
            judgments: t.judgments.len(),
        })
        .collect();
    Ok(Json(json!({ "available": open.len(), "tasks": items })))
}

#[derive(Debug, Deserialize)]
struct JudgmentBody {
    worker_id: String,
    label: Relevance,
    #[serde(default)]
    expert: bool,
}

async fn judgment(
    State(svc): State<Service>,
    Path(task): Path<String>,
    body: Result<Json<JudgmentBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<crate::state::JudgeOutcome>> {
    let Json(b) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    blocking(move || svc.judge(&task, &b.worker_id, b.label, b.expert)).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct SeriesQuery {
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

async fn series(
    State(svc): State<Service>,
    Path((disease, country)): Path<(String, String)>,
    q: Result<Query<SeriesQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<serde_json::Value>> {
    let q = query(q.ok())?;
    let ctx = DiseaseContext::new(disease, country).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let st = svc.state();
    let range = match (q.from, q.to) {
        (None, None) => None,
        (f, t) => {
            let span = st.date_span();
            let start = f.or(span.map(|s| s.start)).or(t);
            let end = t.or(span.map(|s| s.end)).or(f);
            let (Some(start), Some(end)) = (start, end) else { unreachable!("one bound is set") };
            Some(DateRange::new(start, end).map_err(|_| ServiceError::BadRequest(format!("date range ends ({end}) before it starts ({start})")))?)
        }
    };
    let s = st
        .series(&ctx, range)
        .ok_or_else(|| ServiceError::NotFound("no messages stored yet".into()))?;
    let dates: Vec<String> = (0..s.len()).map(|i| s.date_at(i).to_string()).collect();
    Ok(Json(json!({
        "disease": s.context.disease,
        "country": s.context.country,
        "start": s.start,
        "dates": dates,
        "counts": s.counts,
    })))
}
