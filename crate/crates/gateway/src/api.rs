use std::convert::Infallible;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use richtx::richdoc::{check_token_budget, document_from_value, parse_document, CLIP_TOKEN_BUDGET};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::artifacts::{zip_dir, DIAGNOSTICS_FILE, IMAGE_FILE, PLAIN_IMAGE_FILE, TOKEN_MAP_DIR};
use crate::error::ServiceError;
use crate::jobs::{Job, JobService, JobState, StreamEvent};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub fn router(service: Arc<JobService>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/parse", post(parse))
        .route("/v1/jobs", post(submit))
        .route("/v1/jobs/:id", get(status))
        .route("/v1/jobs/:id/stream", get(stream_events))
        .route("/v1/jobs/:id/tokenmaps", get(tokenmaps))
        .route("/v1/jobs/:id/image", get(image))
        .route("/v1/jobs/:id/plain", get(plain_image))
        .route("/v1/jobs/:id/diagnostics", get(diagnostics))
        .with_state(service)
}

/// Serves the router on `listener` until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<JobService>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

type Svc = State<Arc<JobService>>;

/// Spans and region prompts for a document, without generating.
async fn parse(State(svc): Svc, body: Bytes) -> Result<Json<Value>, ServiceError> {
    let doc = parse_document(&body)?;
    let engine = svc.engine_for(&doc)?;
    let (spans, prompts) = engine.compile(&doc)?;
    let warnings: Vec<String> = check_token_budget(&spans.tokens, CLIP_TOKEN_BUDGET)
        .iter()
        .map(ToString::to_string)
        .collect();
    Ok(Json(json!({
        "document": doc,
        "plain_prompt": spans.plain_prompt,
        "tokens": spans.tokens,
        "spans": spans.spans,
        "region_prompts": prompts,
        "warnings": warnings,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitRequest {
    document: Value,
    #[serde(default)]
    config: Option<Value>,
}

async fn submit(State(svc): Svc, headers: HeaderMap, body: Bytes) -> Result<Response, ServiceError> {
    let req: SubmitRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("request body: {e}")))?;
    let doc = document_from_value(&req.document)?;
    let config = svc.resolve_config(req.config.as_ref())?;
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .map(|v| v.to_str().map(str::to_string))
        .transpose()
        .map_err(|_| ServiceError::BadRequest("idempotency key must be ASCII".into()))?;
    let (id, created) = svc.submit(doc, config, key)?;
    let view = svc.get(&id)?.view();
    let code = if created { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((code, [(header::LOCATION, format!("/v1/jobs/{id}"))], Json(view)).into_response())
}

async fn status(State(svc): Svc, Path(id): Path<String>) -> Result<Json<crate::jobs::JobView>, ServiceError> {
    Ok(Json(svc.get(&id)?.view()))
}

#[derive(Deserialize)]
struct StreamQuery {
    last_step: Option<usize>,
}

/// Server-sent previews, then one `done` or `failed` event. Reconnecting
/// clients pass `last_step` (or `Last-Event-ID`) to skip what they saw.
async fn stream_events(
    State(svc): Svc,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let job = svc.get(&id)?;
    let after = q.last_step.or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
    });
    Ok(Sse::new(event_stream(job, after)).keep_alive(KeepAlive::default()))
}

struct Cursor {
    job: Arc<Job>,
    rx: tokio::sync::watch::Receiver<usize>,
    next: usize,
    ended: bool,
}

fn event_stream(job: Arc<Job>, after: Option<usize>) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = job.subscribe();
    let start = Cursor {
        job,
        rx,
        next: 0,
        ended: false,
    };
    stream::unfold(start, move |mut c| async move {
        loop {
            if c.ended {
                return None;
            }
            let (events, ended) = c.job.events_from(c.next);
            c.next += events.len();
            c.ended = ended;
            let out: Vec<Result<Event, Infallible>> = events
                .iter()
                .filter(|e| match (e.step(), after) {
                    (Some(s), Some(a)) => s > a,
                    _ => true,
                })
                .map(|e| Ok(to_sse(e)))
                .collect();
            if !out.is_empty() {
                return Some((stream::iter(out), c));
            }
            if !c.ended && c.rx.changed().await.is_err() {
                return None;
            }
        }
    })
    .flatten()
}

fn to_sse(e: &StreamEvent) -> Event {
    let data = serde_json::to_string(e).expect("events serialize");
    let ev = Event::default().event(e.name()).data(data);
    match e.step() {
        Some(s) => ev.id(s.to_string()),
        None => ev,
    }
}

fn require_done(job: &Job, what: &'static str) -> Result<(), ServiceError> {
    match job.state() {
        JobState::Done => Ok(()),
        s => Err(ServiceError::NotReady {
            id: job.id.clone(),
            state: s.to_string(),
            what,
        }),
    }
}

async fn file_response(
    svc: &JobService,
    id: &str,
    file: &str,
    content_type: &'static str,
    what: &'static str,
) -> Result<Response, ServiceError> {
    let job = svc.get(id)?;
    require_done(&job, what)?;
    let bytes = tokio::fs::read(svc.job_dir(id).join(file)).await?;
    Ok(([(header::CONTENT_TYPE, content_type)], Body::from(bytes)).into_response())
}

async fn image(State(svc): Svc, Path(id): Path<String>) -> Result<Response, ServiceError> {
    file_response(&svc, &id, IMAGE_FILE, "image/png", "the image").await
}

async fn plain_image(State(svc): Svc, Path(id): Path<String>) -> Result<Response, ServiceError> {
    file_response(&svc, &id, PLAIN_IMAGE_FILE, "image/png", "the plain image").await
}

async fn diagnostics(State(svc): Svc, Path(id): Path<String>) -> Result<Response, ServiceError> {
    file_response(&svc, &id, DIAGNOSTICS_FILE, "application/x-ndjson", "diagnostics").await
}

async fn tokenmaps(State(svc): Svc, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let job = svc.get(&id)?;
    require_done(&job, "the token maps")?;
    let dir = svc.job_dir(&id).join(TOKEN_MAP_DIR);
    let bytes = tokio::task::spawn_blocking(move || zip_dir(&dir))
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))??;
    let disposition = format!("attachment; filename=\"{id}-tokenmaps.zip\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        Body::from(bytes),
    )
        .into_response())
}
