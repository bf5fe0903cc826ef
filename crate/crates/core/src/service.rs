//! JSON-over-HTTP adapter around [`Engine`]. Handlers only decode, call the
//! engine on the blocking pool and encode; no retrieval logic lives here.
//!
//! | method | path                          | body                                        |
//! |--------|-------------------------------|---------------------------------------------|
//! | PUT    | /tree                         | tree schema                                 |
//! | POST   | /nodes                        | `{"business_key","level","parent"?}`        |
//! | POST   | /documents                    | JSONL, one document record per line → 202   |
//! | POST   | /index                        | `{"mode":"full"\|"incremental"}`            |
//! | POST   | /query                        | `{"text","scope_business_key","k"?}`        |
//! | DELETE | /nodes/{id}                   |                                             |
//! | GET    | /nodes/{id}/memory            |                                             |
//! | POST   | /profiles/mine                | `{"min_support"?,"window_days"?,"queries"?}` |
//! | POST   | /profiles/{id}/approve        |                                             |
//! | POST   | /profiles/{id}/apply          |                                             |
//!
//! `{id}` is a node id (percent-encoded) or a unique business key. Errors
//! come back as `{"error": kind, "message": ..}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adaptation::{MiningWindow, QueryRecord};
use crate::engine::{Engine, KOverrides};
use crate::error::Error;
use crate::indexer::IndexMode;
use crate::memory::DocumentRecord;
use crate::tree::TreeSchema;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::UnknownScope(_)
        | Error::UnknownNode(_)
        | Error::UnknownParent(_)
        | Error::MissingMemory(_)
        | Error::UnknownProfile(_) => StatusCode::NOT_FOUND,
        Error::StaleVersion { .. } | Error::NotApproved(_) => StatusCode::CONFLICT,
        Error::BackendUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        Error::MalformedResponse(_) => StatusCode::BAD_GATEWAY,
        Error::Io(_) | Error::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.0.kind(), "message": self.0.to_string() });
        (status_of(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(v)| v).map_err(|e| ApiError(Error::InvalidArgument(e.body_text())))
}

async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> ApiResult<Json<T>>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> crate::Result<T> + Send + 'static,
{
    let engine = engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError(Error::Storage(format!("worker panicked: {e}"))))?
        .map(Json)
        .map_err(ApiError)
}

#[derive(Debug, Deserialize)]
struct NodeRequest {
    business_key: String,
    level: String,
    parent: Option<String>,
}

#[derive(Debug, Deserialize)]
struct IndexRequest {
    mode: IndexMode,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryRequest {
    pub text: String,
    pub scope_business_key: String,
    #[serde(default)]
    pub k: KOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct MineRequest {
    min_support: Option<usize>,
    window_days: Option<i64>,
    queries: Option<Vec<QueryRecord>>,
}

/// Parses a JSONL document batch; blank lines are skipped.
pub fn parse_jsonl(text: &str) -> crate::Result<Vec<DocumentRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::InvalidArgument(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/tree", put(put_tree))
        .route("/nodes", post(add_node))
        .route("/nodes/{id}", delete(delete_node))
        .route("/nodes/{id}/memory", get(node_memory))
        .route("/documents", post(ingest))
        .route("/index", post(index))
        .route("/query", post(query))
        .route("/profiles/mine", post(mine))
        .route("/profiles/{id}/approve", post(approve))
        .route("/profiles/{id}/apply", post(apply))
        .with_state(engine)
}

async fn put_tree(
    State(e): State<Arc<Engine>>,
    req: Result<Json<TreeSchema>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let schema = body(req)?;
    blocking(&e, move |e| e.load_tree(&schema).map(|_| json!({ "nodes": e.tree().len() }))).await
}

async fn add_node(
    State(e): State<Arc<Engine>>,
    req: Result<Json<NodeRequest>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let r = body(req)?;
    blocking(&e, move |e| e.add_node(&r.business_key, &r.level, r.parent.as_deref()).map(|id| json!({ "id": id })))
        .await
}

async fn ingest(State(e): State<Arc<Engine>>, text: String) -> ApiResult<impl IntoResponse> {
    let records = parse_jsonl(&text)?;
    let report = blocking(&e, move |e| e.ingest(&records)).await?;
    Ok((StatusCode::ACCEPTED, report))
}

async fn index(
    State(e): State<Arc<Engine>>,
    req: Result<Json<IndexRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let mode = body(req)?.mode;
    blocking(&e, move |e| e.index(mode)).await
}

async fn query(
    State(e): State<Arc<Engine>>,
    req: Result<Json<QueryRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let r = body(req)?;
    blocking(&e, move |e| e.query(&r.text, &r.scope_business_key, &r.k)).await
}

async fn delete_node(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    blocking(&e, move |e| e.delete_node(&id)).await
}

async fn node_memory(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    blocking(&e, move |e| e.memory(&id)).await
}

async fn mine(State(e): State<Arc<Engine>>, req: Option<Json<MineRequest>>) -> ApiResult<impl IntoResponse> {
    let r = req.map(|Json(r)| r).unwrap_or_default();
    blocking(&e, move |e| {
        let a = e.config().adaptation;
        let days = r.window_days.unwrap_or(a.window_days);
        let window = MiningWindow::trailing(Utc::now(), days, a.max_queries);
        e.mine_profile(r.queries.as_deref(), Some(window), r.min_support)
    })
    .await
}

async fn approve(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    blocking(&e, move |e| e.approve_profile(&id)).await
}

async fn apply(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    blocking(&e, move |e| e.apply_profile(&id)).await
}

/// Serves until ctrl-c. Build the engine before calling this: remote
/// backends use a blocking HTTP client that must not be created inside
/// the async runtime.
pub fn serve(engine: Engine, addr: SocketAddr) -> crate::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(engine)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
