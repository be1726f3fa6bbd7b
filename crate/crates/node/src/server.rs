//! HTTP interface of a node.
//!
//! Node operations are blocking (hashing, disk and peer I/O), so every
//! handler hands its work to the blocking thread pool.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use audiochain_core::cas::{CasError, Cid};
use audiochain_core::ledger::{Block, PayloadV1, PoolError};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

use crate::node::{AnnounceOutcome, MineError, Node, NodeError};

/// Request bodies carry whole audio files.
pub const MAX_REQUEST_BYTES: usize = 512 * 1024 * 1024;

type Shared = Arc<Node>;

fn error(status: StatusCode, kind: &str, detail: impl ToString) -> Response {
    (status, Json(json!({ "error": kind, "detail": detail.to_string() }))).into_response()
}

fn json_bytes(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("blocking task panicked")
}

pub fn router(node: Shared) -> Router {
    Router::new()
        .route("/chain", get(chain))
        .route("/transactions/new", post(new_transaction))
        .route("/transactions/pending", get(pending))
        .route("/mine", post(mine))
        .route("/nodes", get(nodes))
        .route("/nodes/register", post(register))
        .route("/nodes/remove", post(remove))
        .route("/nodes/resolve", get(resolve))
        .route("/blocks/announce", post(announce))
        .route("/cas/add", post(cas_add))
        .route("/cas/{cid}", get(cas_get))
        .route("/record", post(record))
        .route("/verify/{content_id}", get(verify))
        .route("/authenticate", post(authenticate))
        .layer(DefaultBodyLimit::max(MAX_REQUEST_BYTES))
        .with_state(node)
}

/// `{"chain":[...],"length":n}` with the chain in canonical form, so equal
/// chains produce identical bytes on every node.
async fn chain(State(node): State<Shared>) -> Response {
    let chain = node.chain();
    match chain.to_json_bytes() {
        Ok(blocks) => {
            let mut body = b"{\"chain\":".to_vec();
            body.extend_from_slice(&blocks);
            body.extend_from_slice(format!(",\"length\":{}}}", chain.len()).as_bytes());
            json_bytes(StatusCode::OK, body)
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "Unserializable", e),
    }
}

fn pool_error(e: PoolError) -> Response {
    let kind = match e {
        PoolError::DuplicateContentId(_) => "DuplicateContentId",
        PoolError::PayloadInvalid(_) => "PayloadInvalid",
        PoolError::PayloadTooLarge(_) => "PayloadTooLarge",
    };
    error(StatusCode::BAD_REQUEST, kind, e)
}

async fn new_transaction(State(node): State<Shared>, body: Bytes) -> Response {
    let payload: PayloadV1 = match serde_json::from_slice(&body) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, "PayloadInvalid", e),
    };
    let content_id = payload.content_id.clone();
    match blocking(move || node.submit_transaction(payload)).await {
        Ok(()) => (StatusCode::CREATED, Json(json!({ "contentId": content_id }))).into_response(),
        Err(e) => pool_error(e),
    }
}

async fn pending(State(node): State<Shared>) -> Response {
    Json(node.pending()).into_response()
}

async fn mine(State(node): State<Shared>) -> Response {
    match blocking(move || node.mine_one()).await {
        Ok(mined) => Json(json!({
            "index": mined.block.index,
            "hash": mined.block.hash,
            "contentId": mined.block.transactions[0].content_id,
            "announced": mined.announced,
            "rejected": mined.rejected,
        }))
        .into_response(),
        Err(e) => {
            let (status, kind) = match &e {
                MineError::NoPending { .. } => (StatusCode::NOT_FOUND, "NoPending"),
                MineError::Cancelled { .. } => (StatusCode::CONFLICT, "MiningCancelled"),
                MineError::Busy => (StatusCode::CONFLICT, "MiningInProgress"),
                MineError::Persist(_) => (StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure"),
            };
            (status, Json(json!({ "error": kind, "detail": e.to_string(), "rejected": e.rejected() }))).into_response()
        }
    }
}

async fn nodes(State(node): State<Shared>) -> Response {
    Json(node.peers()).into_response()
}

#[derive(Deserialize)]
struct RegisterRequest {
    peer: String,
    #[serde(default = "yes")]
    reciprocate: bool,
}

fn yes() -> bool {
    true
}

async fn register(State(node): State<Shared>, body: Bytes) -> Response {
    let req: RegisterRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedUrl", e),
    };
    let node2 = node.clone();
    match blocking(move || node2.register_peer(&req.peer, req.reciprocate)).await {
        Ok(added) => (StatusCode::CREATED, Json(json!({ "added": added, "peers": node.peers() }))).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, "MalformedUrl", e),
    }
}

#[derive(Deserialize)]
struct RemoveRequest {
    peer: String,
}

async fn remove(State(node): State<Shared>, body: Bytes) -> Response {
    let req: RemoveRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedUrl", e),
    };
    let removed = node.remove_peer(&req.peer);
    Json(json!({ "removed": removed, "peers": node.peers() })).into_response()
}

async fn resolve(State(node): State<Shared>) -> Response {
    Json(blocking(move || node.resolve_conflicts()).await).into_response()
}

async fn announce(State(node): State<Shared>, body: Bytes) -> Response {
    let block: Block = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "Unserializable", e),
    };
    match blocking(move || node.receive_block(block)).await {
        AnnounceOutcome::Accepted => (StatusCode::CREATED, Json(json!({ "result": "accepted" }))).into_response(),
        AnnounceOutcome::Known => Json(json!({ "result": "known" })).into_response(),
        AnnounceOutcome::Invalid(v) => error(StatusCode::BAD_REQUEST, v.name(), v),
        AnnounceOutcome::Conflict(sync) => {
            (StatusCode::CONFLICT, Json(json!({ "error": "Conflict", "sync": sync }))).into_response()
        }
    }
}

async fn cas_add(State(node): State<Shared>, body: Bytes) -> Response {
    match blocking(move || node.store().put(&body)).await {
        Ok(cid) => (StatusCode::CREATED, Json(json!({ "cid": cid }))).into_response(),
        Err(e) => error(StatusCode::INSUFFICIENT_STORAGE, "StorageFull", e),
    }
}

/// Serves local objects only.
async fn cas_get(State(node): State<Shared>, Path(cid): Path<String>) -> Response {
    let cid = match Cid::parse(&cid) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedCid", e),
    };
    match blocking(move || node.store().get_local(&cid)).await {
        Ok(Some(bytes)) => (StatusCode::OK, [(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        Ok(None) => error(StatusCode::NOT_FOUND, "NotFound", "object not held by this node"),
        Err(e @ CasError::IntegrityViolation { .. }) => error(StatusCode::INTERNAL_SERVER_ERROR, "IntegrityViolation", e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure", e),
    }
}

fn node_error(e: NodeError) -> Response {
    match e {
        NodeError::RoleRequired(_) => error(StatusCode::FORBIDDEN, "RoleRequired", e),
        NodeError::Wav(_) => error(StatusCode::BAD_REQUEST, "UnreadableAudio", e),
        NodeError::Fingerprint(_) => error(StatusCode::BAD_REQUEST, "UnsupportedAudio", e),
        NodeError::Pool(p) => pool_error(p),
        NodeError::UnknownContentId(_) => error(StatusCode::NOT_FOUND, "UnknownContentId", e),
        NodeError::Storage(_) => error(StatusCode::INSUFFICIENT_STORAGE, "StorageFull", e),
        other => error(StatusCode::INTERNAL_SERVER_ERROR, "Internal", other),
    }
}

async fn record(State(node): State<Shared>, Query(q): Query<HashMap<String, String>>, body: Bytes) -> Response {
    let name = q.get("filename").cloned().unwrap_or_default();
    let timestamp = q.get("timestamp").and_then(|t| t.parse::<f64>().ok());
    match blocking(move || node.contribute(&body, &name, timestamp)).await {
        Ok(c) => (StatusCode::CREATED, Json(c)).into_response(),
        Err(e) => node_error(e),
    }
}

async fn verify(State(node): State<Shared>, Path(content_id): Path<String>) -> Response {
    match blocking(move || node.consume(&content_id)).await {
        Ok((_, result)) => Json(result).into_response(),
        Err(e) => node_error(e),
    }
}

async fn authenticate(State(node): State<Shared>, body: Bytes) -> Response {
    match blocking(move || node.authenticate(&body)).await {
        Ok(result) => Json(result).into_response(),
        Err(e) => node_error(e),
    }
}

/// Serves `node` on an already bound listener until `shutdown` resolves.
pub async fn serve(
    node: Shared,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(node)).with_graceful_shutdown(shutdown).await
}

/// A node served from a background thread with its own runtime.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub node: Shared,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests and waits for the server thread.
    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Starts serving `node` on `listener` in a background thread.
pub fn spawn_server(node: Shared, listener: std::net::TcpListener) -> std::io::Result<ServerHandle> {
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let served = node.clone();
    let thread = std::thread::Builder::new().name(format!("node-{addr}")).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            serve(served, listener, async {
                let _ = rx.await;
            })
            .await
        })
    })?;
    Ok(ServerHandle { addr, node, stop: Some(tx), thread: Some(thread) })
}

