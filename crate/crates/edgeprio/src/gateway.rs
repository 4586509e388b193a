//! HTTP service that receives documents and persists them.
//!
//! `POST /v1/streams/{stream_id}/documents/{index}` with the raw document
//! as the body and headers `X-Original-Name`, `X-Processed` (`0` or `1`) and
//! `X-Original-Size`. The body lands in `{storage}/{stream_id}/{index}{ext}`,
//! where `ext` comes from the original name. Replies `201` with
//! `{"stored_bytes": n, "replaced": bool}`; a repeated upload overwrites.

use std::fs;
use std::io::Write;
use std::net::{SocketAddr, TcpListener as StdListener};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

pub const DEFAULT_MAX_BODY: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    pub storage_dir: PathBuf,
    pub max_body: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadReceipt {
    pub stored_bytes: u64,
    pub replaced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

struct Shared {
    storage: PathBuf,
    tmp_counter: AtomicU64,
}

/// Builds the router over `storage_dir`.
pub fn router(storage_dir: PathBuf, max_body: usize) -> Router {
    let shared = Arc::new(Shared {
        storage: storage_dir,
        tmp_counter: AtomicU64::new(0),
    });
    Router::new()
        .route(
            "/v1/streams/{stream_id}/documents/{index}",
            post(handle_upload),
        )
        .layer(DefaultBodyLimit::max(max_body))
        .with_state(shared)
}

fn reject(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

fn valid_stream_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s != "."
        && s != ".."
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

/// Extension of the original file name, kept only if short and alphanumeric.
fn extension_of(name: &str) -> String {
    match Path::new(name).extension().and_then(|e| e.to_str()) {
        Some(e)
            if !e.is_empty() && e.len() <= 8 && e.bytes().all(|b| b.is_ascii_alphanumeric()) =>
        {
            format!(".{}", e.to_ascii_lowercase())
        }
        _ => String::new(),
    }
}

fn header<'a>(headers: &'a HeaderMap, name: &str) -> Result<&'a str, Response> {
    headers
        .get(name)
        .ok_or_else(|| reject(StatusCode::BAD_REQUEST, format!("missing header {name}")))?
        .to_str()
        .map_err(|_| {
            reject(
                StatusCode::BAD_REQUEST,
                format!("header {name} is not text"),
            )
        })
}

async fn handle_upload(
    State(shared): State<Arc<Shared>>,
    UrlPath((stream_id, index)): UrlPath<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    if !valid_stream_id(&stream_id) {
        return reject(StatusCode::BAD_REQUEST, "invalid stream id");
    }
    let Ok(index) = index.parse::<u32>() else {
        return reject(
            StatusCode::BAD_REQUEST,
            "document index must be a non-negative integer",
        );
    };
    let name = match header(&headers, "x-original-name") {
        Ok(n) if !n.is_empty() => n,
        Ok(_) => return reject(StatusCode::BAD_REQUEST, "empty X-Original-Name"),
        Err(r) => return r,
    };
    match header(&headers, "x-processed") {
        Ok("0" | "1") => {}
        Ok(_) => return reject(StatusCode::BAD_REQUEST, "X-Processed must be 0 or 1"),
        Err(r) => return r,
    }
    match header(&headers, "x-original-size").map(str::parse::<u64>) {
        Ok(Ok(_)) => {}
        Ok(Err(_)) => {
            return reject(
                StatusCode::BAD_REQUEST,
                "X-Original-Size must be a decimal byte count",
            )
        }
        Err(r) => return r,
    }

    let dir = shared.storage.join(&stream_id);
    let target = dir.join(format!("{index}{}", extension_of(name)));
    let tmp = dir.join(format!(
        ".{index}.{}.{}.part",
        std::process::id(),
        shared.tmp_counter.fetch_add(1, Ordering::Relaxed)
    ));
    let stored = tokio::task::spawn_blocking(move || persist(&dir, &tmp, &target, &body)).await;
    match stored {
        Ok(Ok(receipt)) => (StatusCode::CREATED, Json(receipt)).into_response(),
        Ok(Err(e)) => {
            log::error!("storage failure: {e}");
            reject(StatusCode::INTERNAL_SERVER_ERROR, "storage failure")
        }
        Err(e) => {
            log::error!("storage task failed: {e}");
            reject(StatusCode::INTERNAL_SERVER_ERROR, "storage failure")
        }
    }
}

fn persist(dir: &Path, tmp: &Path, target: &Path, body: &[u8]) -> std::io::Result<UploadReceipt> {
    fs::create_dir_all(dir)?;
    let result = (|| {
        let mut f = fs::File::create(tmp)?;
        f.write_all(body)?;
        f.sync_all()?;
        let replaced = target.exists();
        fs::rename(tmp, target)?;
        Ok(UploadReceipt {
            stored_bytes: body.len() as u64,
            replaced,
        })
    })();
    if result.is_err() {
        let _ = fs::remove_file(tmp);
    }
    result
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    config: &GatewayConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    fs::create_dir_all(&config.storage_dir)?;
    let app = router(config.storage_dir.clone(), config.max_body);
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}

/// Runs the gateway on the current thread until the process is interrupted.
pub fn run_blocking(config: &GatewayConfig) -> std::io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(config.listen).await?;
        log::info!("gateway listening on {}", listener.local_addr()?);
        serve(listener, config, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

/// A gateway running on a background thread.
pub struct GatewayHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl GatewayHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(std::io::Error::other("gateway thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Binds `config.listen` (port 0 picks a free port) and serves on a new thread.
pub fn spawn(config: GatewayConfig) -> std::io::Result<GatewayHandle> {
    fs::create_dir_all(&config.storage_dir)?;
    let std_listener = StdListener::bind(config.listen)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let thread = std::thread::Builder::new()
        .name("gateway".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                serve(listener, &config, async {
                    let _ = rx.await;
                })
                .await
            })
        })?;
    Ok(GatewayHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}
