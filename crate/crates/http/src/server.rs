//! Router plumbing shared by the service surfaces.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use cbdc_core::{ErrorBody, WireError};
use serde::Serialize;
use tokio::sync::oneshot;

use crate::API_KEY_HEADER;

/// API key → caller name.
#[derive(Debug, Clone, Default)]
pub struct ApiKeys(BTreeMap<String, String>);

impl ApiKeys {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, caller: impl Into<String>) -> Self {
        self.0.insert(key.into(), caller.into());
        self
    }

    pub fn caller(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

/// State every router carries: the service handle and the key table.
#[derive(Debug)]
pub struct AppState<H> {
    pub svc: H,
    pub keys: ApiKeys,
}

pub type Shared<H> = Arc<AppState<H>>;

fn error_response(status: u16, body: ErrorBody) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(body)).into_response()
}

fn unauthorized() -> Response {
    error_response(401, ErrorBody::new("UNAUTHORIZED", "missing or unknown API key"))
}

fn bad_request(message: impl Into<String>) -> Response {
    error_response(400, ErrorBody::new("BAD_REQUEST", message))
}

/// Authenticates, then runs `f` with the caller name on the blocking pool:
/// services block on journal writes and on calls to other services.
pub(crate) async fn serve<H, R, E, F>(state: Shared<H>, headers: HeaderMap, f: F) -> Response
where
    H: Send + Sync + 'static,
    R: Serialize + Send + 'static,
    E: WireError + Send + 'static,
    F: FnOnce(&H, &str) -> Result<R, E> + Send + 'static,
{
    let key = headers.get(API_KEY_HEADER).and_then(|v| v.to_str().ok()).unwrap_or_default();
    let Some(caller) = state.keys.caller(key).map(str::to_string) else {
        return unauthorized();
    };
    let joined = tokio::task::spawn_blocking(move || f(&state.svc, &caller)).await;
    match joined {
        Ok(Ok(value)) => (StatusCode::OK, Json(value)).into_response(),
        Ok(Err(e)) => error_response(e.http_status(), e.to_body()),
        Err(panic) => error_response(500, ErrorBody::new("INTERNAL", panic.to_string())),
    }
}

/// A router bound to a loopback port, served from its own thread.
#[derive(Debug)]
pub struct Server {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    /// Serves on an ephemeral port of 127.0.0.1.
    pub fn spawn(router: Router) -> io::Result<Server> {
        Self::bind("127.0.0.1:0".parse().expect("literal address"), router)
    }

    pub fn bind(addr: SocketAddr, router: Router) -> io::Result<Server> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::Builder::new()
            .name(format!("http-{addr}"))
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                    let _ = axum::serve(listener, router)
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await;
                });
            })?;
        Ok(Server {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// JSON request body whose rejections use the `{code, message}` error shape.
#[derive(Debug)]
pub struct JsonBody<T>(pub T);

impl<S, T> axum::extract::FromRequest<S> for JsonBody<T>
where
    S: Send + Sync,
    T: serde::de::DeserializeOwned,
{
    type Rejection = Response;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Response> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(JsonBody(v)),
            Err(e) => Err(bad_request(e.body_text())),
        }
    }
}
