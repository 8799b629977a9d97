//! Framed JSON service over TCP.
//!
//! Requests are `{"op": ..., "payload": ...}`. Successful responses echo the
//! op; failures are `{"error": code, "detail": text}` and leave the
//! connection open. An oversize frame gets one error reply and a close.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value as Json};
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, watch};
use tokio::task::JoinSet;
use unipool_core::query::{retrieve, QueryRequirement, RetrievalParams};
use unipool_core::{KnowledgeEntry, Partition, RawRecord};

use crate::config::Config;
use crate::pipeline::Ingestor;
use crate::protocol::{encode_frame, read_frame, FrameError, MAX_FRAME_BYTES, QUERY_RESPONSE_HEAD};
use crate::store::PoolStore;

/// How long shutdown waits for open connections to finish their request.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(5);

pub struct Service {
    ingestor: Ingestor,
    params: RetrievalParams,
}

#[derive(Deserialize)]
struct IngestPayload {
    records: Vec<RawRecord>,
}

#[derive(Deserialize)]
struct RefreshPayload {
    intersection_id: String,
    entries: Vec<KnowledgeEntry>,
}

pub fn error_body(code: &str, detail: impl std::fmt::Display) -> Vec<u8> {
    serde_json::to_vec(&json!({"error": code, "detail": detail.to_string()})).expect("json object")
}

fn payload_of<T: for<'de> Deserialize<'de>>(req: &mut Json) -> Result<T, Vec<u8>> {
    let p = req.get_mut("payload").map(Json::take).unwrap_or(Json::Null);
    serde_json::from_value(p).map_err(|e| error_body("invalid_payload", e))
}

impl Service {
    pub fn new(store: Arc<PoolStore>, cfg: &Config) -> Self {
        Service {
            ingestor: Ingestor::new(store, cfg.thresholds).with_sync_window(cfg.sync_window_us),
            params: cfg.retrieval.clone(),
        }
    }

    pub fn from_parts(ingestor: Ingestor, params: RetrievalParams) -> Self {
        Service { ingestor, params }
    }

    pub fn store(&self) -> &Arc<PoolStore> {
        self.ingestor.store()
    }

    /// Handles one request body and returns the response body.
    pub fn handle(&self, body: &[u8]) -> Vec<u8> {
        let mut req: Json = match serde_json::from_slice(body) {
            Ok(v @ Json::Object(_)) => v,
            Ok(_) => return error_body("malformed_request", "body must be a JSON object"),
            Err(e) => return error_body("malformed_json", e),
        };
        let op = match req.get("op").and_then(Json::as_str) {
            Some(op) => op.to_string(),
            None => return error_body("missing_op", "request needs a string `op`"),
        };
        let result = match op.as_str() {
            "ingest" => self.ingest(&mut req),
            "query" => self.query(&mut req),
            "stats" => Ok(json_response("stats", &self.store().stats())),
            "refresh_static" => self.refresh(&mut req),
            other => Err(error_body("unknown_op", format!("unsupported op `{other}`"))),
        };
        result.unwrap_or_else(|e| e)
    }

    fn ingest(&self, req: &mut Json) -> Result<Vec<u8>, Vec<u8>> {
        let p: IngestPayload = payload_of(req)?;
        Ok(json_response("ingest", &self.ingestor.ingest(p.records)))
    }

    fn query(&self, req: &mut Json) -> Result<Vec<u8>, Vec<u8>> {
        let r: QueryRequirement = payload_of(req)?;
        let ctx = retrieve(&**self.store(), &r, &self.params).map_err(|e| error_body(e.code(), e))?;
        // The payload goes out byte-for-byte as serialized.
        let mut out = Vec::with_capacity(QUERY_RESPONSE_HEAD.len() + ctx.payload.len() + 1);
        out.extend_from_slice(QUERY_RESPONSE_HEAD.as_bytes());
        out.extend_from_slice(ctx.payload.as_bytes());
        out.push(b'}');
        Ok(out)
    }

    fn refresh(&self, req: &mut Json) -> Result<Vec<u8>, Vec<u8>> {
        let p: RefreshPayload = payload_of(req)?;
        let entries = p
            .entries
            .into_iter()
            .map(|mut e| {
                e.partition.get_or_insert(Partition::Static);
                e
            })
            .collect();
        let receipt = self
            .store()
            .refresh_static(&p.intersection_id, entries)
            .map_err(|e| error_body(e.code(), e))?;
        Ok(json_response("refresh_static", &receipt))
    }
}

fn json_response<T: serde::Serialize>(op: &str, payload: &T) -> Vec<u8> {
    serde_json::to_vec(&json!({"op": op, "payload": payload})).expect("serializable response")
}

async fn write_body(stream: &mut TcpStream, body: &[u8]) -> io::Result<()> {
    let frame = match encode_frame(body) {
        Ok(f) => f,
        Err(e) => encode_frame(&error_body("response_too_large", e)).expect("small error body"),
    };
    stream.write_all(&frame).await
}

async fn connection(mut stream: TcpStream, service: Arc<Service>, mut stop: watch::Receiver<bool>) {
    let peer = stream.peer_addr().ok();
    loop {
        let frame = tokio::select! {
            f = read_frame(&mut stream) => f,
            _ = stop.changed() => break,
        };
        match frame {
            Ok(Some(body)) => {
                let svc = service.clone();
                let reply = match tokio::task::spawn_blocking(move || svc.handle(&body)).await {
                    Ok(r) => r,
                    Err(e) => error_body("internal", e),
                };
                if let Err(e) = write_body(&mut stream, &reply).await {
                    log::debug!("{peer:?}: write failed: {e}");
                    break;
                }
            }
            Ok(None) => break,
            Err(FrameError::Oversize(n)) => {
                log::warn!("{peer:?}: closing after {n}-byte frame (cap {MAX_FRAME_BYTES})");
                let _ = write_body(&mut stream, &error_body("frame_too_large", FrameError::Oversize(n))).await;
                break;
            }
            Err(e) => {
                log::debug!("{peer:?}: {e}");
                break;
            }
        }
    }
    let _ = stream.shutdown().await;
}

/// Accepts connections until `shutdown` resolves, then drains open
/// connections and syncs the store.
pub async fn serve<F>(listener: TcpListener, service: Arc<Service>, compact_interval: Option<Duration>, shutdown: F) -> io::Result<()>
where
    F: Future<Output = ()>,
{
    let (stop_tx, stop_rx) = watch::channel(false);
    let mut conns = JoinSet::new();
    if let Some(every) = compact_interval.filter(|d| !d.is_zero()) {
        let store = service.store().clone();
        let mut stop = stop_rx.clone();
        conns.spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.tick().await;
            loop {
                tokio::select! {
                    _ = tick.tick() => {}
                    _ = stop.changed() => break,
                }
                let s = store.clone();
                match tokio::task::spawn_blocking(move || s.compact_dynamic()).await {
                    Ok(Ok(n)) if n > 0 => log::info!("compaction removed {n} rows"),
                    Ok(Err(e)) => log::error!("compaction failed: {e}"),
                    _ => {}
                }
            }
        });
    }
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    let _ = stream.set_nodelay(true);
                    conns.spawn(connection(stream, service.clone(), stop_rx.clone()));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
            _ = &mut shutdown => break,
        }
    }
    drop(listener);
    let _ = stop_tx.send(true);
    if tokio::time::timeout(DRAIN_TIMEOUT, async { while conns.join_next().await.is_some() {} })
        .await
        .is_err()
    {
        log::warn!("aborting connections still open after {DRAIN_TIMEOUT:?}");
        conns.abort_all();
    }
    let store = service.store().clone();
    tokio::task::spawn_blocking(move || store.sync())
        .await
        .map_err(io::Error::other)?
        .map_err(io::Error::other)
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

/// A server on its own runtime thread, for tests and embedding.
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(service: Arc<Service>, bind: &str) -> io::Result<BackgroundServer> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = runtime.block_on(TcpListener::bind(bind))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(listener, service, None, async {
                let _ = rx.await;
            }))
        });
        Ok(BackgroundServer {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreOptions;

    fn service() -> Service {
        Service::new(Arc::new(PoolStore::in_memory(StoreOptions::default())), &Config::default())
    }

    fn reply(s: &Service, body: &str) -> Json {
        serde_json::from_slice(&s.handle(body.as_bytes())).unwrap()
    }

    #[test]
    fn error_codes() {
        let s = service();
        assert_eq!(reply(&s, "{nope")["error"], "malformed_json");
        assert_eq!(reply(&s, "[1]")["error"], "malformed_request");
        assert_eq!(reply(&s, r#"{"payload":{}}"#)["error"], "missing_op");
        assert_eq!(reply(&s, r#"{"op":"drop"}"#)["error"], "unknown_op");
        assert_eq!(reply(&s, r#"{"op":"query","payload":{"intent":3}}"#)["error"], "invalid_payload");
    }

    #[test]
    fn stats_on_empty_store() {
        let v = reply(&service(), r#"{"op":"stats","payload":null}"#);
        assert_eq!(v["payload"]["total"], 0);
    }
}
