//! HTTP front for a [`ReviewStore`].
//!
//! Requests are served by a few worker threads; the store sits behind one
//! mutex so verdict appends are serialized.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use super::{now_millis, Decision, ReviewStore, Verdict};
use crate::error::{Error, Result};
use crate::sequence_io::frame_paths;

const WORKERS: usize = 4;
const MAX_BODY: u64 = 64 * 1024;

#[derive(Serialize)]
struct QueueItem {
    sequence_id: String,
    frame_url: String,
    mask_url: String,
}

#[derive(Deserialize)]
struct VerdictBody {
    sequence_id: String,
    decision: Decision,
    #[serde(default)]
    elapsed_ms: u64,
    #[serde(default)]
    reviewer: Option<String>,
}

pub struct ServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (port 0 picks a free port) and starts serving.
pub fn serve(store: ReviewStore, addr: &str) -> Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| Error::Server(e.to_string()))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Server("not bound to an IP socket".into()))?;
    let server = Arc::new(server);
    let store = Arc::new(Mutex::new(store));
    let workers = (0..WORKERS)
        .map(|_| {
            let server = Arc::clone(&server);
            let store = Arc::clone(&store);
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    handle(req, &store);
                }
            })
        })
        .collect();
    log::info!("review service listening on http://{bound}");
    Ok(ServerHandle {
        server,
        addr: bound,
        workers,
    })
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header")
}

fn json<T: Serialize>(value: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let body = serde_json::to_vec(value).unwrap_or_default();
    Response::from_data(body).with_header(header("Content-Type", "application/json"))
}

fn text(status: u16, msg: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(msg)
        .with_status_code(status)
        .with_header(header("Content-Type", "text/plain; charset=utf-8"))
}

fn png(bytes: Vec<u8>) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(bytes).with_header(header("Content-Type", "image/png"))
}

fn error_response(e: &Error) -> Response<std::io::Cursor<Vec<u8>>> {
    let status = match e {
        Error::UnknownId(_) => 404,
        Error::InvalidArgument(_) => 400,
        _ => 500,
    };
    text(status, &e.to_string())
}

fn handle(mut req: Request, store: &Mutex<ReviewStore>) {
    let url = req.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((url.as_str(), ""));
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    let method = req.method().clone();
    let response = match (&method, segments.as_slice()) {
        (Method::Get, ["api", "queue"]) => queue(store, query),
        (Method::Get, ["api", "progress"]) => json(&store.lock().unwrap().progress()),
        (Method::Get, ["api", "image", id, "frame", index]) => frame_png(store, id, index),
        (Method::Get, ["api", "image", id, "mask"]) => mask_png(store, id),
        (Method::Post, ["api", "verdicts"]) => post_verdict(store, &mut req),
        (_, ["api", ..]) => text(404, "no such endpoint"),
        _ => text(404, "not found"),
    };
    if let Err(e) = req.respond(response) {
        log::warn!("failed to send response for {url}: {e}");
    }
}

fn queue(store: &Mutex<ReviewStore>, query: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let mut limit = 10usize;
    for pair in query.split('&') {
        if let Some(v) = pair.strip_prefix("limit=") {
            match v.parse() {
                Ok(n) => limit = n,
                Err(_) => return text(400, "limit must be a non-negative integer"),
            }
        }
    }
    let store = store.lock().unwrap();
    let items: Vec<QueueItem> = store
        .queue
        .pending()
        .iter()
        .take(limit)
        .map(|id| {
            let mid = store.manifest.entry(id).map(|e| e.frame_count / 2).unwrap_or(0);
            QueueItem {
                sequence_id: id.clone(),
                frame_url: format!("/api/image/{id}/frame/{mid}"),
                mask_url: format!("/api/image/{id}/mask"),
            }
        })
        .collect();
    json(&items)
}

fn frame_png(store: &Mutex<ReviewStore>, id: &str, index: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let Ok(index) = index.parse::<usize>() else {
        return text(400, "frame index must be an integer");
    };
    // The id is checked against the manifest before touching the disk.
    let dir = match store.lock().unwrap().sequence_dir(id) {
        Ok(d) => d,
        Err(e) => return error_response(&e),
    };
    let paths = match frame_paths(&dir) {
        Ok(p) => p,
        Err(e) => return error_response(&e),
    };
    match paths.get(index) {
        Some(p) => match std::fs::read(p) {
            Ok(bytes) => png(bytes),
            Err(e) => text(500, &e.to_string()),
        },
        None => text(404, "frame index out of range"),
    }
}

fn mask_png(store: &Mutex<ReviewStore>, id: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let path = {
        let s = store.lock().unwrap();
        match s.sequence_dir(id) {
            Ok(d) => d.join(s.mask_kind.mask_file_name()),
            Err(e) => return error_response(&e),
        }
    };
    match std::fs::read(&path) {
        Ok(bytes) => png(bytes),
        Err(_) => text(404, "mask not generated for this sequence"),
    }
}

fn post_verdict(store: &Mutex<ReviewStore>, req: &mut Request) -> Response<std::io::Cursor<Vec<u8>>> {
    let mut body = String::new();
    if req.as_reader().take(MAX_BODY).read_to_string(&mut body).is_err() {
        return text(400, "unreadable body");
    }
    let parsed: VerdictBody = match serde_json::from_str(&body) {
        Ok(b) => b,
        Err(e) => return text(400, &format!("bad verdict: {e}")),
    };
    let verdict = Verdict {
        sequence_id: parsed.sequence_id,
        decision: parsed.decision,
        timestamp: now_millis(),
        elapsed_ms: parsed.elapsed_ms,
        reviewer: parsed.reviewer.unwrap_or_else(|| "local".into()),
    };
    match store.lock().unwrap().record(verdict) {
        Ok(_) => Response::from_data(Vec::new()).with_status_code(204),
        Err(e) => error_response(&e),
    }
}
