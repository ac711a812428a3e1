//! JSON-over-HTTP front end for a [`Coordinator`].
//!
//! | method | path                | reply                                          |
//! |--------|---------------------|------------------------------------------------|
//! | GET    | `/work?worker=ID`   | 200 + `WorkUnit`, or 204 when the queue is empty |
//! | POST   | `/result`           | 200 + `SubmitOutcome` (body: `ResultSubmission`) |
//! | GET    | `/status`           | 200 + `StatusSummary`                          |
//!
//! Malformed requests get 400, unknown paths 404, storage failures 500.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Method, Request, Response, Server};

use super::{Coordinator, ResultSubmission};
use crate::error::{Error, Result};

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests and joins the handler threads.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the handler threads exit (they only do on shutdown).
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on `threads` handlers.
pub fn serve(coord: Arc<Coordinator>, addr: &str, threads: usize) -> Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| Error::Http(format!("bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Http("server is not bound to an IP address".into()))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let threads = (0..threads.max(1))
        .map(|_| {
            let (server, stop, coord) = (server.clone(), stop.clone(), coord.clone());
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => handle(&coord, req),
                        Ok(None) => {}
                        Err(e) => {
                            log::error!("accept failed: {e}");
                            break;
                        }
                    }
                }
            })
        })
        .collect();
    log::info!("coordinator listening on {bound}");
    Ok(ServerHandle {
        addr: bound,
        stop,
        threads,
    })
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn reply(req: Request, code: u16, body: String) {
    let resp = Response::from_string(body).with_status_code(code).with_header(json_header());
    if let Err(e) = req.respond(resp) {
        log::warn!("failed to send response: {e}");
    }
}

fn reply_json<T: serde::Serialize>(req: Request, code: u16, value: &T) {
    match serde_json::to_string(value) {
        Ok(body) => reply(req, code, body),
        Err(e) => reply(req, 500, error_body(&e.to_string())),
    }
}

fn error_body(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn handle(coord: &Coordinator, mut req: Request) {
    let url = req.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    match (req.method(), path) {
        (Method::Get, "/work") => {
            let worker = form_urlencoded::parse(query.as_bytes())
                .find(|(k, _)| k == "worker")
                .map(|(_, v)| v.into_owned())
                .filter(|w| !w.is_empty());
            let Some(worker) = worker else {
                return reply(req, 400, error_body("missing worker query parameter"));
            };
            match coord.assign_work(&worker) {
                Ok(Some(unit)) => reply_json(req, 200, &unit),
                Ok(None) => {
                    let _ = req.respond(Response::empty(204));
                }
                Err(e) => reply(req, 500, error_body(&e.to_string())),
            }
        }
        (Method::Post, "/result") => {
            let mut body = String::new();
            if let Err(e) = req.as_reader().read_to_string(&mut body) {
                return reply(req, 400, error_body(&e.to_string()));
            }
            let sub: ResultSubmission = match serde_json::from_str(&body) {
                Ok(s) => s,
                Err(e) => return reply(req, 400, error_body(&format!("malformed submission: {e}"))),
            };
            match coord.submit_result(&sub) {
                Ok(outcome) => reply_json(req, 200, &outcome),
                Err(e) => reply(req, 500, error_body(&e.to_string())),
            }
        }
        (Method::Get, "/status") => reply_json(req, 200, &coord.status()),
        (_, "/work" | "/result" | "/status") => reply(req, 405, error_body("method not allowed")),
        _ => reply(req, 404, error_body("not found")),
    }
}
