//! A stand-in for a Jupyter notebook server: a few HTTP endpoints, echo and
//! redirect helpers for proxy tests, and a kernel channels WebSocket that
//! evaluates integer `a+b` expressions.
//!
//! | route                               | behaviour                                 |
//! |-------------------------------------|-------------------------------------------|
//! | `GET /`, `GET /tree`, `GET /notebooks/*` | HTML linking back to the mock's own authority |
//! | `GET /api/kernels`                  | JSON list with one idle python3 kernel     |
//! | `GET /api/contents/<name>`          | contents model wrapping a sample notebook  |
//! | `* /echo/...`                       | request body echoed; `?status=NNN` picks the status |
//! | `GET /redirect`                     | `302` to `http://<mock authority>/tree`   |
//! | `WS /api/kernels/<id>/channels`     | execute_request handling                   |
//! | `WS /ws/echo[?burst=N]`             | frame echo, optionally N numbered frames first |
//! | `WS /ws/close?code=C`               | closes immediately with code C             |

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use futures_util::{SinkExt, StreamExt};
use http::{header, Method, Request, Response, StatusCode};
use http_body_util::BodyExt;
use hyper::body::Incoming;
use hyper_util::rt::TokioIo;
use serde_json::json;
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::protocol::{CloseFrame, Role};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

use super::message::{parse_message, Header, KernelMessage};
use crate::server::{self, full, Body, RunningServer};

pub const MOCK_KERNEL_ID: &str = "6f1f2c3e-9d0a-4b8e-8f53-6c1d2b7a9e10";

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    /// Added before answering every HTTP request.
    pub latency: Duration,
}

struct MockState {
    authority: String,
    latency: Duration,
    counters: Mutex<HashMap<String, u64>>,
}

impl MockState {
    fn next_count(&self, session: &str) -> u64 {
        let mut counters = self.counters.lock().expect("counter lock poisoned");
        let c = counters.entry(session.to_string()).or_insert(0);
        *c += 1;
        *c
    }
}

pub struct MockUpstream {
    server: RunningServer,
}

impl MockUpstream {
    pub fn local_addr(&self) -> SocketAddr {
        self.server.local_addr()
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.local_addr())
    }

    pub async fn shutdown(self) {
        self.server.shutdown().await;
    }
}

pub async fn mock_kernel_serve(
    address: SocketAddr,
    options: MockOptions,
) -> io::Result<MockUpstream> {
    let listener = server::bind(address)?;
    let local = listener.local_addr()?;
    let state = Arc::new(MockState {
        authority: local.to_string(),
        latency: options.latency,
        counters: Mutex::new(HashMap::new()),
    });
    let server = server::spawn(
        listener,
        None,
        move |req, _peer| {
            let state = state.clone();
            async move { route(state, req).await }
        },
        Duration::from_secs(5),
    )?;
    Ok(MockUpstream { server })
}

/// Integer `a+b`, the only expression the mock kernel understands.
pub fn evaluate(code: &str) -> Result<i64, String> {
    let (a, b) = code
        .split_once('+')
        .ok_or_else(|| format!("cannot evaluate `{code}`"))?;
    let a: i64 = a
        .trim()
        .parse()
        .map_err(|_| format!("`{}` is not an integer", a.trim()))?;
    let b: i64 = b
        .trim()
        .parse()
        .map_err(|_| format!("`{}` is not an integer", b.trim()))?;
    a.checked_add(b)
        .ok_or_else(|| "integer overflow".to_string())
}

fn html(status: StatusCode, body: String) -> Response<Body> {
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "text/html; charset=utf-8")
        .body(full(body))
        .expect("static response")
}

fn json_response(value: serde_json::Value) -> Response<Body> {
    Response::builder()
        .header(header::CONTENT_TYPE, "application/json")
        .body(full(value.to_string()))
        .expect("static response")
}

fn sample_notebook() -> serde_json::Value {
    json!({
        "nbformat": 4,
        "nbformat_minor": 5,
        "metadata": {"title": "Mock Notebook", "kernelspec": {"name": "python3", "display_name": "Python 3"}},
        "cells": [
            {"cell_type": "markdown", "metadata": {"editable": true}, "source": "# Mock"},
            {"cell_type": "code", "metadata": {}, "source": "1+1", "execution_count": null, "outputs": []}
        ]
    })
}

async fn route(state: Arc<MockState>, req: Request<Incoming>) -> Response<Body> {
    let path = req.uri().path().to_string();
    let query = req.uri().query().unwrap_or("").to_string();

    if server::is_websocket_upgrade(&req) {
        return websocket(state, req, &path, &query);
    }
    if !state.latency.is_zero() {
        tokio::time::sleep(state.latency).await;
    }

    let auth = &state.authority;
    match (req.method(), path.as_str()) {
        (&Method::GET, "/") | (&Method::GET, "/tree") => html(
            StatusCode::OK,
            format!(
                "<!DOCTYPE html><html><head><title>Mock Jupyter</title></head><body>\
                 <a href=\"http://{auth}/tree\">tree</a> \
                 <script src=\"http://{auth}/static/main.js\"></script></body></html>"
            ),
        ),
        (&Method::GET, p) if p.starts_with("/notebooks/") => html(
            StatusCode::OK,
            format!("<!DOCTYPE html><html><body data-ws-url=\"ws://{auth}/api/kernels/{MOCK_KERNEL_ID}/channels\"></body></html>"),
        ),
        (&Method::GET, "/api/kernels") => json_response(json!([{
            "id": MOCK_KERNEL_ID,
            "name": "python3",
            "last_activity": "2019-05-14T10:21:07.955441Z",
            "execution_state": "idle",
            "connections": 0
        }])),
        (&Method::GET, p) if p.starts_with("/api/contents/") => {
            let name = p.trim_start_matches("/api/contents/");
            json_response(json!({
                "name": name,
                "path": name,
                "type": "notebook",
                "format": "json",
                "writable": true,
                "content": sample_notebook()
            }))
        }
        (&Method::GET, "/redirect") => Response::builder()
            .status(StatusCode::FOUND)
            .header(header::LOCATION, format!("http://{auth}/tree"))
            .body(full(format!("moved to http://{auth}/tree")))
            .expect("static response"),
        (_, p) if p.starts_with("/echo") => echo(req, &query).await,
        _ => html(StatusCode::NOT_FOUND, "not found".into()),
    }
}

async fn echo(req: Request<Incoming>, query: &str) -> Response<Body> {
    let status = query
        .split('&')
        .find_map(|kv| kv.strip_prefix("status="))
        .and_then(|s| s.parse::<u16>().ok())
        .and_then(|s| StatusCode::from_u16(s).ok())
        .unwrap_or(StatusCode::OK);
    let method = req.method().to_string();
    let target = req
        .uri()
        .path_and_query()
        .map(|p| p.to_string())
        .unwrap_or_default();
    let names: Vec<String> = req
        .headers()
        .keys()
        .map(|k| k.as_str().to_string())
        .collect();
    let host = req
        .headers()
        .get(header::HOST)
        .and_then(|h| h.to_str().ok())
        .unwrap_or("")
        .to_string();
    let forwarded_for = req
        .headers()
        .get("x-forwarded-for")
        .and_then(|h| h.to_str().ok())
        .unwrap_or("")
        .to_string();
    let content_type = req.headers().get(header::CONTENT_TYPE).cloned();
    let body = match req.into_body().collect().await {
        Ok(b) => b.to_bytes(),
        Err(_) => Bytes::new(),
    };
    let mut resp = Response::builder()
        .status(status)
        .header("x-echo-method", method)
        .header("x-echo-target", target)
        .header("x-echo-headers", names.join(","))
        .header("x-echo-host", host)
        .header("x-echo-forwarded-for", forwarded_for)
        .header("keep-alive", "timeout=5")
        .header("x-hop", "1")
        .header(header::CONNECTION, "x-hop");
    if let Some(ct) = content_type {
        resp = resp.header(header::CONTENT_TYPE, ct);
    }
    resp.body(full(body)).expect("echo response")
}

fn websocket(
    state: Arc<MockState>,
    mut req: Request<Incoming>,
    path: &str,
    query: &str,
) -> Response<Body> {
    let Some(resp) = server::websocket_accept(&req, None) else {
        return html(StatusCode::BAD_REQUEST, "missing Sec-WebSocket-Key".into());
    };
    enum Kind {
        Kernel,
        Echo(usize),
        Close(u16),
    }
    let param = |name: &str| {
        query
            .split('&')
            .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
            .and_then(|v| v.parse::<u64>().ok())
    };
    let kind = if path.starts_with("/api/kernels/") && path.ends_with("/channels") {
        Kind::Kernel
    } else if path == "/ws/echo" {
        Kind::Echo(param("burst").unwrap_or(0) as usize)
    } else if path == "/ws/close" {
        Kind::Close(param("code").unwrap_or(1000) as u16)
    } else {
        return html(StatusCode::NOT_FOUND, "no such socket".into());
    };

    let on_upgrade = hyper::upgrade::on(&mut req);
    tokio::spawn(async move {
        let upgraded = match on_upgrade.await {
            Ok(u) => u,
            Err(err) => {
                tracing::debug!(error = %err, "mock upgrade failed");
                return;
            }
        };
        let ws = WebSocketStream::from_raw_socket(TokioIo::new(upgraded), Role::Server, None).await;
        match kind {
            Kind::Kernel => kernel_channel(state, ws).await,
            Kind::Echo(burst) => echo_channel(ws, burst).await,
            Kind::Close(code) => {
                let mut ws = ws;
                let _ = ws
                    .close(Some(CloseFrame {
                        code: CloseCode::from(code),
                        reason: "bye".into(),
                    }))
                    .await;
                while let Some(Ok(_)) = ws.next().await {}
            }
        }
    });
    resp
}

async fn echo_channel<S>(ws: WebSocketStream<S>, burst: usize)
where
    S: tokio::io::AsyncRead + tokio::io::AsyncWrite + Unpin,
{
    let (mut tx, mut rx) = ws.split();
    let (queue_tx, mut queue_rx) = tokio::sync::mpsc::unbounded_channel::<Message>();
    for i in 0..burst {
        let _ = queue_tx.send(Message::Text(format!("up-{i}")));
    }
    let writer = async move {
        while let Some(msg) = queue_rx.recv().await {
            let closing = msg.is_close();
            if tx.send(msg).await.is_err() || closing {
                break;
            }
        }
    };
    let reader = async move {
        while let Some(Ok(msg)) = rx.next().await {
            match msg {
                Message::Text(_) | Message::Binary(_) => {
                    if queue_tx.send(msg).is_err() {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    };
    tokio::join!(writer, reader);
}

async fn kernel_channel<S>(state: Arc<MockState>, mut ws: WebSocketStream<S>)
where
    S: tokio::io::AsyncRead + tokio::io::AsyncWrite + Unpin,
{
    while let Some(frame) = ws.next().await {
        let raw = match frame {
            Ok(Message::Text(t)) => t.into_bytes(),
            Ok(Message::Binary(b)) => b,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        let replies = match parse_message(&raw) {
            Ok(request) => handle_kernel_message(&state, &request),
            Err(err) => vec![malformed(&err.to_string())],
        };
        for reply in replies {
            if ws.send(Message::Text(reply.to_json())).await.is_err() {
                return;
            }
        }
    }
}

fn malformed(reason: &str) -> KernelMessage {
    KernelMessage {
        header: Header::new("error", "", "kernel"),
        parent_header: None,
        metadata: Default::default(),
        content: json!({"ename": "MalformedMessage", "evalue": reason, "traceback": []})
            .as_object()
            .cloned()
            .unwrap_or_default(),
        channel: Some("iopub".into()),
    }
}

fn status(parent: &KernelMessage, state: &str) -> KernelMessage {
    KernelMessage::reply_to(parent, "status", json!({"execution_state": state}), "iopub")
}

fn handle_kernel_message(state: &MockState, request: &KernelMessage) -> Vec<KernelMessage> {
    match request.msg_type() {
        "execute_request" => {
            let code = request
                .content
                .get("code")
                .and_then(|c| c.as_str())
                .unwrap_or("");
            let count = state.next_count(&request.header.session);
            let (middle, reply_content) = match evaluate(code) {
                Ok(v) => (
                    KernelMessage::reply_to(
                        request,
                        "stream",
                        json!({"name": "stdout", "text": v.to_string()}),
                        "iopub",
                    ),
                    json!({"status": "ok", "execution_count": count, "user_expressions": {}, "payload": []}),
                ),
                Err(reason) => {
                    let traceback = vec![format!("EvalError: {reason}")];
                    (
                        KernelMessage::reply_to(
                            request,
                            "error",
                            json!({"ename": "EvalError", "evalue": reason, "traceback": traceback}),
                            "iopub",
                        ),
                        json!({"status": "error", "execution_count": count, "ename": "EvalError", "evalue": reason, "traceback": traceback}),
                    )
                }
            };
            vec![
                status(request, "busy"),
                middle,
                KernelMessage::reply_to(request, "execute_reply", reply_content, "shell"),
                status(request, "idle"),
            ]
        }
        "kernel_info_request" => vec![
            status(request, "busy"),
            KernelMessage::reply_to(
                request,
                "kernel_info_reply",
                json!({
                    "status": "ok",
                    "protocol_version": super::PROTOCOL_VERSION,
                    "implementation": "notebook-gate-mock",
                    "language_info": {"name": "arithmetic"}
                }),
                "shell",
            ),
            status(request, "idle"),
        ],
        other => vec![KernelMessage::reply_to(
            request,
            "error",
            json!({"ename": "UnsupportedMessage", "evalue": format!("`{other}` is not handled"), "traceback": []}),
            "shell",
        )],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        assert_eq!(evaluate("1+1"), Ok(2));
        assert_eq!(evaluate(" 2 + 40 "), Ok(42));
        assert_eq!(evaluate("-5+3"), Ok(-2));
        assert!(evaluate("nonsense").is_err());
        assert!(evaluate("1+x").is_err());
        assert!(evaluate(&format!("{}+1", i64::MAX)).is_err());
    }

    #[test]
    fn execute_sequence_is_parented_and_ordered() {
        let state = MockState {
            authority: String::new(),
            latency: Duration::ZERO,
            counters: Mutex::new(HashMap::new()),
        };
        let req = super::super::make_execute_request("1+1", "s");
        let out = handle_kernel_message(&state, &req);
        let types: Vec<_> = out.iter().map(|m| m.msg_type().to_string()).collect();
        assert_eq!(types, ["status", "stream", "execute_reply", "status"]);
        assert!(out.iter().all(|m| super::super::correlate(m, &req)));
        assert_eq!(out[0].content["execution_state"], "busy");
        assert_eq!(out[3].content["execution_state"], "idle");
        assert_eq!(out[1].content["text"], "2");
        assert_eq!(out[2].content["execution_count"], 1);

        let bad = super::super::make_execute_request("nonsense", "s");
        let out = handle_kernel_message(&state, &bad);
        assert_eq!(out[2].content["status"], "error");
        assert_eq!(out[2].content["ename"], "EvalError");
        assert_eq!(out[2].content["execution_count"], 2);
    }
}
