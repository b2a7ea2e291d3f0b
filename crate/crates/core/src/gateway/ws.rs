//! WebSocket reverse proxy: handshake upstream first, then answer the
//! client's upgrade and relay frames with one pump per direction.

use std::net::SocketAddr;
use std::time::Duration;

use bytes::Bytes;
use futures_util::{Sink, SinkExt, Stream, StreamExt};
use http::{header, HeaderValue, Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::protocol::Role;
use tokio_tungstenite::tungstenite::{Error as WsError, Message};
use tokio_tungstenite::WebSocketStream;

use super::pipeline::plain;
use super::proxy::{forwarded_headers, upstream_target};
use super::GatewayState;
use crate::server::{self, Body, BoxError};

/// How long the second pump may run after the first one stops.
const CLOSE_GRACE: Duration = Duration::from_secs(5);

const FORWARDED: [header::HeaderName; 7] = [
    header::COOKIE,
    header::ORIGIN,
    header::USER_AGENT,
    header::AUTHORIZATION,
    header::SEC_WEBSOCKET_PROTOCOL,
    header::HeaderName::from_static("x-forwarded-for"),
    header::HeaderName::from_static("x-forwarded-proto"),
];

pub(crate) async fn proxy_websocket<B>(
    state: &GatewayState,
    mut req: Request<B>,
    peer: SocketAddr,
) -> Response<Body>
where
    B: hyper::body::Body<Data = Bytes> + Send + 'static,
    B::Error: Into<BoxError>,
{
    if req.headers().get(header::SEC_WEBSOCKET_KEY).is_none() {
        return plain(StatusCode::BAD_REQUEST, "missing Sec-WebSocket-Key");
    }
    let scheme = if state.cfg.upstream.scheme() == "https" {
        "wss"
    } else {
        "ws"
    };
    let target = upstream_target(state, req.uri(), scheme);
    let mut upstream_req = match target.as_str().into_client_request() {
        Ok(r) => r,
        Err(_) => return plain(StatusCode::BAD_REQUEST, "bad request target"),
    };
    let forwarded = forwarded_headers(state, req.headers(), peer);
    for name in FORWARDED {
        for value in forwarded.get_all(&name) {
            upstream_req
                .headers_mut()
                .append(name.clone(), value.clone());
        }
    }
    if let Some(h) = forwarded.get("x-forwarded-host") {
        upstream_req
            .headers_mut()
            .insert("x-forwarded-host", h.clone());
    }

    let connect = tokio_tungstenite::connect_async(upstream_req);
    let (upstream, upstream_resp) =
        match tokio::time::timeout(state.cfg.proxy_timeout, connect).await {
            Ok(Ok(pair)) => pair,
            Ok(Err(err)) => {
                tracing::warn!(target = %target, error = %err, "upstream refused websocket");
                return plain(StatusCode::BAD_GATEWAY, "bad gateway");
            }
            Err(_) => return plain(StatusCode::GATEWAY_TIMEOUT, "gateway timeout"),
        };

    let protocol = upstream_resp
        .headers()
        .get(header::SEC_WEBSOCKET_PROTOCOL)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let Some(mut response) = server::websocket_accept(&req, protocol.as_deref()) else {
        return plain(StatusCode::BAD_REQUEST, "missing Sec-WebSocket-Key");
    };
    if let Some(cookie) = upstream_resp.headers().get(header::SET_COOKIE) {
        if let Ok(v) = HeaderValue::from_bytes(cookie.as_bytes()) {
            response.headers_mut().insert(header::SET_COOKIE, v);
        }
    }

    let on_upgrade = hyper::upgrade::on(&mut req);
    tokio::spawn(async move {
        match on_upgrade.await {
            Ok(upgraded) => {
                let client =
                    WebSocketStream::from_raw_socket(TokioIo::new(upgraded), Role::Server, None)
                        .await;
                relay(client, upstream).await;
            }
            Err(err) => tracing::debug!(error = %err, "client upgrade failed"),
        }
    });
    response
}

/// Copies data and close frames from `rx` to `tx` until either side ends.
/// Ping/pong are answered per hop by the WebSocket layer and not copied.
async fn pump<R, T>(mut rx: R, mut tx: T)
where
    R: Stream<Item = Result<Message, WsError>> + Unpin,
    T: Sink<Message, Error = WsError> + Unpin,
{
    while let Some(Ok(msg)) = rx.next().await {
        match msg {
            Message::Ping(_) | Message::Pong(_) | Message::Frame(_) => continue,
            Message::Close(frame) => {
                let _ = tx.send(Message::Close(frame)).await;
                break;
            }
            data => {
                if tx.send(data).await.is_err() {
                    break;
                }
            }
        }
    }
    let _ = tx.close().await;
}

async fn relay<C, U>(client: WebSocketStream<C>, upstream: WebSocketStream<U>)
where
    C: tokio::io::AsyncRead + tokio::io::AsyncWrite + Unpin,
    U: tokio::io::AsyncRead + tokio::io::AsyncWrite + Unpin,
{
    let (client_tx, client_rx) = client.split();
    let (upstream_tx, upstream_rx) = upstream.split();
    let up = pump(client_rx, upstream_tx);
    let down = pump(upstream_rx, client_tx);
    tokio::pin!(up, down);
    tokio::select! {
        _ = &mut up => { let _ = tokio::time::timeout(CLOSE_GRACE, down).await; }
        _ = &mut down => { let _ = tokio::time::timeout(CLOSE_GRACE, up).await; }
    }
}
