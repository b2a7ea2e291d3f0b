//! HTTP reverse proxy to the configured upstream.

use std::net::SocketAddr;

use bytes::Bytes;
use http::header::{self, HeaderMap, HeaderName, HeaderValue};
use http::{Method, Request, Response, StatusCode, Uri};
use http_body_util::{BodyExt, LengthLimitError, Limited};
use serde_json::Value;

use super::auth;
use super::pipeline::plain;
use super::GatewayState;
use crate::notebook::{apply_read_only, notebook_from_value};
use crate::server::{full, Body, BoxError};

/// Buffer cap for text responses that get authority rewriting.
const REWRITE_LIMIT: usize = 64 * 1024 * 1024;

const HOP_BY_HOP: [HeaderName; 8] = [
    header::CONNECTION,
    HeaderName::from_static("keep-alive"),
    header::TRANSFER_ENCODING,
    header::UPGRADE,
    header::TE,
    header::TRAILER,
    header::PROXY_AUTHORIZATION,
    HeaderName::from_static("proxy-connection"),
];

/// Removes hop-by-hop headers, including any named by `Connection`.
pub(crate) fn strip_hop_by_hop(headers: &mut HeaderMap) {
    let listed: Vec<HeaderName> = headers
        .get_all(header::CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .filter_map(|t| HeaderName::from_bytes(t.trim().as_bytes()).ok())
        .collect();
    for name in HOP_BY_HOP.iter().chain(listed.iter()) {
        headers.remove(name);
    }
}

/// Upstream authority as it should appear in `Host`.
pub(crate) fn upstream_host(state: &GatewayState) -> String {
    let url = &state.cfg.upstream;
    let host = url.host_str().unwrap_or_default();
    match url.port() {
        Some(p) => format!("{host}:{p}"),
        None => host.to_string(),
    }
}

/// Joins the upstream base path with the request's path and query.
pub(crate) fn upstream_target(state: &GatewayState, uri: &Uri, scheme: &str) -> String {
    let base = state.cfg.upstream.path().trim_end_matches('/');
    let pq = uri.path_and_query().map(|p| p.as_str()).unwrap_or("/");
    format!("{scheme}://{}{base}{pq}", upstream_host(state))
}

/// Shared request-header treatment for HTTP and WebSocket forwarding.
pub(crate) fn forwarded_headers(
    state: &GatewayState,
    inbound: &HeaderMap,
    peer: SocketAddr,
) -> HeaderMap {
    let mut headers = inbound.clone();
    strip_hop_by_hop(&mut headers);
    let original_host = headers.remove(header::HOST);

    let prior: Vec<String> = headers
        .get_all("x-forwarded-for")
        .iter()
        .filter_map(|v| v.to_str().ok())
        .map(str::to_string)
        .collect();
    let mut xff = prior.join(", ");
    if !xff.is_empty() {
        xff.push_str(", ");
    }
    xff.push_str(&peer.ip().to_string());
    headers.insert(
        "x-forwarded-for",
        HeaderValue::from_str(&xff).expect("IP text is a valid header value"),
    );
    headers.insert(
        "x-forwarded-proto",
        HeaderValue::from_static(state.cfg.public_scheme()),
    );
    if let Some(h) = original_host {
        headers.insert("x-forwarded-host", h);
    }
    if let Ok(h) = HeaderValue::from_str(&upstream_host(state)) {
        headers.insert(header::HOST, h);
    }

    headers.remove(header::COOKIE);
    if let Some(rest) = auth::strip_session_cookie(inbound) {
        if let Ok(v) = HeaderValue::from_str(&rest) {
            headers.insert(header::COOKIE, v);
        }
    }
    headers
}

fn is_rewritable_text(headers: &HeaderMap) -> bool {
    let encoded = headers
        .get(header::CONTENT_ENCODING)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| !v.eq_ignore_ascii_case("identity"));
    if encoded {
        return false;
    }
    let Some(ct) = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
    else {
        return false;
    };
    let ct = ct.to_ascii_lowercase();
    ct.starts_with("text/")
        || ct.contains("json")
        || ct.contains("javascript")
        || ct.contains("xml")
}

fn caused_by_body_limit(err: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur = Some(err);
    while let Some(e) = cur {
        if e.is::<LengthLimitError>() {
            return true;
        }
        cur = e.source();
    }
    false
}

/// Applies the read-only transform to a contents-API notebook model.
fn read_only_contents(body: &[u8]) -> Option<Vec<u8>> {
    let mut model: Value = serde_json::from_slice(body).ok()?;
    if model.get("type").and_then(Value::as_str) != Some("notebook") {
        return None;
    }
    let content = model.get_mut("content")?;
    let doc = notebook_from_value(content.take()).ok()?;
    *content = apply_read_only(doc).to_value();
    serde_json::to_vec(&model).ok()
}

pub(crate) async fn proxy_http<B>(
    state: &GatewayState,
    req: Request<B>,
    peer: SocketAddr,
) -> Response<Body>
where
    B: hyper::body::Body<Data = Bytes> + Send + Sync + 'static,
    B::Error: Into<BoxError>,
{
    let cfg = &state.cfg;
    let limit = cfg.max_body_bytes;
    let declared = req
        .headers()
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    if declared.is_some_and(|n| n > limit) {
        return plain(StatusCode::PAYLOAD_TOO_LARGE, "payload too large");
    }

    let (parts, body) = req.into_parts();
    let read_only_contents_get = cfg.read_only
        && parts.method == Method::GET
        && parts.uri.path().starts_with("/api/contents/");
    let target = upstream_target(state, &parts.uri, cfg.upstream.scheme());
    let uri: Uri = match target.parse() {
        Ok(u) => u,
        Err(_) => return plain(StatusCode::BAD_REQUEST, "bad request target"),
    };
    let mut headers = forwarded_headers(state, &parts.headers, peer);
    headers.insert(
        header::ACCEPT_ENCODING,
        HeaderValue::from_static("identity"),
    );

    let limited = Limited::new(body, usize::try_from(limit).unwrap_or(usize::MAX));
    let mut upstream_req = Request::builder()
        .method(parts.method.clone())
        .uri(uri)
        .version(http::Version::HTTP_11)
        .body(limited.boxed())
        .expect("request parts are valid");
    *upstream_req.headers_mut() = headers;

    let timeout = cfg.proxy_timeout;
    let result = tokio::time::timeout(timeout, async {
        let resp = state.client.request(upstream_req).await?;
        let (mut parts, body) = resp.into_parts();
        strip_hop_by_hop(&mut parts.headers);
        let rewritable = is_rewritable_text(&parts.headers);
        let small_enough = parts
            .headers
            .get(header::CONTENT_LENGTH)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<usize>().ok())
            .is_none_or(|n| n <= REWRITE_LIMIT);
        if rewritable && small_enough {
            let bytes = Limited::new(body, REWRITE_LIMIT)
                .collect()
                .await
                .map_err(UpstreamFailure::Body)?
                .to_bytes();
            let bytes = if read_only_contents_get {
                read_only_contents(&bytes).map(Bytes::from).unwrap_or(bytes)
            } else {
                bytes
            };
            let bytes = match state.spoof(&bytes) {
                std::borrow::Cow::Borrowed(_) => bytes,
                std::borrow::Cow::Owned(v) => Bytes::from(v),
            };
            parts
                .headers
                .insert(header::CONTENT_LENGTH, HeaderValue::from(bytes.len()));
            Ok::<_, UpstreamFailure>(Response::from_parts(parts, full(bytes)))
        } else {
            Ok(Response::from_parts(
                parts,
                body.map_err(BoxError::from).boxed(),
            ))
        }
    })
    .await;

    match result {
        Ok(Ok(resp)) => resp,
        Ok(Err(UpstreamFailure::Client(err))) if caused_by_body_limit(&err) => {
            plain(StatusCode::PAYLOAD_TOO_LARGE, "payload too large")
        }
        Ok(Err(err)) => {
            tracing::warn!(upstream = %cfg.upstream, error = %err, "upstream request failed");
            plain(StatusCode::BAD_GATEWAY, "bad gateway")
        }
        Err(_) => {
            tracing::warn!(upstream = %cfg.upstream, ?timeout, "upstream timed out");
            plain(StatusCode::GATEWAY_TIMEOUT, "gateway timeout")
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum UpstreamFailure {
    #[error(transparent)]
    Client(#[from] hyper_util::client::legacy::Error),
    #[error("upstream body: {0}")]
    Body(BoxError),
}
