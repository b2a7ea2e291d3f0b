use std::net::SocketAddr;
use std::time::Instant;

use bytes::Bytes;
use http::{header, HeaderValue, Method, Request, Response, StatusCode};
use http_body_util::{BodyExt, Limited};

use super::auth;
use super::{proxy, statics, ws, GatewayState, RequestContext, Route};
use crate::security::{apply_security_headers, evaluate_access, AccessDecision};
use crate::server::{self, full, Body, BoxError};

const LOGIN_BODY_LIMIT: usize = 64 * 1024;

pub(crate) fn plain(status: StatusCode, text: &str) -> Response<Body> {
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "text/plain; charset=utf-8")
        .body(full(format!("{text}\n")))
        .expect("static response")
}

fn classify<B>(req: &Request<B>) -> Route {
    let path = req.uri().path();
    if path == "/" {
        Route::EmbedPage
    } else if path.starts_with("/static/") {
        Route::Static
    } else if path == "/auth" {
        Route::Auth
    } else if server::is_websocket_upgrade(req) {
        Route::ProxyWs
    } else {
        Route::ProxyHttp
    }
}

/// The request pipeline, in this order:
///
/// 1. IP policy (`403` on deny),
/// 2. session check when a password is configured (`401` with a login form),
/// 3. dispatch: `/` embed page, `/static/*` local files, `/auth` login, all
///    else reverse-proxied (HTTP or WebSocket),
/// 4. security headers on every response,
/// 5. internal authorities in `Location` rewritten to the advertised one
///    (text bodies are rewritten by the handlers that produce them).
pub async fn handle_request<B>(
    state: &GatewayState,
    req: Request<B>,
    peer: SocketAddr,
) -> Response<Body>
where
    B: hyper::body::Body<Data = Bytes> + Send + Sync + 'static,
    B::Error: Into<BoxError>,
{
    let started = Instant::now();
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let client_ip = peer.ip();

    let mut response = match evaluate_access(&state.cfg.access, client_ip) {
        AccessDecision::Deny(reason) => {
            tracing::debug!(%client_ip, %reason, "access denied");
            plain(StatusCode::FORBIDDEN, "forbidden")
        }
        AccessDecision::Allow => {
            let authenticated = state.cfg.password.is_none()
                || auth::has_valid_session(&state.session_key, req.headers());
            let ctx = RequestContext {
                client_ip,
                authenticated,
                route: classify(&req),
            };
            dispatch(state, req, ctx, peer).await
        }
    };

    apply_security_headers(&mut response, &state.cfg.headers);
    rewrite_location(state, &mut response);

    tracing::info!(
        target: "access",
        client_ip = %client_ip,
        method = %method,
        path = %path,
        status = response.status().as_u16(),
        duration_ms = started.elapsed().as_secs_f64() * 1000.0,
    );
    response
}

async fn dispatch<B>(
    state: &GatewayState,
    req: Request<B>,
    ctx: RequestContext,
    peer: SocketAddr,
) -> Response<Body>
where
    B: hyper::body::Body<Data = Bytes> + Send + Sync + 'static,
    B::Error: Into<BoxError>,
{
    if ctx.route == Route::Auth {
        return login(state, req, ctx).await;
    }
    if !ctx.authenticated {
        return auth::login_page(StatusCode::UNAUTHORIZED, &state.cfg.default_title, None);
    }
    match ctx.route {
        Route::EmbedPage if req.method() == Method::GET || req.method() == Method::HEAD => {
            Response::builder()
                .header(header::CONTENT_TYPE, "text/html; charset=utf-8")
                .body(full(state.embed_page.clone()))
                .expect("static response")
        }
        // Non-GET requests to `/` go to the upstream like any other path.
        Route::EmbedPage | Route::ProxyHttp => proxy::proxy_http(state, req, peer).await,
        Route::Static => statics::serve_static(state, req.method(), req.uri().path()).await,
        Route::ProxyWs => ws::proxy_websocket(state, req, peer).await,
        Route::Auth => unreachable!("handled above"),
    }
}

async fn login<B>(state: &GatewayState, req: Request<B>, ctx: RequestContext) -> Response<Body>
where
    B: hyper::body::Body<Data = Bytes> + Send + 'static,
    B::Error: Into<BoxError>,
{
    let title = &state.cfg.default_title;
    let Some(record) = state.cfg.password.as_ref() else {
        return redirect_home();
    };
    match *req.method() {
        Method::GET | Method::HEAD => {
            if ctx.authenticated {
                redirect_home()
            } else {
                auth::login_page(StatusCode::OK, title, None)
            }
        }
        Method::POST => {
            let body = match Limited::new(req.into_body(), LOGIN_BODY_LIMIT)
                .collect()
                .await
            {
                Ok(b) => b.to_bytes(),
                Err(_) => return plain(StatusCode::PAYLOAD_TOO_LARGE, "payload too large"),
            };
            let supplied = auth::form_password(&body).unwrap_or_default();
            if crate::security::verify_password(record, &supplied) {
                let token = state.issue_session();
                let cookie =
                    auth::set_cookie_value(&token, state.cfg.session_ttl, state.cfg.tls.enabled);
                let mut resp = redirect_home();
                resp.headers_mut().insert(
                    header::SET_COOKIE,
                    HeaderValue::from_str(&cookie).expect("cookie is ASCII"),
                );
                resp
            } else {
                tracing::info!(client_ip = %ctx.client_ip, "failed login");
                auth::login_page(StatusCode::UNAUTHORIZED, title, Some("Incorrect password."))
            }
        }
        _ => plain(StatusCode::METHOD_NOT_ALLOWED, "method not allowed"),
    }
}

fn redirect_home() -> Response<Body> {
    Response::builder()
        .status(StatusCode::SEE_OTHER)
        .header(header::LOCATION, "/")
        .body(full(""))
        .expect("static response")
}

fn rewrite_location(state: &GatewayState, response: &mut Response<Body>) {
    let Some(loc) = response.headers().get(header::LOCATION) else {
        return;
    };
    let rewritten = state.spoof(loc.as_bytes());
    if let std::borrow::Cow::Owned(bytes) = rewritten {
        if let Ok(v) = HeaderValue::from_bytes(&bytes) {
            response.headers_mut().insert(header::LOCATION, v);
        }
    }
}
