//! Files under `static_dir`, served at `/static/`.

use std::path::{Component, Path, PathBuf};

use http::{header, Method, Response, StatusCode};
use percent_encoding::percent_decode_str;

use super::GatewayState;
use crate::server::{full, Body};

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("html" | "htm") => "text/html; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("json" | "ipynb") => "application/json",
        Some("txt" | "md") => "text/plain; charset=utf-8",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("ico") => "image/x-icon",
        Some("woff2") => "font/woff2",
        Some("woff") => "font/woff",
        _ => "application/octet-stream",
    }
}

/// Maps `/static/<rel>` onto `root/<rel>`, refusing anything that could
/// climb out of `root`.
pub(crate) fn resolve(root: &Path, request_path: &str) -> Option<PathBuf> {
    let rel = request_path.strip_prefix("/static/")?;
    let rel = percent_decode_str(rel).decode_utf8().ok()?;
    if rel.is_empty() || rel.contains('\0') || rel.contains('\\') {
        return None;
    }
    let rel = Path::new(rel.as_ref());
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

fn not_found() -> Response<Body> {
    Response::builder()
        .status(StatusCode::NOT_FOUND)
        .header(header::CONTENT_TYPE, "text/plain; charset=utf-8")
        .body(full("not found\n"))
        .expect("static response")
}

pub(crate) async fn serve_static(
    state: &GatewayState,
    method: &Method,
    path: &str,
) -> Response<Body> {
    if method != Method::GET && method != Method::HEAD {
        return Response::builder()
            .status(StatusCode::METHOD_NOT_ALLOWED)
            .header(header::ALLOW, "GET, HEAD")
            .body(full("method not allowed\n"))
            .expect("static response");
    }
    let Some(root) = state.cfg.static_dir.as_deref() else {
        return not_found();
    };
    let Some(file) = resolve(root, path) else {
        return not_found();
    };
    let bytes = match tokio::fs::read(&file).await {
        Ok(b) => b,
        Err(_) => return not_found(),
    };
    let ct = content_type(&file);
    let body = if ct.starts_with("text/") || ct.contains("json") || ct.contains("svg") {
        state.spoof(&bytes).into_owned()
    } else {
        bytes
    };
    let len = body.len();
    let body = if method == Method::HEAD {
        Vec::new()
    } else {
        body
    };
    Response::builder()
        .header(header::CONTENT_TYPE, ct)
        .header(header::CONTENT_LENGTH, len)
        .body(full(body))
        .expect("static response")
}
