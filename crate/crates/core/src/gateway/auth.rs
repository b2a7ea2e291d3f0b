//! Password login: a form at `/auth` that sets a signed, expiring cookie.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use hmac::{Hmac, Mac};
use http::{header, HeaderMap, Response, StatusCode};
use sha2::Sha256;

use crate::notebook::escape_html;
use crate::server::{full, Body};

pub const SESSION_COOKIE: &str = "notebook_gate_session";

type HmacSha256 = Hmac<Sha256>;

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn sign(key: &[u8], expiry: u64) -> String {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(expiry.to_string().as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

/// `<expiry-unix-seconds>.<hex hmac-sha256(expiry)>`
pub(crate) fn issue_token(key: &[u8], ttl: Duration) -> String {
    let expiry = now_secs().saturating_add(ttl.as_secs().max(1));
    format!("{expiry}.{}", sign(key, expiry))
}

pub(crate) fn token_valid(key: &[u8], token: &str) -> bool {
    let Some((expiry, sig)) = token.split_once('.') else {
        return false;
    };
    let Ok(expiry) = expiry.parse::<u64>() else {
        return false;
    };
    if expiry <= now_secs() {
        return false;
    }
    let Ok(sig) = hex::decode(sig) else {
        return false;
    };
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(expiry.to_string().as_bytes());
    mac.verify_slice(&sig).is_ok()
}

/// Values of every cookie named `name` across all `Cookie` headers.
pub(crate) fn cookies<'a>(
    headers: &'a HeaderMap,
    name: &'a str,
) -> impl Iterator<Item = &'a str> + 'a {
    headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(move |pair| {
            let (k, v) = pair.trim().split_once('=')?;
            (k == name).then_some(v)
        })
}

pub(crate) fn has_valid_session(key: &[u8], headers: &HeaderMap) -> bool {
    cookies(headers, SESSION_COOKIE).any(|t| token_valid(key, t))
}

/// The `Cookie` header with the gateway's own session cookie removed, or
/// `None` when nothing else remains.
pub(crate) fn strip_session_cookie(headers: &HeaderMap) -> Option<String> {
    let rest: Vec<&str> = headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .map(str::trim)
        .filter(|pair| !pair.is_empty())
        .filter(|pair| {
            pair.split_once('=')
                .is_none_or(|(k, _)| k != SESSION_COOKIE)
        })
        .collect();
    (!rest.is_empty()).then(|| rest.join("; "))
}

pub(crate) fn set_cookie_value(token: &str, ttl: Duration, secure: bool) -> String {
    let mut v = format!(
        "{SESSION_COOKIE}={token}; Path=/; Max-Age={}; HttpOnly; SameSite=Strict",
        ttl.as_secs()
    );
    if secure {
        v.push_str("; Secure");
    }
    v
}

pub(crate) fn login_page(status: StatusCode, title: &str, message: Option<&str>) -> Response<Body> {
    let title = escape_html(title);
    let notice = message
        .map(|m| format!("<p class=\"error\">{}</p>\n", escape_html(m)))
        .unwrap_or_default();
    let body = format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{title}: sign in</title>\n</head>\n<body>\n\
         <h1>{title}</h1>\n{notice}<form method=\"post\" action=\"/auth\">\n\
         <label for=\"password\">Password</label>\n\
         <input id=\"password\" name=\"password\" type=\"password\" autocomplete=\"current-password\" autofocus>\n\
         <button type=\"submit\">Sign in</button>\n</form>\n</body>\n</html>\n"
    );
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "text/html; charset=utf-8")
        .header(header::CACHE_CONTROL, "no-store")
        .body(full(body))
        .expect("static response")
}

pub(crate) fn form_password(body: &[u8]) -> Option<String> {
    url::form_urlencoded::parse(body)
        .find(|(k, _)| k == "password")
        .map(|(_, v)| v.into_owned())
}
