use http::header::{HeaderName, HeaderValue};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeaderError {
    #[error("`{0}` is not a valid header name")]
    BadName(String),
    #[error("value for `{0}` contains CR or LF")]
    LineBreak(String),
    #[error("value for `{0}` is not a valid header value")]
    BadValue(String),
}

/// Response headers applied by the gateway, in insertion order, with names
/// unique ignoring ASCII case.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SecurityHeaderSet {
    entries: Vec<(String, String)>,
}

impl SecurityHeaderSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a header, replacing any entry with the same name.
    pub fn insert(&mut self, name: &str, value: &str) -> Result<(), HeaderError> {
        HeaderName::from_bytes(name.as_bytes()).map_err(|_| HeaderError::BadName(name.into()))?;
        if value.contains(['\r', '\n']) {
            return Err(HeaderError::LineBreak(name.into()));
        }
        HeaderValue::from_str(value).map_err(|_| HeaderError::BadValue(name.into()))?;

        match self
            .entries
            .iter_mut()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
        {
            Some(entry) => entry.1 = value.to_string(),
            None => self.entries.push((name.to_string(), value.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v.as_str()))
    }

    /// Applies `overrides` on top of `self`; overriding entries win.
    pub fn merged_with(mut self, overrides: &SecurityHeaderSet) -> Self {
        for (name, value) in overrides.iter() {
            self.insert(name, value)
                .expect("entries were validated on insertion");
        }
        self
    }
}

pub const DEFAULT_HSTS: &str = "max-age=31536000; includeSubDomains";
pub const DEFAULT_CSP: &str =
    "default-src 'self'; script-src 'self' 'unsafe-inline' 'unsafe-eval'; \
style-src 'self' 'unsafe-inline'; img-src 'self' data:; connect-src 'self' ws: wss:; \
frame-ancestors 'self'; object-src 'none'; base-uri 'self'";

/// The baseline set attached to every response.
pub fn default_security_headers() -> SecurityHeaderSet {
    let mut set = SecurityHeaderSet::new();
    for (name, value) in [
        ("Strict-Transport-Security", DEFAULT_HSTS),
        ("Content-Security-Policy", DEFAULT_CSP),
        ("X-Content-Type-Options", "nosniff"),
        ("X-Frame-Options", "SAMEORIGIN"),
        ("Referrer-Policy", "no-referrer"),
    ] {
        set.insert(name, value).expect("static defaults are valid");
    }
    set
}

/// Sets every header in `set` on `response`, replacing same-named headers.
pub fn apply_security_headers<B>(response: &mut http::Response<B>, set: &SecurityHeaderSet) {
    let headers = response.headers_mut();
    for (name, value) in set.iter() {
        let name = HeaderName::from_bytes(name.as_bytes()).expect("validated on insertion");
        let value = HeaderValue::from_str(value).expect("validated on insertion");
        headers.insert(name, value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use http::{Response, StatusCode};

    #[test]
    fn defaults() {
        let set = default_security_headers();
        assert_eq!(set.len(), 5);
        assert_eq!(set.get("X-Content-Type-Options"), Some("nosniff"));
        assert_eq!(set.get("x-frame-options"), Some("SAMEORIGIN"));
        assert_eq!(set.get("Referrer-Policy"), Some("no-referrer"));
        assert!(set.get("Strict-Transport-Security").is_some());
        assert!(set.get("Content-Security-Policy").is_some());
    }

    #[test]
    fn override_wins_and_keeps_the_rest() {
        let mut over = SecurityHeaderSet::new();
        over.insert("x-frame-options", "DENY").unwrap();
        let merged = default_security_headers().merged_with(&over);
        assert_eq!(merged.len(), 5);
        assert_eq!(merged.get("X-Frame-Options"), Some("DENY"));
        assert_eq!(merged.get("X-Content-Type-Options"), Some("nosniff"));
    }

    #[test]
    fn rejects_injection() {
        let mut set = SecurityHeaderSet::new();
        assert_eq!(
            set.insert("X-Test", "a\r\nSet-Cookie: x=1"),
            Err(HeaderError::LineBreak("X-Test".into()))
        );
        assert_eq!(
            set.insert("X-Test", "a\nb"),
            Err(HeaderError::LineBreak("X-Test".into()))
        );
        assert!(matches!(
            set.insert("Bad Name", "v"),
            Err(HeaderError::BadName(_))
        ));
        assert!(set.is_empty());
    }

    #[test]
    fn applied_to_any_status_without_duplicates() {
        let set = default_security_headers();
        for status in [
            StatusCode::OK,
            StatusCode::FORBIDDEN,
            StatusCode::BAD_GATEWAY,
        ] {
            let mut resp = Response::builder()
                .status(status)
                .header("X-Frame-Options", "ALLOWALL")
                .body(())
                .unwrap();
            apply_security_headers(&mut resp, &set);
            for (name, value) in set.iter() {
                let all: Vec<_> = resp.headers().get_all(name).iter().collect();
                assert_eq!(all.len(), 1, "{name}");
                assert_eq!(all[0], value);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn any_line_break_is_rejected(pre in "[ -~]{0,16}", brk in "[\r\n]", post in "[ -~]{0,16}") {
                let mut set = SecurityHeaderSet::new();
                let value = format!("{pre}{brk}{post}");
                prop_assert!(set.insert("X-Anything", &value).is_err());
            }
        }
    }
}
