//! Gateway configuration: one JSON document whose keys mirror
//! [`GatewayConfig`] field names. Unknown keys are rejected so a typo in a
//! security setting can never be silently ignored.
//!
//! ```json
//! {
//!   "listen_address": "0.0.0.0:9000",
//!   "advertised_authority": "notebooks.example.org",
//!   "upstream": "http://127.0.0.1:8888",
//!   "notebook_path": "demo.ipynb",
//!   "tls": { "enabled": true, "certificate_path": "cert.pem", "private_key_path": "key.pem" },
//!   "access": { "whitelist": ["10.0.0.0/8"], "blacklist": ["10.6.6.0/24"] },
//!   "headers": { "X-Frame-Options": "DENY" },
//!   "password": "sha256:5f2a8c9e0b1d:...",
//!   "read_only": true,
//!   "proxy_timeout": 30,
//!   "max_body_bytes": 10485760
//! }
//! ```
//!
//! Durations are seconds (integer or fractional). Relative paths resolve
//! against the directory holding the config file.

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{Map, Value};
use thiserror::Error;
use url::Url;

use crate::security::{
    default_security_headers, AccessPolicy, Cidr, PasswordRecord, SecurityHeaderSet, TlsSettings,
};

pub const DEFAULT_PROXY_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_BODY_BYTES: u64 = 10 * 1024 * 1024;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(8 * 60 * 60);
pub const DEFAULT_TITLE: &str = "Notebook";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {0} not found")]
    NotFound(PathBuf),
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is not valid JSON (line {line}, column {column}): {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config at `{key}`: {reason}")]
    Validation { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen_address: SocketAddr,
    /// `host[:port]` shown to clients in every URL the gateway emits.
    pub advertised_authority: String,
    pub tls: TlsSettings,
    pub upstream: Url,
    pub notebook_path: PathBuf,
    pub access: AccessPolicy,
    /// Defaults merged with configured overrides.
    pub headers: SecurityHeaderSet,
    pub password: Option<PasswordRecord>,
    pub read_only: bool,
    pub proxy_timeout: Duration,
    pub max_body_bytes: u64,
    pub session_ttl: Duration,
    /// Directory served under `/static/`. `None` makes every static path 404.
    pub static_dir: Option<PathBuf>,
    /// Page title when the notebook carries none.
    pub default_title: String,
}

impl GatewayConfig {
    /// A config with every optional field at its default.
    pub fn new(
        listen_address: SocketAddr,
        upstream: Url,
        notebook_path: impl Into<PathBuf>,
    ) -> Self {
        GatewayConfig {
            listen_address,
            advertised_authority: listen_address.to_string(),
            tls: TlsSettings::disabled(),
            upstream,
            notebook_path: notebook_path.into(),
            access: AccessPolicy::default(),
            headers: default_security_headers(),
            password: None,
            read_only: false,
            proxy_timeout: DEFAULT_PROXY_TIMEOUT,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            session_ttl: DEFAULT_SESSION_TTL,
            static_dir: None,
            default_title: DEFAULT_TITLE.to_string(),
        }
    }

    pub fn public_scheme(&self) -> &'static str {
        if self.tls.enabled {
            "https"
        } else {
            "http"
        }
    }

    /// `host:port` of the upstream, port made explicit.
    pub fn upstream_authority(&self) -> String {
        let host = self.upstream.host_str().unwrap_or_default();
        let port = self.upstream.port_or_known_default().unwrap_or(80);
        if host.contains(':') && !host.starts_with('[') {
            format!("[{host}]:{port}")
        } else {
            format!("{host}:{port}")
        }
    }

    /// Authorities that must never reach a client; each is rewritten to
    /// [`Self::advertised_authority`].
    pub fn internal_authorities(&self) -> Vec<String> {
        let mut out = Vec::new();
        for auth in [self.upstream_authority(), self.listen_address.to_string()] {
            if auth != self.advertised_authority && !out.contains(&auth) {
                out.push(auth);
            }
        }
        out
    }

    /// Checks invariants that hold regardless of how the config was built.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !matches!(self.upstream.scheme(), "http" | "https") || self.upstream.host().is_none() {
            return Err(ConfigError::invalid(
                "upstream",
                "must be an absolute http:// or https:// URL",
            ));
        }
        if self.proxy_timeout.is_zero() {
            return Err(ConfigError::invalid(
                "proxy_timeout",
                "must be greater than zero",
            ));
        }
        if self.session_ttl.is_zero() {
            return Err(ConfigError::invalid(
                "session_ttl",
                "must be greater than zero",
            ));
        }
        if self.advertised_authority.is_empty()
            || self
                .advertised_authority
                .contains(['/', ' ', '@', '?', '#'])
        {
            return Err(ConfigError::invalid(
                "advertised_authority",
                "must be host[:port]",
            ));
        }
        if self.tls.enabled {
            if self.tls.certificate_path.is_none() {
                return Err(ConfigError::invalid(
                    "tls.certificate_path",
                    "required when TLS is enabled",
                ));
            }
            if self.tls.private_key_path.is_none() {
                return Err(ConfigError::invalid(
                    "tls.private_key_path",
                    "required when TLS is enabled",
                ));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        from_value(value, base_dir)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<GatewayConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ConfigError::NotFound(path.to_path_buf())
        } else {
            ConfigError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    GatewayConfig::from_json_str(&text, base)
}

const TOP_KEYS: &[&str] = &[
    "listen_address",
    "advertised_authority",
    "tls",
    "upstream",
    "notebook_path",
    "access",
    "headers",
    "password",
    "read_only",
    "proxy_timeout",
    "max_body_bytes",
    "session_ttl",
    "static_dir",
    "default_title",
];
const TLS_KEYS: &[&str] = &["enabled", "certificate_path", "private_key_path"];
const ACCESS_KEYS: &[&str] = &["whitelist", "blacklist"];

fn object<'a>(
    value: &'a Value,
    key: &str,
    allowed: &[&str],
) -> Result<&'a Map<String, Value>, ConfigError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ConfigError::invalid(key, "must be an object"))?;
    if let Some(unknown) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        let full = if key.is_empty() {
            unknown.clone()
        } else {
            format!("{key}.{unknown}")
        };
        return Err(ConfigError::invalid(full, "unknown key"));
    }
    Ok(obj)
}

fn string<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    path: &str,
) -> Result<Option<&'a str>, ConfigError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(ConfigError::invalid(path, "must be a string")),
    }
}

fn seconds(obj: &Map<String, Value>, key: &str) -> Result<Option<Duration>, ConfigError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            let secs = v
                .as_f64()
                .ok_or_else(|| ConfigError::invalid(key, "must be a number of seconds"))?;
            if !secs.is_finite() || secs <= 0.0 {
                return Err(ConfigError::invalid(key, "must be greater than zero"));
            }
            Ok(Some(Duration::from_secs_f64(secs)))
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cidr_list(obj: &Map<String, Value>, key: &str) -> Result<Vec<Cidr>, ConfigError> {
    let path = format!("access.{key}");
    match obj.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let at = format!("{path}[{i}]");
                let s = item
                    .as_str()
                    .ok_or_else(|| ConfigError::invalid(&at, "must be a CIDR string"))?;
                s.parse::<Cidr>()
                    .map_err(|e| ConfigError::invalid(&at, e.to_string()))
            })
            .collect(),
        Some(_) => Err(ConfigError::invalid(path, "must be a list of CIDR strings")),
    }
}

fn parse_listen(s: &str) -> Result<SocketAddr, ConfigError> {
    if let Ok(addr) = s.parse() {
        return Ok(addr);
    }
    s.to_socket_addrs()
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| ConfigError::invalid("listen_address", format!("`{s}` is not host:port")))
}

fn from_value(value: Value, base: &Path) -> Result<GatewayConfig, ConfigError> {
    let root = object(&value, "", TOP_KEYS)?;

    let listen = string(root, "listen_address", "listen_address")?
        .ok_or_else(|| ConfigError::invalid("listen_address", "required"))?;
    let listen_address = parse_listen(listen)?;
    let upstream_text = string(root, "upstream", "upstream")?
        .ok_or_else(|| ConfigError::invalid("upstream", "required"))?;
    let upstream =
        Url::parse(upstream_text).map_err(|e| ConfigError::invalid("upstream", e.to_string()))?;
    let notebook_path = string(root, "notebook_path", "notebook_path")?
        .ok_or_else(|| ConfigError::invalid("notebook_path", "required"))?;

    let mut cfg = GatewayConfig::new(listen_address, upstream, resolve(base, notebook_path));

    if let Some(adv) = string(root, "advertised_authority", "advertised_authority")? {
        cfg.advertised_authority = adv.to_string();
    }

    if let Some(tls) = root.get("tls").filter(|v| !v.is_null()) {
        let tls = object(tls, "tls", TLS_KEYS)?;
        cfg.tls.enabled = match tls.get("enabled") {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(ConfigError::invalid("tls.enabled", "must be a boolean")),
        };
        cfg.tls.certificate_path =
            string(tls, "certificate_path", "tls.certificate_path")?.map(|p| resolve(base, p));
        cfg.tls.private_key_path =
            string(tls, "private_key_path", "tls.private_key_path")?.map(|p| resolve(base, p));
    }

    if let Some(access) = root.get("access").filter(|v| !v.is_null()) {
        let access = object(access, "access", ACCESS_KEYS)?;
        cfg.access = AccessPolicy::new(
            cidr_list(access, "whitelist")?,
            cidr_list(access, "blacklist")?,
        );
    }

    if let Some(headers) = root.get("headers").filter(|v| !v.is_null()) {
        let headers = headers
            .as_object()
            .ok_or_else(|| ConfigError::invalid("headers", "must be an object of name -> value"))?;
        let mut overrides = SecurityHeaderSet::new();
        for (name, value) in headers {
            let at = format!("headers.{name}");
            let value = value
                .as_str()
                .ok_or_else(|| ConfigError::invalid(&at, "must be a string"))?;
            overrides
                .insert(name, value)
                .map_err(|e| ConfigError::invalid(&at, e.to_string()))?;
        }
        cfg.headers = default_security_headers().merged_with(&overrides);
    }

    if let Some(pw) = string(root, "password", "password")? {
        cfg.password = Some(
            pw.parse::<PasswordRecord>()
                .map_err(|e| ConfigError::invalid("password", e.to_string()))?,
        );
    }

    cfg.read_only = match root.get("read_only") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(ConfigError::invalid("read_only", "must be a boolean")),
    };
    if let Some(t) = seconds(root, "proxy_timeout")? {
        cfg.proxy_timeout = t;
    }
    if let Some(t) = seconds(root, "session_ttl")? {
        cfg.session_ttl = t;
    }
    match root.get("max_body_bytes") {
        None | Some(Value::Null) => {}
        Some(v) => {
            cfg.max_body_bytes = v.as_u64().filter(|n| *n > 0).ok_or_else(|| {
                ConfigError::invalid("max_body_bytes", "must be a positive integer")
            })?;
        }
    }
    cfg.static_dir = string(root, "static_dir", "static_dir")?.map(|p| resolve(base, p));
    if let Some(title) = string(root, "default_title", "default_title")? {
        cfg.default_title = title.to_string();
    }

    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<GatewayConfig, ConfigError> {
        GatewayConfig::from_json_str(text, Path::new("/etc/gate"))
    }

    fn key_of(err: ConfigError) -> String {
        match err {
            ConfigError::Validation { key, .. } => key,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    const MINIMAL: &str = r#"{"listen_address":"127.0.0.1:9000","upstream":"http://127.0.0.1:8888","notebook_path":"demo.ipynb"}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.listen_address, "127.0.0.1:9000".parse().unwrap());
        assert_eq!(cfg.headers, default_security_headers());
        assert!(!cfg.read_only);
        assert_eq!(cfg.proxy_timeout, Duration::from_secs(30));
        assert_eq!(cfg.max_body_bytes, 10 * 1024 * 1024);
        assert_eq!(cfg.session_ttl, Duration::from_secs(8 * 3600));
        assert_eq!(cfg.notebook_path, PathBuf::from("/etc/gate/demo.ipynb"));
        assert_eq!(cfg.advertised_authority, "127.0.0.1:9000");
        assert!(cfg.password.is_none());
        assert!(!cfg.tls.enabled);
    }

    #[test]
    fn unknown_keys() {
        let text = MINIMAL.replace('}', r#","whitlist":[]}"#);
        assert_eq!(key_of(parse(&text).unwrap_err()), "whitlist");
        let text = MINIMAL.replace('}', r#","access":{"whitlist":[]}}"#);
        assert_eq!(key_of(parse(&text).unwrap_err()), "access.whitlist");
        let text = MINIMAL.replace('}', r#","tls":{"enable":true}}"#);
        assert_eq!(key_of(parse(&text).unwrap_err()), "tls.enable");
    }

    #[test]
    fn bad_cidr_names_its_index() {
        let text = MINIMAL.replace('}', r#","access":{"blacklist":["300.1.1.1/24"]}}"#);
        assert_eq!(key_of(parse(&text).unwrap_err()), "access.blacklist[0]");
        let text = MINIMAL.replace('}', r#","access":{"whitelist":["10.0.0.0/8","::1/200"]}}"#);
        assert_eq!(key_of(parse(&text).unwrap_err()), "access.whitelist[1]");
    }

    #[test]
    fn parse_error_reports_line() {
        match parse("{\n\"listen_address\": ,\n}") {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invariants() {
        let no_scheme = MINIMAL.replace("http://127.0.0.1:8888", "ftp://x");
        assert_eq!(key_of(parse(&no_scheme).unwrap_err()), "upstream");
        let zero = MINIMAL.replace('}', r#","proxy_timeout":0}"#);
        assert_eq!(key_of(parse(&zero).unwrap_err()), "proxy_timeout");
        let bad_listen = MINIMAL.replace("127.0.0.1:9000", "nowhere");
        assert_eq!(key_of(parse(&bad_listen).unwrap_err()), "listen_address");
        let tls = MINIMAL.replace('}', r#","tls":{"enabled":true}}"#);
        assert_eq!(key_of(parse(&tls).unwrap_err()), "tls.certificate_path");
        let hdr = MINIMAL.replace('}', r#","headers":{"X-A":"a\nb"}}"#);
        assert_eq!(key_of(parse(&hdr).unwrap_err()), "headers.X-A");
        let pw = MINIMAL.replace('}', r#","password":"md5:00:00"}"#);
        assert_eq!(key_of(parse(&pw).unwrap_err()), "password");
        assert_eq!(key_of(parse("[]").unwrap_err()), "");
    }

    #[test]
    fn full_config() {
        let text = r#"{
            "listen_address": "0.0.0.0:9000",
            "advertised_authority": "example.org:443",
            "upstream": "http://localhost:8888",
            "notebook_path": "/srv/nb/demo.ipynb",
            "tls": {"enabled": true, "certificate_path": "c.pem", "private_key_path": "/k.pem"},
            "access": {"whitelist": ["10.0.0.0/8"], "blacklist": ["10.6.6.0/24", "2001:db8::/32"]},
            "headers": {"x-frame-options": "DENY"},
            "password": "sha256:1234:937e8d5fbb48bd4949536cd65b8d35c426b80d2f830c5c308e2cdec422ae2244",
            "read_only": true,
            "proxy_timeout": 2.5,
            "max_body_bytes": 1024,
            "session_ttl": 60,
            "static_dir": "static",
            "default_title": "Hosted"
        }"#;
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.headers.get("X-Frame-Options"), Some("DENY"));
        assert_eq!(cfg.headers.len(), 5);
        assert_eq!(cfg.access.blacklist.len(), 2);
        assert_eq!(
            cfg.tls.certificate_path,
            Some(PathBuf::from("/etc/gate/c.pem"))
        );
        assert_eq!(cfg.tls.private_key_path, Some(PathBuf::from("/k.pem")));
        assert_eq!(cfg.proxy_timeout, Duration::from_millis(2500));
        assert_eq!(cfg.public_scheme(), "https");
        assert_eq!(cfg.upstream_authority(), "localhost:8888");
        assert_eq!(
            cfg.internal_authorities(),
            vec!["localhost:8888".to_string(), "0.0.0.0:9000".to_string()]
        );
        assert!(cfg.read_only);
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gate.json");
        assert!(matches!(load_config(&path), Err(ConfigError::NotFound(_))));
        std::fs::write(&path, MINIMAL).unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.notebook_path, dir.path().join("demo.ipynb"));
    }
}
