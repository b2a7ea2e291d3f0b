//! The HTTP(S) server that stands in for a separate web-server tier.
//!
//! Every request goes through the same fixed pipeline (see
//! [`handle_request`]): IP policy, password session check, route dispatch,
//! then security headers and authority rewriting on the way out.

mod auth;
mod pipeline;
mod proxy;
mod statics;
mod ws;

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use hyper_rustls::HttpsConnector;
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use rand::RngCore;
use thiserror::Error;

use crate::config::{ConfigError, GatewayConfig};
use crate::notebook::{
    apply_read_only, parse_notebook, render_embed_page, NotebookDocument, NotebookError,
};
use crate::security::TlsError;
use crate::server::{self, RunningServer};

pub use crate::server::{Body, BoxError};
pub use auth::SESSION_COOKIE;
pub use pipeline::handle_request;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tls(#[from] TlsError),
    #[error("cannot read notebook {path}: {source}")]
    ReadNotebook {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("notebook {path} is invalid: {source}")]
    Notebook {
        path: PathBuf,
        source: NotebookError,
    },
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    EmbedPage,
    Static,
    Auth,
    ProxyHttp,
    ProxyWs,
}

/// Per-request facts the pipeline decides on. `client_ip` is always the
/// socket peer; inbound `X-Forwarded-For` is never consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestContext {
    pub client_ip: IpAddr,
    pub authenticated: bool,
    pub route: Route,
}

/// Behind TLS, absolute `http://`/`ws://` URLs to an internal authority
/// are upgraded along with the authority so pages don't mix content; any
/// remaining bare mention gets the authority swap alone.
fn rewrite_pairs(cfg: &GatewayConfig) -> Vec<(String, String)> {
    let advertised = &cfg.advertised_authority;
    let mut pairs = Vec::new();
    for internal in cfg.internal_authorities() {
        if cfg.tls.enabled {
            pairs.push((
                format!("http://{internal}"),
                format!("https://{advertised}"),
            ));
            pairs.push((format!("ws://{internal}"), format!("wss://{advertised}")));
        }
        pairs.push((internal, advertised.clone()));
    }
    pairs
}

pub(crate) type UpstreamClient = Client<HttpsConnector<HttpConnector>, Body>;

/// Immutable state shared by all connection handlers.
pub struct GatewayState {
    cfg: GatewayConfig,
    notebook: NotebookDocument,
    embed_page: String,
    client: UpstreamClient,
    session_key: [u8; 32],
    /// `(internal, public)` substitutions, applied in order.
    rewrites: Vec<(String, String)>,
}

impl GatewayState {
    /// Loads the notebook and prepares everything a handler needs.
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let raw =
            std::fs::read(&cfg.notebook_path).map_err(|source| GatewayError::ReadNotebook {
                path: cfg.notebook_path.clone(),
                source,
            })?;
        let mut notebook = parse_notebook(&raw).map_err(|source| GatewayError::Notebook {
            path: cfg.notebook_path.clone(),
            source,
        })?;
        if cfg.read_only {
            notebook = apply_read_only(notebook);
        }
        let embed_page = render_embed_page(&notebook, &cfg);

        let mut http = HttpConnector::new();
        http.set_nodelay(true);
        http.enforce_http(false);
        let provider = Arc::new(rustls::crypto::ring::default_provider());
        let connector = hyper_rustls::HttpsConnectorBuilder::new()
            .with_provider_and_webpki_roots(provider)
            .map_err(|e| GatewayError::Tls(TlsError::Rustls(e)))?
            .https_or_http()
            .enable_http1()
            .wrap_connector(http);
        let client = Client::builder(TokioExecutor::new())
            .pool_max_idle_per_host(2048)
            .build(connector);

        let mut session_key = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut session_key);
        let rewrites = rewrite_pairs(&cfg);

        Ok(GatewayState {
            cfg,
            notebook,
            embed_page,
            client,
            session_key,
            rewrites,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn notebook(&self) -> &NotebookDocument {
        &self.notebook
    }

    /// Replaces every internal authority in `text` with the advertised one.
    pub(crate) fn spoof<'a>(&self, text: &'a [u8]) -> std::borrow::Cow<'a, [u8]> {
        let mut out = std::borrow::Cow::Borrowed(text);
        for (internal, public) in &self.rewrites {
            if let std::borrow::Cow::Owned(o) =
                crate::security::spoof_rewrite_bytes(&out, internal, public)
            {
                out = std::borrow::Cow::Owned(o);
            }
        }
        out
    }

    /// A session cookie value valid for the configured TTL, for callers
    /// that authenticate out of band (tests, tooling).
    pub fn issue_session(&self) -> String {
        auth::issue_token(&self.session_key, self.cfg.session_ttl)
    }
}

/// A running gateway. Dropping it does not stop the server; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    server: RunningServer,
    state: Arc<GatewayState>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.server.local_addr()
    }

    pub fn state(&self) -> &Arc<GatewayState> {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.server.is_finished()
    }

    /// Stops accepting, drains in-flight requests for up to
    /// `proxy_timeout`, then releases the listening socket.
    pub async fn shutdown(self) {
        self.server.shutdown().await;
    }
}

/// Validates everything (TLS material, notebook, bind) before returning, so
/// a handle always means a fully started server.
pub async fn serve(cfg: GatewayConfig) -> Result<ServerHandle, GatewayError> {
    let tls = cfg.tls.server_config()?;
    let state = Arc::new(GatewayState::new(cfg)?);
    let addr = state.cfg.listen_address;
    let listener = server::bind(addr).map_err(|source| GatewayError::Bind { addr, source })?;
    let drain = state.cfg.proxy_timeout;
    let handler_state = state.clone();
    let server = server::spawn(
        listener,
        tls,
        move |req, peer| {
            let state = handler_state.clone();
            async move { handle_request(&state, req, peer).await }
        },
        drain,
    )
    .map_err(|source| GatewayError::Bind { addr, source })?;
    tracing::info!(listen = %server.local_addr(), upstream = %state.cfg.upstream, "gateway listening");
    Ok(ServerHandle { server, state })
}
