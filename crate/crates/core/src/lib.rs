//! notebook-gate: embed, secure and reverse-proxy a Jupyter notebook server
//! from a single process, and measure what that costs.
//!
//! The crate is organised by concern:
//!
//! - [`notebook`]: nbformat-4 parsing, the read-only transform, and the
//!   HTML page that embeds the notebook UI.
//! - [`security`]: the layered defenses (IP policy, response headers,
//!   password records, TLS settings, authority rewriting).
//! - [`config`]: loading and validating a [`config::GatewayConfig`].
//! - [`gateway`]: the HTTP(S) server, request pipeline, and HTTP/WebSocket
//!   reverse proxy.
//! - [`kernel`]: the Jupyter message envelope, an execute client, and a
//!   mock notebook/kernel upstream for hermetic testing.
//! - [`bench`]: closed-loop load generation, percentiles, process resource
//!   sampling and comparison reports.

pub mod bench;
pub mod config;
pub mod gateway;
pub mod kernel;
pub mod notebook;
pub mod security;

mod server;

pub use config::{load_config, ConfigError, GatewayConfig};
pub use gateway::{serve, GatewayError, ServerHandle};
pub use notebook::{apply_read_only, parse_notebook, render_embed_page, NotebookDocument};
