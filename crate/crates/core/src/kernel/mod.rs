//! Jupyter wire-message envelope, an execute client, and a mock
//! notebook/kernel server.
//!
//! Messages travel as one JSON document per WebSocket text frame with
//! top-level keys `header`, `parent_header`, `metadata` and `content`
//! (plus `channel` when multiplexed over a single socket, as Jupyter's
//! `/api/kernels/<id>/channels` endpoint does). HMAC signing is not used.

mod client;
mod message;
mod mock;

pub use client::{ExecutionTranscript, KernelClient, KernelClientError};
pub use message::{
    correlate, make_execute_request, parse_message, ExecStatus, ExecutionResult, Header,
    KernelMessage, MessageError, PROTOCOL_VERSION,
};
pub use mock::{evaluate, mock_kernel_serve, MockOptions, MockUpstream, MOCK_KERNEL_ID};
