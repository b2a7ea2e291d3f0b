use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use http::HeaderValue;
use serde_json::Value;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use uuid::Uuid;

use super::message::{
    correlate, make_execute_request, parse_message, ExecStatus, ExecutionResult, KernelMessage,
    MessageError,
};

#[derive(Debug, Error)]
pub enum KernelClientError {
    #[error("websocket error: {0}")]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("bad message from kernel: {0}")]
    Message(#[from] MessageError),
    #[error("kernel did not finish within {0:?}")]
    Timeout(Duration),
    #[error("kernel closed the channel mid-execution")]
    Closed,
    #[error("kernel went idle without sending execute_reply")]
    NoReply,
    #[error("invalid request: {0}")]
    Request(String),
}

/// Everything the kernel sent in response to one execute_request.
#[derive(Debug, Clone)]
pub struct ExecutionTranscript {
    pub request: KernelMessage,
    /// Messages parented to `request`, in arrival order.
    pub messages: Vec<KernelMessage>,
    pub reply: KernelMessage,
    pub result: ExecutionResult,
}

impl ExecutionTranscript {
    /// Busy first, idle last, exactly one execute_reply between them.
    pub fn is_bracketed(&self) -> bool {
        let state = |m: &KernelMessage| {
            (m.msg_type() == "status")
                .then(|| m.content.get("execution_state").and_then(Value::as_str))
                .flatten()
                .map(str::to_string)
        };
        let replies = self
            .messages
            .iter()
            .filter(|m| m.msg_type() == "execute_reply")
            .count();
        matches!(
            self.messages.first().and_then(state).as_deref(),
            Some("busy")
        ) && matches!(
            self.messages.last().and_then(state).as_deref(),
            Some("idle")
        ) && replies == 1
    }

    pub fn msg_types(&self) -> Vec<&str> {
        self.messages.iter().map(KernelMessage::msg_type).collect()
    }
}

pub struct KernelClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    session: String,
    timeout: Duration,
}

impl KernelClient {
    /// Connects to a kernel channels URL (`ws://host/api/kernels/<id>/channels`).
    pub async fn connect(url: &str) -> Result<Self, KernelClientError> {
        Self::connect_with_cookie(url, None).await
    }

    pub async fn connect_with_cookie(
        url: &str,
        cookie: Option<&str>,
    ) -> Result<Self, KernelClientError> {
        let mut request = url.into_client_request()?;
        if let Some(c) = cookie {
            let value =
                HeaderValue::from_str(c).map_err(|e| KernelClientError::Request(e.to_string()))?;
            request.headers_mut().insert(http::header::COOKIE, value);
        }
        let (ws, _) = tokio_tungstenite::connect_async(request).await?;
        Ok(KernelClient {
            ws,
            session: Uuid::new_v4().to_string(),
            timeout: Duration::from_secs(30),
        })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub async fn execute(&mut self, code: &str) -> Result<ExecutionTranscript, KernelClientError> {
        let request = make_execute_request(code, &self.session);
        self.ws.send(Message::Text(request.to_json())).await?;
        let timeout = self.timeout;
        tokio::time::timeout(timeout, self.collect(request))
            .await
            .map_err(|_| KernelClientError::Timeout(timeout))?
    }

    async fn collect(
        &mut self,
        request: KernelMessage,
    ) -> Result<ExecutionTranscript, KernelClientError> {
        let mut messages = Vec::new();
        let mut reply: Option<KernelMessage> = None;
        loop {
            let raw = match self.ws.next().await {
                Some(Ok(Message::Text(t))) => t.into_bytes(),
                Some(Ok(Message::Binary(b))) => b,
                Some(Ok(Message::Close(_))) | None => return Err(KernelClientError::Closed),
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e.into()),
            };
            let msg = parse_message(&raw)?;
            if !correlate(&msg, &request) {
                continue;
            }
            let idle = msg.msg_type() == "status"
                && msg.content.get("execution_state").and_then(Value::as_str) == Some("idle");
            if msg.msg_type() == "execute_reply" {
                reply = Some(msg.clone());
            }
            messages.push(msg);
            if idle {
                break;
            }
        }
        let reply = reply.ok_or(KernelClientError::NoReply)?;
        let result = summarize(&reply, &messages);
        Ok(ExecutionTranscript {
            request,
            messages,
            reply,
            result,
        })
    }

    pub async fn close(mut self) -> Result<(), KernelClientError> {
        self.ws.close(None).await?;
        Ok(())
    }
}

fn summarize(reply: &KernelMessage, messages: &[KernelMessage]) -> ExecutionResult {
    let str_of = |m: &KernelMessage, key: &str| {
        m.content
            .get(key)
            .and_then(Value::as_str)
            .map(str::to_string)
    };
    let status = match reply.content.get("status").and_then(Value::as_str) {
        Some("ok") => ExecStatus::Ok,
        _ => ExecStatus::Error,
    };
    let stream_text = messages
        .iter()
        .filter(|m| m.msg_type() == "stream")
        .filter_map(|m| str_of(m, "text"))
        .collect::<String>();
    let traceback = reply
        .content
        .get("traceback")
        .and_then(Value::as_array)
        .map(|lines| {
            lines
                .iter()
                .filter_map(Value::as_str)
                .collect::<Vec<_>>()
                .join("\n")
        });
    ExecutionResult {
        status,
        execution_count: reply
            .content
            .get("execution_count")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        stream_text,
        error_name: match status {
            ExecStatus::Ok => None,
            ExecStatus::Error => {
                Some(str_of(reply, "ename").unwrap_or_else(|| "UnknownError".into()))
            }
        },
        error_traceback: match status {
            ExecStatus::Ok => None,
            ExecStatus::Error => traceback,
        },
    }
}
