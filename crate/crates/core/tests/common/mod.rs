#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use bytes::Bytes;
use http::{HeaderMap, Request, StatusCode};
use http_body_util::{BodyExt, Full};
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use notebook_gate::kernel::{mock_kernel_serve, MockOptions, MockUpstream};
use notebook_gate::{serve, GatewayConfig, ServerHandle};

pub const NOTEBOOK: &str = r##"{
 "nbformat": 4,
 "nbformat_minor": 5,
 "metadata": {"title": "Integration Demo"},
 "cells": [
  {"cell_type": "markdown", "metadata": {}, "source": "# Hello"},
  {"cell_type": "code", "metadata": {}, "source": "1+1", "execution_count": null, "outputs": []}
 ]
}"##;

pub const ADVERTISED: &str = "gate.example:443";

pub struct Stack {
    pub mock: MockUpstream,
    pub gateway: ServerHandle,
    pub dir: tempfile::TempDir,
}

impl Stack {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.gateway.local_addr())
    }

    pub fn ws_url(&self, path: &str) -> String {
        format!("ws://{}{path}", self.gateway.local_addr())
    }

    pub async fn stop(self) {
        self.gateway.shutdown().await;
        self.mock.shutdown().await;
    }
}

pub fn loopback() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

pub fn write_notebook(dir: &tempfile::TempDir) -> PathBuf {
    let path = dir.path().join("demo.ipynb");
    std::fs::write(&path, NOTEBOOK).unwrap();
    path
}

pub fn base_config(dir: &tempfile::TempDir, upstream: &str) -> GatewayConfig {
    let mut cfg = GatewayConfig::new(loopback(), upstream.parse().unwrap(), write_notebook(dir));
    cfg.advertised_authority = ADVERTISED.to_string();
    cfg
}

pub async fn mock(latency: Duration) -> MockUpstream {
    mock_kernel_serve(loopback(), MockOptions { latency })
        .await
        .unwrap()
}

pub async fn stack_with(latency: Duration, tweak: impl FnOnce(&mut GatewayConfig)) -> Stack {
    let mock = mock(latency).await;
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(&dir, &mock.url());
    tweak(&mut cfg);
    let gateway = serve(cfg).await.unwrap();
    Stack { mock, gateway, dir }
}

pub async fn stack(tweak: impl FnOnce(&mut GatewayConfig)) -> Stack {
    stack_with(Duration::ZERO, tweak).await
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl Reply {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name).and_then(|v| v.to_str().ok())
    }
}

pub fn client() -> Client<HttpConnector, Full<Bytes>> {
    Client::builder(TokioExecutor::new()).build_http()
}

pub async fn send(req: Request<Full<Bytes>>) -> Reply {
    let resp = client()
        .request(req)
        .await
        .expect("request reaches the gateway");
    let (parts, body) = resp.into_parts();
    Reply {
        status: parts.status,
        headers: parts.headers,
        body: body.collect().await.unwrap().to_bytes(),
    }
}

pub async fn get(url: &str) -> Reply {
    send(Request::get(url).body(Full::default()).unwrap()).await
}

pub const SECURITY_HEADERS: [&str; 5] = [
    "strict-transport-security",
    "content-security-policy",
    "x-content-type-options",
    "x-frame-options",
    "referrer-policy",
];

pub fn assert_security_headers(reply: &Reply) {
    for h in SECURITY_HEADERS {
        assert!(
            reply.headers.contains_key(h),
            "{h} missing on {}",
            reply.status
        );
    }
}
