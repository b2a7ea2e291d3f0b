use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use http::{Request, StatusCode, Uri};
use http_body_util::{BodyExt, Empty};
use hyper_rustls::HttpsConnector;
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use thiserror::Error;

use super::sampler::{ResourceSample, ResourceSampler, ResourceTrace};
use super::stats::percentile_sorted;

type HttpClient = Client<HttpsConnector<HttpConnector>, Empty<Bytes>>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid load spec: {0}")]
    InvalidSpec(String),
    #[error("target {url} unreachable: {reason}")]
    TargetUnreachable { url: String, reason: String },
    #[error(transparent)]
    Sampler(#[from] super::sampler::SamplerError),
}

/// When a measured run stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadLimit {
    Duration(Duration),
    Requests(u64),
}

#[derive(Debug, Clone)]
pub struct LoadSpec {
    pub target_url: Uri,
    pub connections: usize,
    pub limit: LoadLimit,
    pub warmup: Duration,
    pub repetitions: u32,
    pub request_timeout: Duration,
    /// Process to sample (CPU, RSS) while measuring, if any.
    pub sample_pid: Option<u32>,
    pub sample_interval: Duration,
}

impl LoadSpec {
    pub fn new(target_url: Uri, connections: usize, limit: LoadLimit) -> Self {
        LoadSpec {
            target_url,
            connections,
            limit,
            warmup: Duration::from_secs(3),
            repetitions: 3,
            request_timeout: Duration::from_secs(30),
            sample_pid: None,
            sample_interval: super::sampler::DEFAULT_SAMPLE_INTERVAL,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidSpec(m.to_string()));
        match self.target_url.scheme_str() {
            Some("http") | Some("https") => {}
            _ => return bad("target must be an http:// or https:// URL"),
        }
        if self.target_url.host().is_none() {
            return bad("target has no host");
        }
        if self.connections == 0 {
            return bad("connections must be at least 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        match self.limit {
            LoadLimit::Duration(d) if d.is_zero() => bad("duration must be positive"),
            LoadLimit::Requests(0) => bad("request count must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureClass {
    Connect,
    Timeout,
    Status4xx,
    Status5xx,
    /// Anything else: body read errors, resets mid-response.
    Io,
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureClass::Connect => "connect",
            FailureClass::Timeout => "timeout",
            FailureClass::Status4xx => "4xx",
            FailureClass::Status5xx => "5xx",
            FailureClass::Io => "io",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub connections: usize,
    /// 1-based.
    pub repetition: u32,
    pub completed: u64,
    pub failed: BTreeMap<FailureClass, u64>,
    pub wall_time: Duration,
    /// Ascending latencies of completed requests, in milliseconds.
    pub latencies_ms: Vec<f64>,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub throughput_rps: f64,
    pub samples: Vec<ResourceSample>,
}

impl BenchResult {
    pub fn failed_total(&self) -> u64 {
        self.failed.values().sum()
    }

    pub fn issued(&self) -> u64 {
        self.completed + self.failed_total()
    }

    pub fn mean_cpu_pct(&self) -> Option<f64> {
        (!self.samples.is_empty()).then(|| {
            self.samples.iter().map(|s| s.cpu_percent).sum::<f64>() / self.samples.len() as f64
        })
    }

    pub fn peak_rss_bytes(&self) -> Option<u64> {
        self.samples.iter().map(|s| s.rss_bytes).max()
    }

    fn from_parts(
        spec: &LoadSpec,
        repetition: u32,
        stats: WorkerStats,
        wall_time: Duration,
        trace: Option<ResourceTrace>,
    ) -> Self {
        let WorkerStats {
            mut latencies_ms,
            failed,
        } = stats;
        latencies_ms.sort_by(f64::total_cmp);
        let pct = |p| percentile_sorted(&latencies_ms, p).unwrap_or(0.0);
        let completed = latencies_ms.len() as u64;
        let secs = wall_time.as_secs_f64();
        BenchResult {
            connections: spec.connections,
            repetition,
            completed,
            failed,
            wall_time,
            p50_ms: pct(50.0),
            p90_ms: pct(90.0),
            p99_ms: pct(99.0),
            max_ms: latencies_ms.last().copied().unwrap_or(0.0),
            throughput_rps: if secs > 0.0 {
                completed as f64 / secs
            } else {
                0.0
            },
            latencies_ms,
            samples: trace.map(|t| t.samples).unwrap_or_default(),
        }
    }
}

/// All repetitions of one connection level.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub runs: Vec<BenchResult>,
    pub median_index: usize,
}

impl LoadOutcome {
    pub fn median(&self) -> &BenchResult {
        &self.runs[self.median_index]
    }

    fn new(runs: Vec<BenchResult>) -> Self {
        let mut order: Vec<usize> = (0..runs.len()).collect();
        order.sort_by(|&a, &b| runs[a].throughput_rps.total_cmp(&runs[b].throughput_rps));
        let median_index = order[(order.len() - 1) / 2];
        LoadOutcome { runs, median_index }
    }
}

#[derive(Debug, Default)]
struct WorkerStats {
    latencies_ms: Vec<f64>,
    failed: BTreeMap<FailureClass, u64>,
}

impl WorkerStats {
    fn merge(&mut self, other: WorkerStats) {
        self.latencies_ms.extend(other.latencies_ms);
        for (k, v) in other.failed {
            *self.failed.entry(k).or_default() += v;
        }
    }
}

fn client() -> HttpClient {
    let connector = hyper_rustls::HttpsConnectorBuilder::new()
        .with_provider_and_webpki_roots(Arc::new(rustls::crypto::ring::default_provider()))
        .expect("ring provider supports the default protocol versions")
        .https_or_http()
        .enable_http1()
        .build();
    // One idle connection per worker keeps "connections" literal.
    Client::builder(TokioExecutor::new())
        .pool_max_idle_per_host(1)
        .build(connector)
}

async fn one_request(client: &HttpClient, spec: &LoadSpec) -> Result<(), FailureClass> {
    let req = Request::get(spec.target_url.clone())
        .body(Empty::new())
        .expect("GET to a validated URI");
    let exchange = async {
        let resp = client.request(req).await.map_err(|e| {
            if e.is_connect() {
                FailureClass::Connect
            } else {
                FailureClass::Io
            }
        })?;
        let status = resp.status();
        resp.into_body()
            .collect()
            .await
            .map_err(|_| FailureClass::Io)?;
        Ok(status)
    };
    let status: StatusCode = tokio::time::timeout(spec.request_timeout, exchange)
        .await
        .map_err(|_| FailureClass::Timeout)??;
    if status.is_client_error() {
        Err(FailureClass::Status4xx)
    } else if status.is_server_error() {
        Err(FailureClass::Status5xx)
    } else {
        Ok(())
    }
}

enum Stop {
    Deadline(Instant),
    Tickets(Arc<AtomicU64>),
}

impl Stop {
    fn take(&self) -> bool {
        match self {
            Stop::Deadline(t) => Instant::now() < *t,
            Stop::Tickets(left) => left
                .fetch_update(Ordering::AcqRel, Ordering::Acquire, |n| n.checked_sub(1))
                .is_ok(),
        }
    }
}

/// Runs `spec.connections` closed loops until `limit` and returns their
/// merged stats plus the wall time of the phase.
async fn phase(spec: &LoadSpec, limit: LoadLimit) -> (WorkerStats, Duration) {
    let started = Instant::now();
    let stop = Arc::new(match limit {
        LoadLimit::Duration(d) => Stop::Deadline(started + d),
        LoadLimit::Requests(n) => Stop::Tickets(Arc::new(AtomicU64::new(n))),
    });
    let mut workers = tokio::task::JoinSet::new();
    for _ in 0..spec.connections {
        let stop = stop.clone();
        let spec = spec.clone();
        workers.spawn(async move {
            let client = client();
            let mut stats = WorkerStats::default();
            while stop.take() {
                let t0 = Instant::now();
                match one_request(&client, &spec).await {
                    Ok(()) => stats.latencies_ms.push(t0.elapsed().as_secs_f64() * 1000.0),
                    Err(class) => *stats.failed.entry(class).or_default() += 1,
                }
            }
            stats
        });
    }
    let mut total = WorkerStats::default();
    while let Some(joined) = workers.join_next().await {
        total.merge(joined.expect("load worker panicked"));
    }
    (total, started.elapsed())
}

/// One measured run with no probe and no warmup.
pub async fn measure_once(spec: &LoadSpec, repetition: u32) -> Result<BenchResult, BenchError> {
    spec.validate()?;
    let sampler = match spec.sample_pid {
        Some(pid) => Some(ResourceSampler::spawn(pid, spec.sample_interval)?),
        None => None,
    };
    let (stats, wall) = phase(spec, spec.limit).await;
    let trace = sampler.map(ResourceSampler::stop);
    Ok(BenchResult::from_parts(
        spec, repetition, stats, wall, trace,
    ))
}

/// Probes the target, then runs warmup + measurement `spec.repetitions`
/// times. Warmup samples are discarded.
pub async fn run_load(spec: &LoadSpec) -> Result<LoadOutcome, BenchError> {
    spec.validate()?;
    let unreachable = |reason: String| BenchError::TargetUnreachable {
        url: spec.target_url.to_string(),
        reason,
    };
    match one_request(&client(), spec).await {
        Ok(()) | Err(FailureClass::Status4xx | FailureClass::Status5xx) => {}
        Err(class) => return Err(unreachable(format!("probe failed ({class})"))),
    }
    let mut runs = Vec::new();
    for rep in 1..=spec.repetitions {
        if !spec.warmup.is_zero() {
            let (warm, _) = phase(spec, LoadLimit::Duration(spec.warmup)).await;
            // Error statuses mean the target answered; only refused or
            // silent connections count as unreachable.
            let reached = warm
                .failed
                .keys()
                .any(|c| !matches!(c, FailureClass::Connect | FailureClass::Timeout));
            if warm.latencies_ms.is_empty() && !reached {
                let classes: Vec<String> = warm.failed.keys().map(|c| c.to_string()).collect();
                return Err(unreachable(format!(
                    "no request succeeded during warmup ({})",
                    classes.join(", ")
                )));
            }
        }
        runs.push(measure_once(spec, rep).await?);
    }
    Ok(LoadOutcome::new(runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(throughput: f64) -> BenchResult {
        BenchResult {
            connections: 1,
            repetition: 1,
            completed: 0,
            failed: BTreeMap::new(),
            wall_time: Duration::from_secs(1),
            latencies_ms: vec![],
            p50_ms: 0.0,
            p90_ms: 0.0,
            p99_ms: 0.0,
            max_ms: 0.0,
            throughput_rps: throughput,
            samples: vec![],
        }
    }

    #[test]
    fn median_by_throughput() {
        let o = LoadOutcome::new(vec![fake(30.0), fake(10.0), fake(20.0)]);
        assert_eq!(o.median_index, 2);
        assert_eq!(LoadOutcome::new(vec![fake(5.0)]).median_index, 0);
    }

    #[test]
    fn spec_validation() {
        let uri: Uri = "http://127.0.0.1:1/".parse().unwrap();
        let ok = LoadSpec::new(uri.clone(), 4, LoadLimit::Requests(10));
        assert!(ok.validate().is_ok());
        assert!(LoadSpec::new(uri.clone(), 0, LoadLimit::Requests(10))
            .validate()
            .is_err());
        assert!(LoadSpec::new(uri.clone(), 1, LoadLimit::Requests(0))
            .validate()
            .is_err());
        assert!(LoadSpec::new(uri, 1, LoadLimit::Duration(Duration::ZERO))
            .validate()
            .is_err());
        let ftp: Uri = "ftp://h/".parse().unwrap();
        assert!(LoadSpec::new(ftp, 1, LoadLimit::Requests(1))
            .validate()
            .is_err());
    }

    #[test]
    fn tickets_hand_out_exactly_n() {
        let stop = Stop::Tickets(Arc::new(AtomicU64::new(3)));
        assert_eq!((0..10).filter(|_| stop.take()).count(), 3);
    }

    #[tokio::test]
    async fn dead_target_is_unreachable() {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let mut spec = LoadSpec::new(
            format!("http://127.0.0.1:{port}/").parse().unwrap(),
            2,
            LoadLimit::Requests(5),
        );
        spec.warmup = Duration::ZERO;
        assert!(matches!(
            run_load(&spec).await,
            Err(BenchError::TargetUnreachable { .. })
        ));

        // Measuring directly records every request as a failure.
        let r = measure_once(&spec, 1).await.unwrap();
        assert_eq!(r.completed, 0);
        assert_eq!(r.failed_total(), 5);
        assert_eq!(r.throughput_rps, 0.0);
        assert_eq!(r.p50_ms, 0.0);
    }
}
