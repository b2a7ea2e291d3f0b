//! CPU and RSS of one process, read from `/proc` at a fixed interval.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_SAMPLE_INTERVAL: Duration = Duration::from_millis(100);
pub const MIN_SAMPLE_INTERVAL: Duration = Duration::from_millis(10);

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("sampling interval {0:?} is below the 10 ms minimum")]
    InvalidInterval(Duration),
    #[error("process {0} not found")]
    ProcessNotFound(u32),
    #[error("unreadable /proc entry for process {pid}: {reason}")]
    Proc { pid: u32, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceSample {
    /// Time since sampling started.
    pub t: Duration,
    /// Share of one core over the preceding interval (can exceed 100).
    pub cpu_percent: f64,
    pub rss_bytes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ResourceTrace {
    pub samples: Vec<ResourceSample>,
    /// The process exited before sampling was stopped.
    pub vanished: bool,
}

struct Reading {
    cpu_ticks: u64,
    rss_bytes: u64,
}

fn clock_ticks() -> f64 {
    // SAFETY: sysconf has no preconditions.
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 {
        t as f64
    } else {
        100.0
    }
}

fn page_size() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as u64
    } else {
        4096
    }
}

/// `None` once the process is gone.
fn read(pid: u32, page: u64) -> Result<Option<Reading>, SamplerError> {
    let proc_err = |reason: &str| SamplerError::Proc {
        pid,
        reason: reason.to_string(),
    };
    let (Ok(stat), Ok(statm)) = (
        std::fs::read_to_string(format!("/proc/{pid}/stat")),
        std::fs::read_to_string(format!("/proc/{pid}/statm")),
    ) else {
        return Ok(None);
    };
    // The command name is parenthesised and may contain spaces.
    let after = stat
        .rsplit_once(')')
        .ok_or_else(|| proc_err("stat has no ')'"))?
        .1;
    let fields: Vec<&str> = after.split_whitespace().collect();
    // fields[0] is the state (field 3); utime and stime are fields 14 and 15.
    if fields.first() == Some(&"Z") {
        return Ok(None);
    }
    let tick = |i: usize| -> Result<u64, SamplerError> {
        fields
            .get(i)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| proc_err("stat is missing cpu times"))
    };
    let cpu_ticks = tick(11)? + tick(12)?;
    let resident: u64 = statm
        .split_whitespace()
        .nth(1)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| proc_err("statm is missing the resident count"))?;
    Ok(Some(Reading {
        cpu_ticks,
        rss_bytes: resident * page,
    }))
}

/// Samples `pid` every `interval` until `stop` is set or the process exits.
/// Blocks the calling thread.
pub fn sample_resources(
    pid: u32,
    interval: Duration,
    stop: &AtomicBool,
) -> Result<ResourceTrace, SamplerError> {
    if interval < MIN_SAMPLE_INTERVAL {
        return Err(SamplerError::InvalidInterval(interval));
    }
    let page = page_size();
    let hz = clock_ticks();
    let start = Instant::now();
    let mut prev = read(pid, page)?.ok_or(SamplerError::ProcessNotFound(pid))?;
    let mut prev_at = start;
    let mut trace = ResourceTrace::default();
    let mut next = start + interval;
    while !stop.load(Ordering::Acquire) {
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        }
        next += interval;
        let Some(cur) = read(pid, page)? else {
            trace.vanished = true;
            break;
        };
        let at = Instant::now();
        let dt = at.duration_since(prev_at).as_secs_f64();
        let cpu_s = cur.cpu_ticks.saturating_sub(prev.cpu_ticks) as f64 / hz;
        trace.samples.push(ResourceSample {
            t: at.duration_since(start),
            cpu_percent: if dt > 0.0 { 100.0 * cpu_s / dt } else { 0.0 },
            rss_bytes: cur.rss_bytes,
        });
        prev = cur;
        prev_at = at;
    }
    Ok(trace)
}

/// [`sample_resources`] on a background thread.
pub struct ResourceSampler {
    stop: Arc<AtomicBool>,
    thread: thread::JoinHandle<Result<ResourceTrace, SamplerError>>,
}

impl ResourceSampler {
    /// Fails immediately if the interval is too short or the process is
    /// not there.
    pub fn spawn(pid: u32, interval: Duration) -> Result<Self, SamplerError> {
        if interval < MIN_SAMPLE_INTERVAL {
            return Err(SamplerError::InvalidInterval(interval));
        }
        read(pid, page_size())?.ok_or(SamplerError::ProcessNotFound(pid))?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::Builder::new()
            .name(format!("sampler-{pid}"))
            .spawn(move || sample_resources(pid, interval, &flag))
            .expect("spawn sampler thread");
        Ok(ResourceSampler { stop, thread })
    }

    /// Stops sampling and returns what was collected. A process that
    /// vanished in between yields the partial trace.
    pub fn stop(self) -> ResourceTrace {
        self.stop.store(true, Ordering::Release);
        match self.thread.join() {
            Ok(Ok(trace)) => trace,
            Ok(Err(err)) => {
                tracing::warn!(error = %err, "resource sampling failed");
                ResourceTrace {
                    samples: vec![],
                    vanished: true,
                }
            }
            Err(_) => ResourceTrace::default(),
        }
    }
}
