//! Sweep CSVs and direct-vs-gateway comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::load::LoadOutcome;
use super::sampler::ResourceSample;

pub const CSV_HEADER: &str = "connections,repetition,completed,failed,p50_ms,p90_ms,p99_ms,max_ms,throughput_rps,mean_cpu_pct,peak_rss_bytes";

const MEDIAN: &str = "median";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("sweeps cover different connection levels: {a:?} vs {b:?}")]
    MismatchedSweep { a: Vec<usize>, b: Vec<usize> },
    #[error("sweep {label:?} has no median row for {connections} connections")]
    MissingMedian { label: String, connections: usize },
}

/// One line of a sweep CSV. `repetition` is a 1-based number or `median`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub connections: usize,
    pub repetition: String,
    pub completed: u64,
    pub failed: u64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub throughput_rps: f64,
    pub mean_cpu_pct: Option<f64>,
    pub peak_rss_bytes: Option<u64>,
}

impl CsvRow {
    pub fn is_median(&self) -> bool {
        self.repetition == MEDIAN
    }
}

/// Every repetition of a level followed by its median row.
pub fn rows_for(outcome: &LoadOutcome) -> Vec<CsvRow> {
    let row = |r: &super::BenchResult, repetition: String| CsvRow {
        connections: r.connections,
        repetition,
        completed: r.completed,
        failed: r.failed_total(),
        p50_ms: r.p50_ms,
        p90_ms: r.p90_ms,
        p99_ms: r.p99_ms,
        max_ms: r.max_ms,
        throughput_rps: r.throughput_rps,
        mean_cpu_pct: r.mean_cpu_pct(),
        peak_rss_bytes: r.peak_rss_bytes(),
    };
    let mut rows: Vec<CsvRow> = outcome
        .runs
        .iter()
        .map(|r| row(r, r.repetition.to_string()))
        .collect();
    rows.push(row(outcome.median(), MEDIAN.to_string()));
    rows
}

/// Writes next to `path` and renames into place, so readers never see a
/// half-written file.
pub fn write_csv_atomic(path: &Path, rows: &[CsvRow]) -> Result<(), ReportError> {
    let shown = path.display().to_string();
    let io_err = |source| ReportError::Io {
        path: shown.clone(),
        source,
    };
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut w = csv::Writer::from_path(&tmp)?;
        for r in rows {
            w.serialize(r)?;
        }
        if rows.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    if let Err(source) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(ReportError::Csv {
            path: shown,
            source,
        });
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// The same bytes [`write_csv_atomic`] would write.
pub fn csv_string(rows: &[CsvRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to memory");
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .expect("header writes to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("CSV is UTF-8")
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

#[derive(Debug, Clone)]
pub struct LabeledSweep {
    pub label: String,
    pub rows: Vec<CsvRow>,
}

impl LabeledSweep {
    pub fn new(label: impl Into<String>, rows: Vec<CsvRow>) -> Self {
        LabeledSweep {
            label: label.into(),
            rows,
        }
    }

    fn levels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rows.iter().map(|r| r.connections).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn medians(&self) -> Result<BTreeMap<usize, &CsvRow>, ReportError> {
        let medians: BTreeMap<usize, &CsvRow> = self
            .rows
            .iter()
            .filter(|r| r.is_median())
            .map(|r| (r.connections, r))
            .collect();
        for c in self.levels() {
            if !medians.contains_key(&c) {
                return Err(ReportError::MissingMedian {
                    label: self.label.clone(),
                    connections: c,
                });
            }
        }
        Ok(medians)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonLevel {
    pub connections: usize,
    pub p50_a_ms: f64,
    pub p50_b_ms: f64,
    /// `p50_b / p50_a`.
    pub latency_ratio: f64,
    pub throughput_a: f64,
    pub throughput_b: f64,
    /// `throughput_b / throughput_a`.
    pub throughput_ratio: f64,
    /// `cpu_b - cpu_a`, when both sides were sampled.
    pub cpu_delta_pct: Option<f64>,
    pub peak_rss_a: Option<u64>,
    pub peak_rss_b: Option<u64>,
    /// `rss_b - rss_a`, when both sides were sampled.
    pub rss_delta_bytes: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub label_a: String,
    pub label_b: String,
    pub levels: Vec<ComparisonLevel>,
}

fn ratio(b: f64, a: f64) -> f64 {
    if a == 0.0 {
        if b == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        b / a
    }
}

/// Compares the median rows of two sweeps level by level.
pub fn compare_report(a: &LabeledSweep, b: &LabeledSweep) -> Result<ComparisonReport, ReportError> {
    let (la, lb) = (a.levels(), b.levels());
    if la != lb {
        return Err(ReportError::MismatchedSweep { a: la, b: lb });
    }
    let (ma, mb) = (a.medians()?, b.medians()?);
    let levels = ma
        .iter()
        .map(|(&connections, ra)| {
            let rb = mb[&connections];
            ComparisonLevel {
                connections,
                p50_a_ms: ra.p50_ms,
                p50_b_ms: rb.p50_ms,
                latency_ratio: ratio(rb.p50_ms, ra.p50_ms),
                throughput_a: ra.throughput_rps,
                throughput_b: rb.throughput_rps,
                throughput_ratio: ratio(rb.throughput_rps, ra.throughput_rps),
                cpu_delta_pct: ra.mean_cpu_pct.zip(rb.mean_cpu_pct).map(|(x, y)| y - x),
                peak_rss_a: ra.peak_rss_bytes,
                peak_rss_b: rb.peak_rss_bytes,
                rss_delta_bytes: ra
                    .peak_rss_bytes
                    .zip(rb.peak_rss_bytes)
                    .map(|(x, y)| y as i64 - x as i64),
            }
        })
        .collect();
    Ok(ComparisonReport {
        label_a: a.label.clone(),
        label_b: b.label.clone(),
        levels,
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn mib(bytes: u64) -> f64 {
    bytes as f64 / (1024.0 * 1024.0)
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "connections,p50_a_ms,p50_b_ms,latency_ratio,throughput_a_rps,throughput_b_rps,throughput_ratio,cpu_delta_pct,rss_delta_bytes\n",
        );
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{},{:.3},{:.3},{:.4},{:.2},{:.2},{:.4},{},{}",
                l.connections,
                l.p50_a_ms,
                l.p50_b_ms,
                l.latency_ratio,
                l.throughput_a,
                l.throughput_b,
                l.throughput_ratio,
                opt(l.cpu_delta_pct.map(|d| format!("{d:.2}"))),
                opt(l.rss_delta_bytes),
            );
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>11}  {:>12}  {:>12}  {:>7}  {:>12}  {:>12}  {:>7}  {:>9}  {:>10}",
            "connections",
            format!("p50 {}", self.label_a),
            format!("p50 {}", self.label_b),
            "ratio",
            format!("rps {}", self.label_a),
            format!("rps {}", self.label_b),
            "ratio",
            "cpu Δ%",
            "rss Δ MB",
        );
        for l in &self.levels {
            let _ =
                writeln!(
                out,
                "{:>11}  {:>12.3}  {:>12.3}  {:>7.3}  {:>12.1}  {:>12.1}  {:>7.3}  {:>9}  {:>10}",
                l.connections,
                l.p50_a_ms,
                l.p50_b_ms,
                l.latency_ratio,
                l.throughput_a,
                l.throughput_b,
                l.throughput_ratio,
                opt(l.cpu_delta_pct.map(|d| format!("{d:.1}"))),
                opt(l.rss_delta_bytes.map(|d| format!("{:.1}", d as f64 / (1024.0 * 1024.0)))),
            );
        }
        out
    }

    /// Peak RSS of each side across all levels, as a two-column table.
    pub fn memory_table(&self) -> String {
        let peak = |f: fn(&ComparisonLevel) -> Option<u64>| self.levels.iter().filter_map(f).max();
        let mut out = String::from("Stack | Size(MB)\n------|---------\n");
        for (label, value) in [
            (&self.label_a, peak(|l| l.peak_rss_a)),
            (&self.label_b, peak(|l| l.peak_rss_b)),
        ] {
            let shown = value
                .map(|v| format!("{:.1}", mib(v)))
                .unwrap_or_else(|| "n/a".into());
            let _ = writeln!(out, "{label} | {shown}");
        }
        out
    }
}

/// Long-format CPU/RSS time series, one row per sample.
pub fn cpu_series_csv(series: &[(&str, &[ResourceSample])]) -> String {
    let mut out = String::from("stack,t_s,cpu_percent,rss_bytes\n");
    for (label, samples) in series {
        for s in *samples {
            let _ = writeln!(
                out,
                "{label},{:.3},{:.2},{}",
                s.t.as_secs_f64(),
                s.cpu_percent,
                s.rss_bytes
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn row(connections: usize, repetition: &str, p50: f64, rps: f64) -> CsvRow {
        CsvRow {
            connections,
            repetition: repetition.into(),
            completed: 100,
            failed: 0,
            p50_ms: p50,
            p90_ms: p50,
            p99_ms: p50,
            max_ms: p50,
            throughput_rps: rps,
            mean_cpu_pct: Some(10.0),
            peak_rss_bytes: Some(8 << 20),
        }
    }

    fn sweep(label: &str, scale: f64) -> LabeledSweep {
        let mut rows = vec![];
        for c in [50, 100] {
            rows.push(row(c, "1", 10.0 * scale, 1000.0 / scale));
            rows.push(row(c, MEDIAN, 10.0 * scale, 1000.0 / scale));
        }
        LabeledSweep::new(label, rows)
    }

    #[test]
    fn self_comparison_is_identity() {
        let s = sweep("a", 1.0);
        let r = compare_report(&s, &s).unwrap();
        for l in &r.levels {
            assert_eq!(l.latency_ratio, 1.0);
            assert_eq!(l.throughput_ratio, 1.0);
            assert_eq!(l.cpu_delta_pct, Some(0.0));
            assert_eq!(l.rss_delta_bytes, Some(0));
        }
    }

    #[test]
    fn doubled_latency() {
        let r = compare_report(&sweep("direct", 1.0), &sweep("gateway", 2.0)).unwrap();
        assert!(r
            .levels
            .iter()
            .all(|l| l.latency_ratio == 2.0 && l.throughput_ratio == 0.5));
        assert!(r
            .to_csv()
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("50,10.000,20.000,2.0000"));
        let mem = r.memory_table();
        assert!(mem.starts_with("Stack | Size(MB)\n"));
        assert!(mem.contains("direct | 8.0\n") && mem.contains("gateway | 8.0\n"));
    }

    #[test]
    fn mismatched_levels() {
        let a = sweep("a", 1.0);
        let mut b = sweep("b", 1.0);
        b.rows.retain(|r| r.connections == 50);
        assert!(matches!(
            compare_report(&a, &b),
            Err(ReportError::MismatchedSweep { .. })
        ));
        b.rows.retain(|r| !r.is_median());
        let b = LabeledSweep::new("b", vec![row(50, "1", 1.0, 1.0), row(100, "1", 1.0, 1.0)]);
        assert!(matches!(
            compare_report(&a, &b),
            Err(ReportError::MissingMedian { .. })
        ));
    }

    #[test]
    fn zero_ratios() {
        assert_eq!(ratio(0.0, 0.0), 1.0);
        assert_eq!(ratio(1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let mut rows = sweep("a", 1.0).rows;
        rows[0].mean_cpu_pct = None;
        rows[0].peak_rss_bytes = None;
        write_csv_atomic(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(read_csv(&path).unwrap(), rows);
        assert_eq!(csv_string(&rows), text);
        assert_eq!(csv_string(&[]).trim_end(), CSV_HEADER);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn series_csv() {
        let s = [ResourceSample {
            t: Duration::from_millis(100),
            cpu_percent: 12.5,
            rss_bytes: 42,
        }];
        assert_eq!(
            cpu_series_csv(&[("gw", &s)]),
            "stack,t_s,cpu_percent,rss_bytes\ngw,0.100,12.50,42\n"
        );
    }
}
