//! Benchmark harness: closed-loop HTTP load, nearest-rank percentiles,
//! per-process CPU/RSS sampling, and side-by-side comparison reports.
//!
//! A sweep runs [`run_load`] once per connection level. Each level is
//! repeated (three times by default) and the repetition with the median
//! throughput is the one reported for that level.

mod load;
mod report;
mod sampler;
mod stats;

pub use load::{
    measure_once, run_load, BenchError, BenchResult, FailureClass, LoadLimit, LoadOutcome, LoadSpec,
};
pub use report::{
    compare_report, cpu_series_csv, csv_string, read_csv, rows_for, write_csv_atomic,
    ComparisonLevel, ComparisonReport, CsvRow, LabeledSweep, ReportError, CSV_HEADER,
};
pub use sampler::{
    sample_resources, ResourceSample, ResourceSampler, ResourceTrace, SamplerError,
    DEFAULT_SAMPLE_INTERVAL, MIN_SAMPLE_INTERVAL,
};
pub use stats::{percentile, percentile_sorted, StatsError};
