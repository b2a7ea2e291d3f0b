use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum StatsError {
    #[error("no samples")]
    EmptySamples,
    #[error("percentile {0} is outside 0..=100")]
    InvalidPercentile(f64),
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p/100 * n)` of
/// the ascending sort (rank 1 for `p == 0`).
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, StatsError> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

/// [`percentile`] over an already ascending slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64, StatsError> {
    if sorted.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(StatsError::InvalidPercentile(p));
    }
    let n = sorted.len();
    // p * n / 100 rather than p / 100 * n keeps integral ranks exact.
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}
