//! Scenario error metrics and generation statistics.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty series")]
    Empty,
    #[error("baseline error is zero")]
    ZeroBaseline,
    #[error("need at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },
}

/// Root-mean-square deviation of `series` from `reference`.
pub fn rmse(series: &[f64], reference: f64) -> Result<f64, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::Empty);
    }
    let ss: f64 = series.iter().map(|x| (x - reference) * (x - reference)).sum();
    Ok(libm::sqrt(ss / series.len() as f64))
}

/// Relative reduction of the error, in percent (positive is better).
pub fn improvement(baseline: f64, adapted: f64) -> Result<f64, MetricsError> {
    if baseline == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((baseline - adapted) / baseline * 100.0)
}

/// Forward differences `(x[i+1] - x[i]) / dt`.
pub fn finite_difference(series: &[f64], dt: f64) -> Vec<f64> {
    series.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}

pub fn mean(xs: &[f64]) -> Result<f64, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> Result<f64, MetricsError> {
    let m = mean(xs)?;
    Ok(libm::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64))
}

/// Output size and wall time of one completion.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenerationStats {
    pub output_tokens: u32,
    /// Seconds.
    pub latency: f64,
}

impl GenerationStats {
    pub fn tokens_per_second(&self) -> f64 {
        if self.latency > 0.0 {
            self.output_tokens as f64 / self.latency
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StatsSummary {
    pub runs: usize,
    pub mean_tokens_per_second: f64,
    /// Mean and population std of the latency, seconds.
    pub mu_t: f64,
    pub sigma_t: f64,
    pub mean_output_tokens: f64,
}

pub fn stats_summary(runs: &[GenerationStats]) -> Result<StatsSummary, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns { needed: 2, got: runs.len() });
    }
    let tps: Vec<f64> = runs.iter().map(|r| r.tokens_per_second()).collect();
    let lat: Vec<f64> = runs.iter().map(|r| r.latency).collect();
    let tok: Vec<f64> = runs.iter().map(|r| r.output_tokens as f64).collect();
    Ok(StatsSummary {
        runs: runs.len(),
        mean_tokens_per_second: mean(&tps)?,
        mu_t: mean(&lat)?,
        sigma_t: std_dev(&lat)?,
        mean_output_tokens: mean(&tok)?,
    })
}
