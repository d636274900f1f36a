//! Summary statistics over configuration-time samples.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HistogramBin {
    pub start_ns: u64,
    pub count: usize,
}

pub const HISTOGRAM_BIN_NS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub count: usize,
    pub min_ns: u64,
    pub max_ns: u64,
    pub mean_ns: f64,
    /// Population standard deviation.
    pub stddev_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    /// `max - min`.
    pub jitter_ns: u64,
    /// 1 us bins from the bin holding `min` to the bin holding `max`.
    pub histogram: Vec<HistogramBin>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl RunStats {
    pub fn from_samples(samples: &[u64]) -> Self {
        assert!(!samples.is_empty(), "no samples");
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let min = sorted[0];
        let max = sorted[n - 1];
        let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = sorted.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;

        let first = min / HISTOGRAM_BIN_NS;
        let last = max / HISTOGRAM_BIN_NS;
        let mut histogram: Vec<HistogramBin> = (first..=last)
            .map(|b| HistogramBin {
                start_ns: b * HISTOGRAM_BIN_NS,
                count: 0,
            })
            .collect();
        for &v in &sorted {
            histogram[(v / HISTOGRAM_BIN_NS - first) as usize].count += 1;
        }

        Self {
            count: n,
            min_ns: min,
            max_ns: max,
            mean_ns: mean,
            stddev_ns: var.sqrt(),
            p50_ns: percentile(&sorted, 50.0),
            p99_ns: percentile(&sorted, 99.0),
            jitter_ns: max - min,
            histogram,
        }
    }
}

/// Kolmogorov-Smirnov distance between `samples` and the uniform
/// distribution on `[lo, lo + width)`.
pub fn ks_uniform(samples: &[u64], lo: u64, width: u64) -> f64 {
    assert!(!samples.is_empty() && width > 0);
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        let f = (v.saturating_sub(lo) as f64 / width as f64).clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Ordinary least-squares fit `y = intercept + slope * x`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    assert!(points.len() >= 2);
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
