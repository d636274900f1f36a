//! Device-count sweeps, worst-case extrapolation and PDO-cycle comparison.

use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{run_scenario, MeasurementTarget, Scenario, ScenarioError};
use super::stats::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub devices: usize,
    pub best_ns: u64,
    pub worst_ns: u64,
    pub mean_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Least-squares fit of best-case time against device count.
    pub slope_ns: f64,
    pub intercept_ns: f64,
    pub worst_slope_ns: f64,
}

/// Rerun a single-segment scenario with each device count, measuring at
/// the most distant device. Runs are independent and execute in parallel;
/// points come back in input order.
pub fn sweep_devices(base: &Scenario, counts: &[usize]) -> Result<SweepResult, ScenarioError> {
    if base.topology.segments.len() != 1 {
        return Err(ScenarioError::NotSingleSegment(base.topology.segments.len()));
    }
    let points = counts
        .par_iter()
        .map(|&n| {
            let mut s = base.clone();
            s.topology.segments[0].device_count = n;
            s.measurement = Some(MeasurementTarget {
                segment: 0,
                device: n.saturating_sub(1),
            });
            s.outputs = Default::default();
            let out = run_scenario(&s)?;
            Ok(SweepPoint {
                devices: n,
                best_ns: out.stats.min_ns,
                worst_ns: out.stats.max_ns,
                mean_ns: out.stats.mean_ns,
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let fit = |f: fn(&SweepPoint) -> u64| {
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.devices as f64, f(p) as f64)).collect();
        least_squares(&xy)
    };
    let (slope_ns, intercept_ns) = fit(|p| p.best_ns);
    let (worst_slope_ns, _) = fit(|p| p.worst_ns);
    Ok(SweepResult {
        points,
        slope_ns,
        intercept_ns,
        worst_slope_ns,
    })
}

/// Worst case for a segment grown to `devices`, from a measured base and the
/// per-device hop cost.
pub fn extrapolate_worst(worst_base_ns: u64, slope_ns: u64, devices: u64) -> u64 {
    worst_base_ns + slope_ns * devices
}

/// Devices per segment when `racks` ToRs are spread evenly over `masters`.
pub fn devices_per_segment(racks: u64, masters: u64) -> u64 {
    assert!(masters > 0);
    racks.div_ceil(masters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PdoComparison {
    pub slow_cycle_ns: u64,
    pub fast_cycle_ns: u64,
    pub slow_worst_ns: u64,
    pub fast_worst_ns: u64,
    pub slow_best_ns: u64,
    pub fast_best_ns: u64,
    pub reduction_ns: i64,
}

/// Run `base` at two PDO cycle lengths and report how much the worst case drops.
pub fn pdo_reduction_analysis(
    base: &Scenario,
    slow_cycle_ns: u64,
    fast_cycle_ns: u64,
) -> Result<PdoComparison, ScenarioError> {
    let run = |cycle: u64| {
        let mut s = base.clone();
        s.topology.timing.pdo_cycle_ns = cycle as i64;
        s.outputs = Default::default();
        run_scenario(&s)
    };
    let (slow, fast) = rayon::join(|| run(slow_cycle_ns), || run(fast_cycle_ns));
    let (slow, fast) = (slow?, fast?);
    Ok(PdoComparison {
        slow_cycle_ns,
        fast_cycle_ns,
        slow_worst_ns: slow.stats.max_ns,
        fast_worst_ns: fast.stats.max_ns,
        slow_best_ns: slow.stats.min_ns,
        fast_best_ns: fast.stats.min_ns,
        reduction_ns: slow.stats.max_ns as i64 - fast.stats.max_ns as i64,
    })
}
