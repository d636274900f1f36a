//! Batch experiments: scenario files, runs, statistics and exports.

mod analysis;
mod export;
mod scenario;
mod stats;

pub use analysis::{
    devices_per_segment, extrapolate_worst, pdo_reduction_analysis, sweep_devices, PdoComparison, SweepPoint,
    SweepResult,
};
pub use export::{fmt_us, parse_us, read_csv_config_times, write_csv, write_event_log, write_trace, CSV_HEADER};
pub use scenario::{
    run_scenario, run_scenario_logged, Arrival, MeasurementTarget, OutputPaths, PhaseLattice, RequestResult,
    RunOutcome, Scenario, ScenarioError, Workload, PRESETS,
};
pub use stats::{ks_critical_1pct, ks_uniform, least_squares, percentile, HistogramBin, RunStats, HISTOGRAM_BIN_NS};
