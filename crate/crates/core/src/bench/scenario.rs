//! Scenario files and the batch runner.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_controller::{ConfigureRequest, ControllerError, DeviceController, Event, RequestTrace, Target};
use crate::ecat::RequestId;
use crate::engine::{SimRng, TimedEvent};
use crate::topology::{build_topology, Topology, TopologyError, TopologySpec};

use super::stats::RunStats;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("scenario needs at least one request")]
    NoRequests,
    #[error("phase quantum must be in (0, pdo cycle], got {0} ns")]
    BadQuantum(u64),
    #[error("measurement target segment {0}, device {1} is not in the topology")]
    BadMeasurement(usize, usize),
    #[error("operation needs a single-segment scenario, got {0} segments")]
    NotSingleSegment(usize),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arrival {
    /// Staging phase uniform over one PDO cycle of the measured master.
    #[default]
    #[serde(rename = "uniform-phase")]
    UniformPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    pub num_requests: usize,
    pub arrival: Arrival,
    pub seed: u64,
    /// Spacing of the phase and jitter lattice.
    pub phase_quantum_ns: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            num_requests: 1000,
            arrival: Arrival::UniformPhase,
            seed: 1,
            phase_quantum_ns: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementTarget {
    pub segment: usize,
    pub device: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub topology: TopologySpec,
    #[serde(default)]
    pub workload: Workload,
    /// Defaults to the most distant device of segment 0.
    #[serde(default)]
    pub measurement: Option<MeasurementTarget>,
    #[serde(default)]
    pub outputs: OutputPaths,
}

const EXP1: &str = include_str!("../../presets/exp1.json");
const EXP2: &str = include_str!("../../presets/exp2.json");

pub const PRESETS: [&str; 2] = ["exp1", "exp2"];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Built-in calibration presets: `exp1` (8 devices x 1 segment, 32 us
    /// cycle) and `exp2` (2 devices x 4 segments, 80 us cycle).
    pub fn preset(name: &str) -> Result<Self, ScenarioError> {
        match name {
            "exp1" => Self::from_json(EXP1),
            "exp2" => Self::from_json(EXP2),
            other => Err(ScenarioError::UnknownPreset(other.to_string())),
        }
    }

    /// A preset name or a path to a JSON scenario file.
    pub fn load(name_or_path: &str) -> Result<Self, ScenarioError> {
        if PRESETS.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        Self::from_json(&std::fs::read_to_string(name_or_path)?)
    }

    pub fn measurement_target(&self, topology: &Topology) -> Result<(usize, usize), ScenarioError> {
        let m = match self.measurement {
            Some(m) => (m.segment, m.device),
            None => (0, topology.most_distant(0)?),
        };
        if !topology.contains(m.0, m.1) {
            return Err(ScenarioError::BadMeasurement(m.0, m.1));
        }
        Ok(m)
    }
}

/// Draws (phase, jitter) pairs from the product lattice
/// `{0, q, ..} < C` x `{0, q, ..} <= d_jitter_max`, without replacement in
/// shuffled passes. Each draw is marginally uniform; once the batch covers a
/// full pass every lattice point, extremes included, has been visited.
#[derive(Debug, Clone)]
pub struct PhaseLattice {
    phases: Vec<u64>,
    jitters: Vec<u64>,
    order: Vec<usize>,
    pos: usize,
}

impl PhaseLattice {
    pub fn new(cycle_ns: u64, jitter_max_ns: u64, quantum_ns: u64) -> Self {
        assert!(quantum_ns > 0);
        let phases: Vec<u64> = (0..).map(|k| k * quantum_ns).take_while(|&p| p < cycle_ns).collect();
        let jitters: Vec<u64> = (0..)
            .map(|k| k * quantum_ns)
            .take_while(|&x| x <= jitter_max_ns)
            .collect();
        let n = phases.len() * jitters.len();
        Self {
            phases,
            jitters,
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn draw(&mut self, rng: &mut SimRng) -> (u64, u64) {
        if self.pos == self.order.len() {
            // Fisher-Yates
            for i in (1..self.order.len()).rev() {
                let j = rng.index(i + 1);
                self.order.swap(i, j);
            }
            self.pos = 0;
        }
        let cell = self.order[self.pos];
        self.pos += 1;
        (
            self.phases[cell / self.jitters.len()],
            self.jitters[cell % self.jitters.len()],
        )
    }
}

/// Per-request measurement at the scenario's target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestResult {
    pub request_id: RequestId,
    pub t_gen_ns: u64,
    pub t_emit_ns: u64,
    pub t_complete_ns: u64,
    pub config_time_ns: u64,
    pub segment: usize,
    pub device: usize,
    pub wait_ns: u64,
    pub jitter_ns: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub topology: Topology,
    pub stats: RunStats,
    pub results: Vec<RequestResult>,
    pub traces: Vec<RequestTrace>,
    /// Emission times of the measured master.
    pub emissions: Vec<u64>,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Build the scenario's plant, submit all requests and run them to completion.
///
/// Request `i` sits in its own window of whole PDO cycles of the measured
/// master, long enough that consecutive requests never share a frame. Its
/// generation time is chosen so the nominal staging instant falls `phase`
/// after a boundary, and its dispatch jitter is the paired lattice value.
/// Every request writes `1 << (i % 16)` to every device, so each one raises a
/// fresh output bit.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, ScenarioError> {
    run_inner(scenario, false).map(|(out, _)| out)
}

/// [`run_scenario`] that also returns every processed event.
pub fn run_scenario_logged(scenario: &Scenario) -> Result<(RunOutcome, Vec<TimedEvent<Event>>), ScenarioError> {
    run_inner(scenario, true)
}

fn run_inner(scenario: &Scenario, log: bool) -> Result<(RunOutcome, Vec<TimedEvent<Event>>), ScenarioError> {
    let topology = build_topology(&scenario.topology)?;
    let wl = &scenario.workload;
    if wl.num_requests == 0 {
        return Err(ScenarioError::NoRequests);
    }
    let timing = *topology.timing();
    let cycle = timing.pdo_cycle_ns;
    if wl.phase_quantum_ns == 0 || wl.phase_quantum_ns > cycle {
        return Err(ScenarioError::BadQuantum(wl.phase_quantum_ns));
    }
    let (m_seg, m_dev) = scenario.measurement_target(&topology)?;
    let m_phase = topology.segment(m_seg)?.phase_ns;
    let d_mm = timing.multi_master_overhead(topology.segment_count());
    let max_devices = topology.segments().iter().map(|s| s.device_count).max().unwrap_or(1) as u64;

    let lead = timing.d_sb_ns + d_mm;
    let span = lead
        + timing.d_jitter_max_ns
        + cycle
        + timing.d_frame_head_ns
        + max_devices * timing.d_hop_ns
        + timing.d_latch_ns;
    let window_cycles = ceil_div(span, cycle) + 1;
    let first_window = ceil_div(lead, cycle) + 1;

    let mut dc = DeviceController::new(topology.clone(), wl.seed);
    dc.record_emissions();
    if log {
        dc.record_events();
    }
    let mut rng = SimRng::new(wl.seed);
    let mut lattice = PhaseLattice::new(cycle, timing.d_jitter_max_ns, wl.phase_quantum_ns);

    let targets_for = |word: u16| -> Vec<Target> {
        topology
            .segments()
            .iter()
            .enumerate()
            .flat_map(|(s, spec)| {
                (0..spec.device_count).map(move |d| Target {
                    segment: s,
                    device: d,
                    outputs: word,
                })
            })
            .collect()
    };

    for i in 0..wl.num_requests as u64 {
        let (phase, jitter) = lattice.draw(&mut rng);
        let boundary = m_phase + (first_window + i * window_cycles) * cycle;
        let t_gen = boundary + phase - lead;
        let mut req = ConfigureRequest::new(i, targets_for(1 << (i % 16)));
        req.measure_at = Some((m_seg, m_dev));
        dc.submit_with_jitter(req, t_gen, jitter)?;
    }
    dc.run_until_idle();

    let traces: Vec<RequestTrace> = dc.traces().cloned().collect();
    let results: Vec<RequestResult> = traces
        .iter()
        .map(|t| RequestResult {
            request_id: t.request_id,
            t_gen_ns: t.t_generated_ns,
            t_emit_ns: t.t_master_emit_ns[&m_seg],
            t_complete_ns: t.t_latched_ns[&(m_seg, m_dev)],
            config_time_ns: t.config_time_ns().expect("complete"),
            segment: m_seg,
            device: m_dev,
            wait_ns: t.wait_ns(m_seg).expect("complete"),
            jitter_ns: t.jitter_ns.expect("staged"),
        })
        .collect();
    let times: Vec<u64> = results.iter().map(|r| r.config_time_ns).collect();
    let stats = RunStats::from_samples(&times);
    let emissions = dc.emission_times(m_seg).to_vec();
    let events = dc.event_log().to_vec();
    Ok((
        RunOutcome {
            topology,
            stats,
            results,
            traces,
            emissions,
        },
        events,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let e1 = Scenario::preset("exp1").unwrap();
        assert_eq!(e1.workload.num_requests, 1000);
        let t = build_topology(&e1.topology).unwrap();
        assert_eq!(t.timing().pdo_cycle_ns, 32_000);
        let fixed = t.timing().d_sb_ns + t.timing().d_frame_head_ns + t.timing().d_latch_ns;
        assert_eq!(fixed, 82_800);
        let e2 = Scenario::preset("exp2").unwrap();
        let t2 = build_topology(&e2.topology).unwrap();
        assert_eq!(t2.segment_count(), 4);
        assert_eq!(t2.timing().d_mm_ns, 15_400);
        assert_eq!(t2.timing().d_jitter_max_ns, 7_000);
        assert_eq!(e2.measurement, Some(MeasurementTarget { segment: 1, device: 1 }));
        assert!(matches!(Scenario::preset("exp3"), Err(ScenarioError::UnknownPreset(_))));
    }

    #[test]
    fn lattice_covers_every_cell_per_pass() {
        let mut rng = SimRng::new(5);
        let mut l = PhaseLattice::new(80_000, 7_000, 1_000);
        assert_eq!(l.len(), 640);
        let mut seen: Vec<(u64, u64)> = (0..640).map(|_| l.draw(&mut rng)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 640);
        assert_eq!(seen.first(), Some(&(0, 0)));
        assert_eq!(seen.last(), Some(&(79_000, 7_000)));
    }

    #[test]
    fn single_request_has_no_jitter() {
        let mut s = Scenario::preset("exp1").unwrap();
        s.workload.num_requests = 1;
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.stats.jitter_ns, 0);
    }

    #[test]
    fn rejects_bad_workloads() {
        let mut s = Scenario::preset("exp1").unwrap();
        s.workload.num_requests = 0;
        assert!(matches!(run_scenario(&s), Err(ScenarioError::NoRequests)));
        let mut s = Scenario::preset("exp1").unwrap();
        s.workload.phase_quantum_ns = 0;
        assert!(matches!(run_scenario(&s), Err(ScenarioError::BadQuantum(0))));
        let mut s = Scenario::preset("exp1").unwrap();
        s.measurement = Some(MeasurementTarget { segment: 0, device: 8 });
        assert!(matches!(run_scenario(&s), Err(ScenarioError::BadMeasurement(0, 8))));
        let mut s = Scenario::preset("exp1").unwrap();
        s.topology.segments[0].device_count = 0;
        assert!(matches!(run_scenario(&s), Err(ScenarioError::Topology(_))));
    }

    #[test]
    fn scenario_json_rejects_unknown_fields() {
        let text = r#"{"topology":{"segments":[{"device_count":1}]},"bogus":1}"#;
        assert!(Scenario::from_json(text).is_err());
        let text = r#"{"topology":{"segments":[{"device_count":1}]}}"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.workload, Workload::default());
    }
}
