//! Acceptance checks. Runs as a plain binary so every check prints its own
//! PASS/FAIL line in `cargo test` output; exits non-zero if any check fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use meow_core::bench::{
    devices_per_segment, extrapolate_worst, pdo_reduction_analysis, read_csv_config_times, run_scenario, sweep_devices,
    write_csv, write_trace, RunOutcome, RunStats, Scenario,
};
use meow_core::codec::{
    apply_datagram, check_vectors, decode_frame, encode_frame, Command, EcatDatagram, EcatFrame, SlaveMapping,
    CONFORMANCE_VECTORS,
};
use meow_core::device_controller::{ConfigureRequest, ControllerError};
use meow_core::ecat::analytic_latency;
use meow_core::network_controller::{
    activate_path, allocate_path, complete_path, release_path, ConfigureSink, Hop, OcsResourceModel, OpticalPathTable,
    PathState, WORDS_PER_DEVICE,
};
use meow_core::topology::{build_topology, TimingParams, TopologySpec};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn us(ns: u64) -> String {
    format!("{:.1} us", ns as f64 / 1000.0)
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(preset: &str) -> RunOutcome {
    run_scenario(&Scenario::preset(preset).expect("preset")).expect("run")
}

fn exp1_calibration() -> Check {
    let s = run("exp1").stats;
    let detail = format!(
        "best {}, worst {}, jitter {}",
        us(s.min_ns),
        us(s.max_ns),
        us(s.jitter_ns)
    );
    ensure(
        s.min_ns == 90_000
            && within(s.max_ns as f64, 120_800.0, 2_000.0)
            && within(s.jitter_ns as f64, 30_800.0, 2_000.0),
        detail,
    )
}

fn exp2_calibration() -> Check {
    let s = run("exp2").stats;
    let detail = format!("best {}, worst {}", us(s.min_ns), us(s.max_ns));
    ensure(
        s.min_ns == 100_000 && within(s.max_ns as f64, 187_000.0, 0.05 * 187_000.0),
        detail,
    )
}

fn hop_slope() -> Check {
    let counts: Vec<usize> = (1..=8).collect();
    let r = sweep_devices(&Scenario::preset("exp1").unwrap(), &counts).map_err(|e| e.to_string())?;
    let detail = format!(
        "best-case slope {:.1} ns/device, worst-case slope {:.1} ns/device",
        r.slope_ns, r.worst_slope_ns
    );
    ensure(within(r.slope_ns, 900.0, 9.0), detail)
}

fn extrapolation() -> Check {
    let four = extrapolate_worst(187_000, 900, devices_per_segment(1000, 4));
    let six = extrapolate_worst(187_000, 900, devices_per_segment(1000, 6));
    let detail = format!("1000 racks: 4 masters {}, 6 masters {}", us(four), us(six));
    ensure(
        four == 412_000 && within(six as f64, 350_000.0, 0.05 * 350_000.0),
        detail,
    )
}

fn pdo_reduction() -> Check {
    let r = pdo_reduction_analysis(&Scenario::preset("exp2").unwrap(), 80_000, 32_000).map_err(|e| e.to_string())?;
    let detail = format!(
        "worst {} at 80 us cycle, {} at 32 us cycle, reduction {}",
        us(r.slow_worst_ns),
        us(r.fast_worst_ns),
        us(r.reduction_ns as u64)
    );
    ensure(
        r.reduction_ns == 48_000 && within(r.reduction_ns as f64, 50_000.0, 3_000.0),
        detail,
    )
}

fn analytic_agreement() -> Check {
    let mut checked = 0;
    for preset in ["exp1", "exp2"] {
        let out = run(preset);
        let timing = *out.topology.timing();
        let n = out.topology.segment_count();
        let d_mm = timing.multi_master_overhead(n);
        for (r, t) in out.results.iter().zip(&out.traces) {
            let phase = out.topology.segment(r.segment).unwrap().phase_ns;
            let staged = t.t_staged_ns.unwrap();
            // independent wait: distance up to the next boundary at or after staging
            let offset = (staged - phase) % timing.pdo_cycle_ns;
            let wait = (timing.pdo_cycle_ns - offset) % timing.pdo_cycle_ns;
            let jitter = staged - t.t_arrived_ns.unwrap() - d_mm;
            let model = analytic_latency(&timing, n, r.device as u64 + 1, wait, jitter);
            if model != r.config_time_ns || wait != r.wait_ns || jitter != r.jitter_ns {
                return Err(format!(
                    "{preset} request {}: simulated {} ns, closed form {} ns",
                    r.request_id, r.config_time_ns, model
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} requests match the closed form exactly"))
}

fn datagram() -> impl Strategy<Value = EcatDatagram> {
    (
        prop::sample::select(Command::ALL.to_vec()),
        any::<u8>(),
        any::<u32>(),
        any::<bool>(),
        any::<u16>(),
        prop::collection::vec(any::<u8>(), 0..64),
        any::<u16>(),
    )
        .prop_map(|(cmd, idx, address, circulating, irq, data, wkc)| EcatDatagram {
            cmd,
            idx,
            address,
            circulating,
            irq,
            data,
            wkc,
        })
}

fn codec_conformance() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&prop::collection::vec(datagram(), 1..8), |datagrams| {
            let frame = EcatFrame::new(datagrams);
            let bytes = encode_frame(&frame).expect("fits");
            prop_assert_eq!(decode_frame(&bytes).expect("decodes"), frame);
            Ok(())
        })
        .map_err(|e| format!("roundtrip: {e}"))?;

    let outcomes = check_vectors(CONFORMANCE_VECTORS)?;
    if let Some(bad) = outcomes.iter().find(|o| !o.passed()) {
        return Err(format!(
            "vector line {}: expected {} got {}",
            bad.line, bad.expected, bad.actual
        ));
    }

    let wkc_for = |cmd: Command| {
        let mut d = EcatDatagram::new(cmd, 0, vec![0xa5; 16]);
        for dev in 0..8u32 {
            let mut image = [0u8; 2];
            apply_datagram(&mut image, &mut d, &SlaveMapping::new(2 * dev, 2)).unwrap();
        }
        d.wkc
    };
    let (lrw, lwr) = (wkc_for(Command::Lrw), wkc_for(Command::Lwr));
    ensure(
        lrw == 24 && lwr == 8,
        format!(
            "10000 frames roundtrip, {} vectors pass, WKC over 8 devices LRW {lrw} LWR {lwr}",
            outcomes.len()
        ),
    )
}

fn slurp(path: &std::path::Path) -> Vec<u8> {
    let mut v = Vec::new();
    std::fs::File::open(path).unwrap().read_to_end(&mut v).unwrap();
    v
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for round in 0..2 {
        let out = run("exp2");
        let csv = dir.path().join(format!("run{round}.csv"));
        let trace = dir.path().join(format!("run{round}.trace"));
        write_csv(&out.results, std::fs::File::create(&csv).unwrap()).unwrap();
        write_trace(&out.traces, std::fs::File::create(&trace).unwrap()).unwrap();
        let back = read_csv_config_times(std::io::BufReader::new(std::fs::File::open(&csv).unwrap())).unwrap();
        if RunStats::from_samples(&back) != out.stats {
            return Err("statistics recomputed from the CSV differ".into());
        }
        files.push((slurp(&csv), slurp(&trace)));
    }
    ensure(
        files[0] == files[1],
        format!(
            "two seeded runs give identical CSV ({} bytes) and trace ({} bytes)",
            files[0].0.len(),
            files[0].1.len()
        ),
    )
}

#[derive(Debug, Clone)]
enum Op {
    Allocate(u32, u32),
    Activate(u64),
    Complete(u64),
    Release(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0u32..4, 0u32..4).prop_map(|(a, b)| Op::Allocate(a, b)),
        2 => (0u64..40).prop_map(Op::Activate),
        2 => (0u64..40).prop_map(Op::Complete),
        2 => (0u64..40).prop_map(Op::Release),
    ]
}

/// Brute-force bookkeeper: scans every (segment, device, bit) for first fit.
struct Reference {
    dims: Vec<usize>,
    taken: BTreeSet<(usize, usize, u16)>,
    paths: Vec<(Hop, PathState)>,
}

impl Reference {
    fn allocate(&mut self, src: u32, dst: u32) -> Option<Hop> {
        if src == dst {
            return None;
        }
        for (s, &n) in self.dims.iter().enumerate() {
            for d in 0..n {
                for bit in 0..WORDS_PER_DEVICE {
                    let word = 1u16 << bit;
                    if self.taken.insert((s, d, word)) {
                        let hop = Hop {
                            segment: s,
                            device: d,
                            word,
                        };
                        self.paths.push((hop, PathState::Reserved));
                        return Some(hop);
                    }
                }
            }
        }
        None
    }

    fn step(&mut self, id: u64, from: PathState, to: PathState) -> bool {
        match self.paths.get_mut(id as usize) {
            Some((_, state)) if *state == from => {
                *state = to;
                true
            }
            _ => false,
        }
    }

    fn word(&self, s: usize, d: usize) -> u16 {
        self.paths
            .iter()
            .filter(|(h, st)| {
                h.segment == s && h.device == d && matches!(st, PathState::Configuring | PathState::Active)
            })
            .fold(0, |acc, (h, _)| acc | h.word)
    }
}

#[derive(Default)]
struct Recorder(Vec<ConfigureRequest>);

impl ConfigureSink for Recorder {
    fn submit(&mut self, request: ConfigureRequest) -> Result<(), ControllerError> {
        self.0.push(request);
        Ok(())
    }
}

fn allocation_model() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        prop::collection::vec(1usize..=2, 1..=3),
        prop::collection::vec(op(), 1..60),
    );
    runner
        .run(&strategy, |(dims, ops)| {
            let topo = build_topology(&TopologySpec {
                segments: dims
                    .iter()
                    .map(|&n| meow_core::topology::SegmentSpec {
                        device_count: n,
                        phase_ns: 0,
                    })
                    .collect(),
                timing: Default::default(),
            })
            .unwrap();
            let mut table = OpticalPathTable::new();
            let mut res = OcsResourceModel::from_topology(&topo);
            let mut reference = Reference {
                dims: dims.clone(),
                taken: BTreeSet::new(),
                paths: Vec::new(),
            };
            let mut sink = Recorder::default();
            let mut next_req = 0;
            for op in ops {
                match op {
                    Op::Allocate(a, b) => {
                        let got = allocate_path(&mut table, &mut res, a, b).ok();
                        let want = reference.allocate(a, b);
                        prop_assert_eq!(got.map(|id| table.get(id).unwrap().hops[0]), want);
                    }
                    Op::Activate(id) => {
                        let expected_word = reference
                            .paths
                            .get(id as usize)
                            .map(|(h, _)| reference.word(h.segment, h.device) | h.word);
                        let got = activate_path(&mut table, id, next_req, &mut sink);
                        next_req += 1;
                        let want = reference.step(id, PathState::Reserved, PathState::Configuring);
                        prop_assert_eq!(got.is_ok(), want);
                        if want {
                            prop_assert_eq!(Some(sink.0.last().unwrap().targets[0].outputs), expected_word);
                        }
                    }
                    Op::Complete(id) => {
                        let got = complete_path(&mut table, id, 0).is_ok();
                        prop_assert_eq!(got, reference.step(id, PathState::Configuring, PathState::Active));
                    }
                    Op::Release(id) => {
                        let got = release_path(&mut table, &mut res, id).is_ok();
                        let want = reference.step(id, PathState::Active, PathState::Released);
                        if want {
                            let h = reference.paths[id as usize].0;
                            reference.taken.remove(&(h.segment, h.device, h.word));
                        }
                        prop_assert_eq!(got, want);
                    }
                }
                let states: BTreeMap<u64, PathState> = table.entries().map(|e| (e.path_id, e.state)).collect();
                let want: BTreeMap<u64, PathState> = reference
                    .paths
                    .iter()
                    .enumerate()
                    .map(|(i, (_, s))| (i as u64, *s))
                    .collect();
                prop_assert_eq!(states, want);
                prop_assert_eq!(res.free_words(), res.total_words() - reference.taken.len());
                for (s, &n) in dims.iter().enumerate() {
                    for d in 0..n {
                        prop_assert_eq!(table.device_word(s, d), reference.word(s, d));
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 random lifecycles agree with the brute-force bookkeeper".into())
}

fn cyclic_emission() -> Check {
    let out = run("exp1");
    let cycle = out.topology.timing().pdo_cycle_ns;
    let e = &out.emissions;
    let periodic = e.windows(2).all(|w| w[1] - w[0] == cycle) && e[0] == 0;
    let waits_ok = out.results.iter().all(|r| r.wait_ns < cycle && r.jitter_ns == 0);
    let max_wait = out.results.iter().map(|r| r.wait_ns).max().unwrap();

    let idle = build_topology(&TopologySpec::uniform(2, 3, TimingParams::default())).unwrap();
    let mut dc = meow_core::device_controller::DeviceController::new(idle, 4);
    dc.record_emissions();
    dc.run_until(10 * cycle);
    let idle_ok = (0..2).all(|s| dc.emission_times(s) == (0..=10).map(|k| k * cycle).collect::<Vec<_>>());
    ensure(
        periodic && waits_ok && idle_ok,
        format!(
            "{} emissions spaced {} apart, max wait {}, idle masters cycle on their own",
            e.len(),
            us(cycle),
            us(max_wait)
        ),
    )
}

fn main() {
    let checks: [Criterion; 10] = [
        ("single-segment calibration", exp1_calibration),
        ("multi-master calibration", exp2_calibration),
        ("per-device hop cost", hop_slope),
        ("data-center extrapolation", extrapolation),
        ("PDO cycle reduction", pdo_reduction),
        ("closed-form agreement", analytic_agreement),
        ("codec conformance", codec_conformance),
        ("seeded determinism", determinism),
        ("path allocation bookkeeping", allocation_model),
        ("cyclic frame emission", cyclic_emission),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Ok(Err(detail)) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: panicked", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
