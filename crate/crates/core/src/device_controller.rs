//! The device controller: accepts southbound configuration requests, fans them
//! out to the masters of each touched segment, and tracks every request from
//! generation to the output latch of its last target.
//!
//! [`DeviceController`] owns the whole simulated plant: the event engine, one
//! [`MasterState`] per segment and one [`DeviceState`] per device. Masters emit
//! their cyclic frame on every PDO boundary whether or not anything is staged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::codec::EcatFrame;
use crate::ecat::{device_receive, emit_cycle, next_pdo_boundary, DeviceState, MasterState, PendingLatch, RequestId};
use crate::engine::{Engine, SchedulingInPast, SimRng, TimedEvent};
use crate::topology::{Topology, MAX_SEGMENTS};

/// One output word for one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub segment: usize,
    pub device: usize,
    #[serde(with = "hex_word")]
    pub outputs: u16,
}

/// `"0xHHHH"` encoding of an output word.
pub mod hex_word {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn format(word: u16) -> String {
        format!("0x{word:04X}")
    }

    pub fn parse(s: &str) -> Option<u16> {
        let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"))?;
        if digits.is_empty() || digits.len() > 4 {
            return None;
        }
        u16::from_str_radix(digits, 16).ok()
    }

    pub fn serialize<S: Serializer>(word: &u16, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(*word))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u16, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).ok_or_else(|| de::Error::custom(format!("bad output word {s:?}, expected 0xHHHH")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigureRequest {
    pub request_id: RequestId,
    pub targets: Vec<Target>,
    /// Where configuration time is measured. Defaults to the most distant target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_at: Option<(usize, usize)>,
}

impl ConfigureRequest {
    pub fn new(request_id: RequestId, targets: Vec<Target>) -> Self {
        Self {
            request_id,
            targets,
            measure_at: None,
        }
    }

    /// Distinct segments in ascending order, which is also the dispatch order.
    pub fn segments(&self) -> Vec<usize> {
        let mut s: Vec<_> = self.targets.iter().map(|t| t.segment).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Largest position wins; ties go to the lowest segment.
    pub fn most_distant_target(&self) -> Option<(usize, usize)> {
        self.targets
            .iter()
            .map(|t| (t.segment, t.device))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControllerError {
    #[error("unknown target: segment {segment}, device {device}")]
    UnknownTarget { segment: usize, device: usize },
    #[error("request id {0} was already used")]
    DuplicateRequestId(RequestId),
    #[error("request touches {0} segments, at most {MAX_SEGMENTS} masters exist")]
    TooManySegments(usize),
    #[error("request has no targets")]
    EmptyRequest,
    #[error("request lists segment {segment}, device {device} twice")]
    DuplicateTarget { segment: usize, device: usize },
    #[error("measurement point segment {0}, device {1} is not a target of the request")]
    BadMeasurementTarget(usize, usize),
    #[error(transparent)]
    SchedulingInPast(#[from] SchedulingInPast),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("request {0} has not completed")]
    NotYetComplete(RequestId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    /// ① the network controller sends the request.
    RequestGenerated {
        request: RequestId,
    },
    SouthboundArrived {
        request: RequestId,
    },
    OutputsStaged {
        request: RequestId,
        segment: usize,
    },
    /// ② a master starts sending its cyclic frame.
    MasterEmit {
        segment: usize,
    },
    FrameAtDevice {
        segment: usize,
        device: usize,
        frame: u64,
    },
    /// ③ a device latches its outputs.
    DeviceLatched {
        segment: usize,
        device: usize,
        word: u16,
        requests: Vec<RequestId>,
    },
    RequestComplete {
        request: RequestId,
    },
}

/// Writes `(segment, device)` keys as `"segment.device"`.
fn latch_keys<S: Serializer>(map: &BTreeMap<(usize, usize), u64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(map.iter().map(|((seg, dev), t)| (format!("{seg}.{dev}"), t)))
}

/// Timeline of one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestTrace {
    pub request_id: RequestId,
    pub t_generated_ns: u64,
    pub t_arrived_ns: Option<u64>,
    pub t_staged_ns: Option<u64>,
    /// Dispatch delay beyond `d_mm` before staging, including any queueing.
    pub jitter_ns: Option<u64>,
    pub t_master_emit_ns: BTreeMap<usize, u64>,
    #[serde(serialize_with = "latch_keys")]
    pub t_latched_ns: BTreeMap<(usize, usize), u64>,
    pub t_complete_ns: Option<u64>,
    pub measure_at: (usize, usize),
}

impl RequestTrace {
    pub fn is_complete(&self) -> bool {
        self.t_complete_ns.is_some()
    }

    /// Time the outputs waited staged before their master's boundary.
    pub fn wait_ns(&self, segment: usize) -> Option<u64> {
        Some(self.t_master_emit_ns.get(&segment)? - self.t_staged_ns?)
    }

    pub fn config_time_ns(&self) -> Option<u64> {
        Some(self.t_latched_ns.get(&self.measure_at)? - self.t_generated_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompletionReport {
    pub request_id: RequestId,
    pub t_generated_ns: u64,
    pub t_master_emit_ns: BTreeMap<usize, u64>,
    #[serde(serialize_with = "latch_keys")]
    pub t_latched_ns: BTreeMap<(usize, usize), u64>,
    pub measure_at: (usize, usize),
    pub config_time_ns: u64,
}

/// Where an accepted request's outputs were put.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagedOutput {
    pub segment: usize,
    pub staged_at_ns: u64,
    pub boundary_ns: u64,
}

#[derive(Debug)]
struct RequestRecord {
    request: ConfigureRequest,
    jitter: Option<u64>,
    trace: RequestTrace,
    outstanding: usize,
}

#[derive(Debug)]
struct InFlight {
    frame: EcatFrame,
    carried: Vec<(RequestId, usize)>,
    remaining: usize,
}

pub struct DeviceController {
    topology: Topology,
    engine: Engine<Event>,
    rng: SimRng,
    masters: Vec<MasterState>,
    devices: Vec<Vec<DeviceState>>,
    requests: BTreeMap<RequestId, RequestRecord>,
    frames: BTreeMap<u64, InFlight>,
    next_frame: u64,
    last_staged_ns: u64,
    emissions: Vec<Vec<u64>>,
    record_emissions: bool,
    event_log: Option<Vec<TimedEvent<Event>>>,
    completed: usize,
}

impl DeviceController {
    pub fn new(topology: Topology, seed: u64) -> Self {
        let timing = *topology.timing();
        let mut engine = Engine::new();
        let mut masters = Vec::new();
        let mut devices = Vec::new();
        for (seg, spec) in topology.segments().iter().enumerate() {
            let master = MasterState::new(seg, spec.device_count, spec.phase_ns, timing.pdo_cycle_ns);
            engine
                .schedule(master.next_emission(0), Event::MasterEmit { segment: seg })
                .expect("clock starts at zero");
            masters.push(master);
            devices.push(
                (0..spec.device_count)
                    .map(|d| DeviceState::new(seg, d, topology.logical_offset(seg, d).expect("in range")))
                    .collect(),
            );
        }
        let n = masters.len();
        Self {
            topology,
            engine,
            rng: SimRng::new(seed),
            masters,
            devices,
            requests: BTreeMap::new(),
            frames: BTreeMap::new(),
            next_frame: 0,
            last_staged_ns: 0,
            emissions: vec![Vec::new(); n],
            record_emissions: false,
            event_log: None,
            completed: 0,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn now(&self) -> u64 {
        self.engine.now()
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    /// Keep every processed event; see [`DeviceController::event_log`].
    pub fn record_events(&mut self) {
        self.event_log.get_or_insert_with(Vec::new);
    }

    pub fn event_log(&self) -> &[TimedEvent<Event>] {
        self.event_log.as_deref().unwrap_or(&[])
    }

    /// Keep every master emission time.
    pub fn record_emissions(&mut self) {
        self.record_emissions = true;
    }

    pub fn emission_times(&self, segment: usize) -> &[u64] {
        &self.emissions[segment]
    }

    pub fn device(&self, segment: usize, device: usize) -> Option<&DeviceState> {
        self.devices.get(segment)?.get(device)
    }

    pub fn master(&self, segment: usize) -> Option<&MasterState> {
        self.masters.get(segment)
    }

    pub fn trace(&self, request_id: RequestId) -> Option<&RequestTrace> {
        self.requests.get(&request_id).map(|r| &r.trace)
    }

    pub fn traces(&self) -> impl Iterator<Item = &RequestTrace> {
        self.requests.values().map(|r| &r.trace)
    }

    pub fn outstanding_requests(&self) -> usize {
        self.requests.len() - self.completed
    }

    fn validate(&self, request: &ConfigureRequest) -> Result<(usize, usize), ControllerError> {
        if request.targets.is_empty() {
            return Err(ControllerError::EmptyRequest);
        }
        let segments = request.segments();
        if segments.len() > MAX_SEGMENTS {
            return Err(ControllerError::TooManySegments(segments.len()));
        }
        for t in &request.targets {
            if !self.topology.contains(t.segment, t.device) {
                return Err(ControllerError::UnknownTarget {
                    segment: t.segment,
                    device: t.device,
                });
            }
        }
        let mut seen: Vec<_> = request.targets.iter().map(|t| (t.segment, t.device)).collect();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(ControllerError::DuplicateTarget {
                segment: w[0].0,
                device: w[0].1,
            });
        }
        if self.requests.contains_key(&request.request_id) {
            return Err(ControllerError::DuplicateRequestId(request.request_id));
        }
        let measure = match request.measure_at {
            Some(m) if !seen.contains(&m) => {
                return Err(ControllerError::BadMeasurementTarget(m.0, m.1));
            }
            Some(m) => m,
            None => request.most_distant_target().expect("non-empty"),
        };
        Ok(measure)
    }

    fn record(&mut self, request: ConfigureRequest, measure: (usize, usize), t_gen: u64, jitter: Option<u64>) {
        let id = request.request_id;
        let outstanding = request.targets.len();
        self.requests.insert(
            id,
            RequestRecord {
                request,
                jitter,
                trace: RequestTrace {
                    request_id: id,
                    t_generated_ns: t_gen,
                    t_arrived_ns: None,
                    t_staged_ns: None,
                    jitter_ns: None,
                    t_master_emit_ns: BTreeMap::new(),
                    t_latched_ns: BTreeMap::new(),
                    t_complete_ns: None,
                    measure_at: measure,
                },
                outstanding,
            },
        );
    }

    /// Submit a request generated by the network controller at `t_generated_ns`.
    /// It reaches the device controller `d_sb` later. Dispatch jitter is drawn
    /// uniformly from `[0, d_jitter_max]`.
    pub fn submit(&mut self, request: ConfigureRequest, t_generated_ns: u64) -> Result<(), ControllerError> {
        self.submit_inner(request, t_generated_ns, None)
    }

    /// As [`DeviceController::submit`] with a caller-chosen dispatch jitter.
    pub fn submit_with_jitter(
        &mut self,
        request: ConfigureRequest,
        t_generated_ns: u64,
        jitter_ns: u64,
    ) -> Result<(), ControllerError> {
        self.submit_inner(request, t_generated_ns, Some(jitter_ns))
    }

    fn submit_inner(
        &mut self,
        request: ConfigureRequest,
        t_gen: u64,
        jitter: Option<u64>,
    ) -> Result<(), ControllerError> {
        let measure = self.validate(&request)?;
        let id = request.request_id;
        self.engine.schedule(t_gen, Event::RequestGenerated { request: id })?;
        self.record(request, measure, t_gen, jitter);
        Ok(())
    }

    /// Accept a request that reached the device controller at `t_arrival_ns`,
    /// bypassing the southbound leg; its generation time is taken as
    /// `t_arrival - d_sb`. Outputs are staged immediately.
    pub fn handle_configure(
        &mut self,
        request: ConfigureRequest,
        t_arrival_ns: u64,
    ) -> Result<Vec<StagedOutput>, ControllerError> {
        let measure = self.validate(&request)?;
        if t_arrival_ns < self.engine.now() {
            return Err(SchedulingInPast {
                at: t_arrival_ns,
                now: self.engine.now(),
            }
            .into());
        }
        let id = request.request_id;
        let t_gen = t_arrival_ns.saturating_sub(self.topology.timing().d_sb_ns);
        self.record(request, measure, t_gen, None);
        Ok(self.stage(id, t_arrival_ns))
    }

    fn stage(&mut self, id: RequestId, t_arrival: u64) -> Vec<StagedOutput> {
        let timing = *self.topology.timing();
        let d_mm = timing.multi_master_overhead(self.topology.segment_count());
        let drawn = match self.requests[&id].jitter {
            Some(j) => j,
            None => self.rng.uniform_draw(0, timing.d_jitter_max_ns as i64) as u64,
        };
        // staging is serialized in arrival order
        let staged_at = (t_arrival + d_mm + drawn).max(self.last_staged_ns);
        self.last_staged_ns = staged_at;

        let rec = self.requests.get_mut(&id).expect("recorded");
        rec.trace.t_arrived_ns = Some(t_arrival);
        rec.trace.t_staged_ns = Some(staged_at);
        rec.trace.jitter_ns = Some(staged_at - t_arrival - d_mm);

        let mut out = Vec::new();
        for seg in rec.request.segments() {
            let master = &mut self.masters[seg];
            let boundary = master.emission_boundary(staged_at);
            for t in rec.request.targets.iter().filter(|t| t.segment == seg) {
                master.stage(boundary, id, t.device, t.outputs);
            }
            self.engine
                .schedule(
                    staged_at,
                    Event::OutputsStaged {
                        request: id,
                        segment: seg,
                    },
                )
                .expect("staging is never before arrival");
            out.push(StagedOutput {
                segment: seg,
                staged_at_ns: staged_at,
                boundary_ns: boundary,
            });
        }
        out
    }

    pub fn completion_report(&self, request_id: RequestId) -> Result<CompletionReport, ReportError> {
        let rec = self
            .requests
            .get(&request_id)
            .ok_or(ReportError::UnknownRequest(request_id))?;
        let t = &rec.trace;
        if !t.is_complete() {
            return Err(ReportError::NotYetComplete(request_id));
        }
        Ok(CompletionReport {
            request_id,
            t_generated_ns: t.t_generated_ns,
            t_master_emit_ns: t.t_master_emit_ns.clone(),
            t_latched_ns: t.t_latched_ns.clone(),
            measure_at: t.measure_at,
            config_time_ns: t.config_time_ns().expect("complete"),
        })
    }

    /// Process the next event. Returns `None` only if the queue is empty,
    /// which cannot happen while masters are cycling.
    pub fn step(&mut self) -> Option<TimedEvent<Event>> {
        let ev = self.engine.pop_next()?;
        self.handle(&ev);
        if let Some(log) = self.event_log.as_mut() {
            log.push(ev.clone());
        }
        Some(ev)
    }

    /// Process all events up to and including `t_end`.
    pub fn run_until(&mut self, t_end: u64) {
        while self.engine.peek_time().is_some_and(|t| t <= t_end) {
            self.step();
        }
        let _ = self.engine.run_until(t_end, |_, _| {});
    }

    pub fn run_until_complete(&mut self, request_id: RequestId) -> Result<CompletionReport, ReportError> {
        if !self.requests.contains_key(&request_id) {
            return Err(ReportError::UnknownRequest(request_id));
        }
        while !self.requests[&request_id].trace.is_complete() {
            self.step();
        }
        self.completion_report(request_id)
    }

    /// Run until every submitted request has completed.
    pub fn run_until_idle(&mut self) {
        while self.completed < self.requests.len() {
            self.step();
        }
    }

    fn handle(&mut self, ev: &TimedEvent<Event>) {
        let now = ev.time_ns;
        let timing = *self.topology.timing();
        match &ev.payload {
            Event::RequestGenerated { request } => {
                self.engine
                    .schedule(now + timing.d_sb_ns, Event::SouthboundArrived { request: *request })
                    .expect("future");
            }
            Event::SouthboundArrived { request } => {
                self.stage(*request, now);
            }
            Event::OutputsStaged { .. } => {}
            Event::MasterEmit { segment } => {
                let seg = *segment;
                let emission = emit_cycle(&mut self.masters[seg], now, &timing);
                if self.record_emissions {
                    self.emissions[seg].push(now);
                }
                for id in &emission.marked {
                    let rec = self.requests.get_mut(id).expect("staged request");
                    rec.trace.t_master_emit_ns.entry(seg).or_insert(now);
                }
                let frame_id = self.next_frame;
                self.next_frame += 1;
                for a in &emission.arrivals {
                    self.engine
                        .schedule(
                            a.time_ns,
                            Event::FrameAtDevice {
                                segment: seg,
                                device: a.device,
                                frame: frame_id,
                            },
                        )
                        .expect("future");
                }
                self.frames.insert(
                    frame_id,
                    InFlight {
                        remaining: emission.arrivals.len(),
                        frame: emission.frame,
                        carried: emission.carried,
                    },
                );
                let next = next_pdo_boundary(now, self.masters[seg].phase_ns, self.masters[seg].cycle_ns);
                self.engine
                    .schedule(next, Event::MasterEmit { segment: seg })
                    .expect("future");
            }
            Event::FrameAtDevice { segment, device, frame } => {
                let (seg, dev) = (*segment, *device);
                let inflight = self.frames.get_mut(frame).expect("frame in flight");
                let dstate = &self.devices[seg][dev];
                let word = dstate.process_frame(&mut inflight.frame);
                let requests: Vec<RequestId> = inflight
                    .carried
                    .iter()
                    .filter(|(_, d)| *d == dev)
                    .map(|(r, _)| *r)
                    .collect();
                if word != dstate.word || !requests.is_empty() {
                    let latch = device_receive(word, now, &timing);
                    self.engine
                        .schedule(
                            latch.at_ns,
                            Event::DeviceLatched {
                                segment: seg,
                                device: dev,
                                word,
                                requests,
                            },
                        )
                        .expect("future");
                }
                inflight.remaining -= 1;
                if inflight.remaining == 0 {
                    let done = self.frames.remove(frame).expect("present");
                    debug_assert_eq!(
                        done.frame.datagrams[0].wkc as usize,
                        self.devices[seg].len(),
                        "every device writes its word"
                    );
                }
            }
            Event::DeviceLatched {
                segment,
                device,
                word,
                requests,
            } => {
                let (seg, dev) = (*segment, *device);
                self.devices[seg][dev].apply_latch(&PendingLatch {
                    at_ns: now,
                    word: *word,
                });
                for id in requests {
                    let rec = self.requests.get_mut(id).expect("known request");
                    if rec.trace.t_latched_ns.insert((seg, dev), now).is_none() {
                        rec.outstanding -= 1;
                        if rec.outstanding == 0 {
                            self.engine
                                .schedule(now, Event::RequestComplete { request: *id })
                                .expect("now");
                        }
                    }
                }
            }
            Event::RequestComplete { request } => {
                let rec = self.requests.get_mut(request).expect("known request");
                rec.trace.t_complete_ns = Some(now);
                self.completed += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, TimingParams, TopologySpec};

    fn exp1() -> DeviceController {
        DeviceController::new(
            build_topology(&TopologySpec::uniform(1, 8, TimingParams::default())).unwrap(),
            1,
        )
    }

    fn exp2() -> DeviceController {
        let t = TimingParams {
            pdo_cycle_ns: 80_000,
            d_mm_ns: 15_400,
            d_jitter_max_ns: 7_000,
            ..TimingParams::default()
        };
        DeviceController::new(build_topology(&TopologySpec::uniform(4, 2, t)).unwrap(), 1)
    }

    fn all_devices(id: RequestId, segs: usize, devs: usize, word: u16) -> ConfigureRequest {
        let targets = (0..segs)
            .flat_map(|s| {
                (0..devs).map(move |d| Target {
                    segment: s,
                    device: d,
                    outputs: word,
                })
            })
            .collect();
        ConfigureRequest::new(id, targets)
    }

    #[test]
    fn best_case_single_segment() {
        let mut dc = exp1();
        // generation 70 us before a boundary stages exactly on it
        dc.submit(all_devices(1, 1, 8, 1), 160_000 - 70_000).unwrap();
        let r = dc.run_until_complete(1).unwrap();
        assert_eq!(r.config_time_ns, 90_000);
        assert_eq!(r.measure_at, (0, 7));
        assert_eq!(r.t_master_emit_ns[&0], 160_000);
        assert_eq!(dc.trace(1).unwrap().wait_ns(0), Some(0));
    }

    #[test]
    fn staging_on_a_sent_boundary_waits_a_full_cycle() {
        let mut dc = exp1();
        dc.run_until(96_000);
        assert_eq!(dc.master(0).unwrap().last_emit(), Some(96_000));
        let staged = dc
            .handle_configure(
                ConfigureRequest::new(
                    5,
                    vec![Target {
                        segment: 0,
                        device: 7,
                        outputs: 1,
                    }],
                ),
                96_000,
            )
            .unwrap();
        assert_eq!(staged[0].boundary_ns, 96_000 + 32_000);
        let r = dc.run_until_complete(5).unwrap();
        assert_eq!(r.t_master_emit_ns[&0], 128_000);
        assert_eq!(dc.trace(5).unwrap().wait_ns(0), Some(32_000));
    }

    #[test]
    fn unknown_target_stages_nothing() {
        let mut dc = exp1();
        let req = ConfigureRequest::new(
            1,
            vec![Target {
                segment: 0,
                device: 9,
                outputs: 1,
            }],
        );
        assert_eq!(
            dc.submit(req.clone(), 0),
            Err(ControllerError::UnknownTarget { segment: 0, device: 9 })
        );
        assert_eq!(
            dc.handle_configure(req, 0).unwrap_err(),
            ControllerError::UnknownTarget { segment: 0, device: 9 }
        );
        assert!(dc.master(0).unwrap().pending_requests().is_empty());
        assert!(dc.trace(1).is_none());
    }

    #[test]
    fn request_validation() {
        let mut dc = exp1();
        assert_eq!(
            dc.submit(ConfigureRequest::new(1, vec![]), 0),
            Err(ControllerError::EmptyRequest)
        );
        let t = Target {
            segment: 0,
            device: 1,
            outputs: 1,
        };
        assert_eq!(
            dc.submit(ConfigureRequest::new(1, vec![t, t]), 0),
            Err(ControllerError::DuplicateTarget { segment: 0, device: 1 })
        );
        dc.submit(ConfigureRequest::new(1, vec![t]), 0).unwrap();
        assert_eq!(
            dc.submit(ConfigureRequest::new(1, vec![t]), 0),
            Err(ControllerError::DuplicateRequestId(1))
        );
        let mut m = ConfigureRequest::new(2, vec![t]);
        m.measure_at = Some((0, 3));
        assert_eq!(dc.submit(m, 0), Err(ControllerError::BadMeasurementTarget(0, 3)));
        let many: Vec<_> = (0..7)
            .map(|s| Target {
                segment: s,
                device: 0,
                outputs: 1,
            })
            .collect();
        assert_eq!(
            dc.submit(ConfigureRequest::new(3, many), 0),
            Err(ControllerError::TooManySegments(7))
        );
    }

    #[test]
    fn fan_out_in_segment_order() {
        let mut dc = exp2();
        dc.record_events();
        dc.submit_with_jitter(all_devices(9, 4, 2, 0x0001), 10_000, 0).unwrap();
        let r = dc.run_until_complete(9).unwrap();
        let staged: Vec<usize> = dc
            .event_log()
            .iter()
            .filter_map(|e| match e.payload {
                Event::OutputsStaged { segment, .. } => Some(segment),
                _ => None,
            })
            .collect();
        assert_eq!(staged, [0, 1, 2, 3]);
        assert_eq!(r.t_master_emit_ns.len(), 4);
        assert_eq!(r.t_latched_ns.len(), 8);
    }

    #[test]
    fn report_states() {
        let mut dc = exp1();
        assert_eq!(dc.completion_report(4), Err(ReportError::UnknownRequest(4)));
        dc.submit(all_devices(4, 1, 8, 1), 0).unwrap();
        assert_eq!(dc.completion_report(4), Err(ReportError::NotYetComplete(4)));
        dc.run_until_idle();
        let r = dc.completion_report(4).unwrap();
        let max_latch = r.t_latched_ns.values().max().unwrap();
        assert_eq!(r.config_time_ns, max_latch - r.t_generated_ns);
    }

    #[test]
    fn measurement_defaults_to_most_distant() {
        let mut dc = exp1();
        let req = ConfigureRequest::new(
            1,
            vec![
                Target {
                    segment: 0,
                    device: 3,
                    outputs: 1,
                },
                Target {
                    segment: 0,
                    device: 7,
                    outputs: 1,
                },
            ],
        );
        dc.submit(req, 0).unwrap();
        let r = dc.run_until_complete(1).unwrap();
        assert_eq!(r.measure_at, (0, 7));
        assert_eq!(r.config_time_ns, r.t_latched_ns[&(0, 7)] - r.t_generated_ns);
        assert_eq!(r.t_latched_ns[&(0, 7)] - r.t_latched_ns[&(0, 3)], 4 * 900);
    }

    #[test]
    fn idempotent_resend_adds_no_activation() {
        let mut dc = exp1();
        dc.submit(all_devices(1, 1, 8, 0x0003), 0).unwrap();
        dc.run_until_idle();
        let before = dc.device(0, 7).unwrap().activations.len();
        assert_eq!(before, 2);
        let t = dc.now();
        dc.submit(all_devices(2, 1, 8, 0x0003), t).unwrap();
        let r = dc.run_until_complete(2).unwrap();
        assert!(r.config_time_ns >= 90_000);
        assert_eq!(dc.device(0, 7).unwrap().activations.len(), before);
    }

    #[test]
    fn coalesced_requests_share_a_frame() {
        let mut dc = exp1();
        dc.submit(
            ConfigureRequest::new(
                1,
                vec![Target {
                    segment: 0,
                    device: 0,
                    outputs: 0x00F0,
                }],
            ),
            1_000,
        )
        .unwrap();
        dc.submit(
            ConfigureRequest::new(
                2,
                vec![Target {
                    segment: 0,
                    device: 0,
                    outputs: 0x000F,
                }],
            ),
            2_000,
        )
        .unwrap();
        dc.run_until_idle();
        let a = dc.completion_report(1).unwrap();
        let b = dc.completion_report(2).unwrap();
        assert_eq!(a.t_master_emit_ns, b.t_master_emit_ns);
        assert_eq!(dc.device(0, 0).unwrap().word, 0x000F);
    }
}
