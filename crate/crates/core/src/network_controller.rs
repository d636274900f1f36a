//! Standalone network controller: optical path management table, large-flow
//! detection, first-fit path allocation and the path lifecycle.
//!
//! Each OCS device is abstracted as a 16-bit output word. Every output bit
//! selects one cross-connect, so a device offers sixteen configuration words
//! `0x0001, 0x0002, .. 0x8000`. A path holds one word on one device.

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroU64;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_controller::{CompletionReport, ConfigureRequest, ControllerError, DeviceController, Target};
use crate::ecat::RequestId;
use crate::topology::Topology;

pub type TorId = u32;
pub type PathId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("no free OCS configuration word")]
    NoCapacity,
    #[error("unknown path {0}")]
    UnknownPath(PathId),
    #[error("path {path} is {state:?}, expected {expected:?}")]
    WrongState {
        path: PathId,
        state: PathState,
        expected: PathState,
    },
    #[error("source and destination ToR are both {0}")]
    SameTor(TorId),
    #[error("rule priority {0} is already taken")]
    DuplicatePriority(i64),
    #[error("rule id {0} is already taken")]
    DuplicateRuleId(u64),
    #[error("device controller rejected the request: {0}")]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathState {
    Reserved,
    Configuring,
    Active,
    Released,
}

impl PathState {
    pub fn can_become(self, next: PathState) -> bool {
        use PathState::*;
        matches!(
            (self, next),
            (Reserved, Configuring) | (Configuring, Active) | (Active, Released)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub segment: usize,
    pub device: usize,
    pub word: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OpticalPathEntry {
    pub path_id: PathId,
    pub src_tor: TorId,
    pub dst_tor: TorId,
    pub hops: Vec<Hop>,
    pub state: PathState,
    pub config_time_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStats {
    pub flow_id: u64,
    pub src_tor: TorId,
    pub dst_tor: TorId,
    pub rate_bps: u64,
    #[serde(default)]
    pub service_tag: Option<String>,
}

/// Predicate over flow endpoints and service tag; `None` matches anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub src_tor: Option<TorId>,
    pub dst_tor: Option<TorId>,
    pub service_tag: Option<String>,
}

impl RuleMatch {
    pub fn matches(&self, flow: &FlowStats) -> bool {
        self.src_tor.is_none_or(|s| s == flow.src_tor)
            && self.dst_tor.is_none_or(|d| d == flow.dst_tor)
            && self
                .service_tag
                .as_ref()
                .is_none_or(|t| flow.service_tag.as_ref() == Some(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProactiveRule {
    pub rule_id: u64,
    pub matcher: RuleMatch,
    pub priority: i64,
}

/// Proactive rules with unique priorities.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<ProactiveRule>,
}

impl RuleSet {
    pub fn add(&mut self, rule: ProactiveRule) -> Result<(), PathError> {
        if self.rules.iter().any(|r| r.priority == rule.priority) {
            return Err(PathError::DuplicatePriority(rule.priority));
        }
        if self.rules.iter().any(|r| r.rule_id == rule.rule_id) {
            return Err(PathError::DuplicateRuleId(rule.rule_id));
        }
        self.rules.push(rule);
        Ok(())
    }

    pub fn rules(&self) -> &[ProactiveRule] {
        &self.rules
    }
}

/// Flows at or above `threshold_bps`, in input order.
pub fn detect_large_flow_reactive(stats: &[FlowStats], threshold_bps: NonZeroU64) -> Vec<u64> {
    stats
        .iter()
        .filter(|f| f.rate_bps >= threshold_bps.get())
        .map(|f| f.flow_id)
        .collect()
}

/// Highest-priority rule matching `flow`.
pub fn match_proactive_rules(flow: &FlowStats, rules: &[ProactiveRule]) -> Option<u64> {
    rules
        .iter()
        .filter(|r| r.matcher.matches(flow))
        .max_by_key(|r| r.priority)
        .map(|r| r.rule_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    WavelengthSwitch,
    SpaceSwitch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeviceResources {
    pub free: BTreeSet<u16>,
    pub block_kind: BlockKind,
}

/// Free configuration words per device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OcsResourceModel {
    devices: BTreeMap<(usize, usize), DeviceResources>,
}

pub const WORDS_PER_DEVICE: usize = 16;

impl OcsResourceModel {
    pub fn from_topology(topology: &Topology) -> Self {
        let mut devices = BTreeMap::new();
        for (seg, spec) in topology.segments().iter().enumerate() {
            for dev in 0..spec.device_count {
                devices.insert(
                    (seg, dev),
                    DeviceResources {
                        free: (0..WORDS_PER_DEVICE).map(|b| 1u16 << b).collect(),
                        block_kind: BlockKind::SpaceSwitch,
                    },
                );
            }
        }
        Self { devices }
    }

    pub fn set_block_kind(&mut self, segment: usize, device: usize, kind: BlockKind) {
        if let Some(d) = self.devices.get_mut(&(segment, device)) {
            d.block_kind = kind;
        }
    }

    pub fn device(&self, segment: usize, device: usize) -> Option<&DeviceResources> {
        self.devices.get(&(segment, device))
    }

    pub fn total_words(&self) -> usize {
        self.devices.len() * WORDS_PER_DEVICE
    }

    pub fn free_words(&self) -> usize {
        self.devices.values().map(|d| d.free.len()).sum()
    }

    pub fn is_free(&self, hop: &Hop) -> bool {
        self.devices
            .get(&(hop.segment, hop.device))
            .is_some_and(|d| d.free.contains(&hop.word))
    }

    fn first_free(&self) -> Option<Hop> {
        self.devices
            .iter()
            .find_map(|(&(segment, device), d)| d.free.first().map(|&word| Hop { segment, device, word }))
    }

    fn take(&mut self, hop: &Hop) -> bool {
        self.devices
            .get_mut(&(hop.segment, hop.device))
            .is_some_and(|d| d.free.remove(&hop.word))
    }

    fn give_back(&mut self, hop: &Hop) {
        let inserted = self
            .devices
            .get_mut(&(hop.segment, hop.device))
            .map(|d| d.free.insert(hop.word));
        debug_assert_eq!(inserted, Some(true), "returned a word that was never taken");
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OpticalPathTable {
    entries: BTreeMap<PathId, OpticalPathEntry>,
    next_id: PathId,
}

impl OpticalPathTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: PathId) -> Option<&OpticalPathEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &OpticalPathEntry> {
        self.entries.values()
    }

    fn transition(
        &mut self,
        id: PathId,
        expected: PathState,
        next: PathState,
    ) -> Result<&mut OpticalPathEntry, PathError> {
        let entry = self.entries.get_mut(&id).ok_or(PathError::UnknownPath(id))?;
        if entry.state != expected {
            return Err(PathError::WrongState {
                path: id,
                state: entry.state,
                expected,
            });
        }
        debug_assert!(entry.state.can_become(next));
        entry.state = next;
        Ok(entry)
    }

    /// Output word a device should carry: the OR of every configuring or
    /// active path on it.
    pub fn device_word(&self, segment: usize, device: usize) -> u16 {
        self.entries
            .values()
            .filter(|e| matches!(e.state, PathState::Configuring | PathState::Active))
            .flat_map(|e| e.hops.iter())
            .filter(|h| h.segment == segment && h.device == device)
            .fold(0, |acc, h| acc | h.word)
    }
}

/// First-fit allocation in (segment, device, word) order.
pub fn allocate_path(
    table: &mut OpticalPathTable,
    resources: &mut OcsResourceModel,
    src_tor: TorId,
    dst_tor: TorId,
) -> Result<PathId, PathError> {
    if src_tor == dst_tor {
        return Err(PathError::SameTor(src_tor));
    }
    let hop = resources.first_free().ok_or(PathError::NoCapacity)?;
    let taken = resources.take(&hop);
    debug_assert!(taken);
    let path_id = table.next_id;
    table.next_id += 1;
    table.entries.insert(
        path_id,
        OpticalPathEntry {
            path_id,
            src_tor,
            dst_tor,
            hops: vec![hop],
            state: PathState::Reserved,
            config_time_ns: None,
        },
    );
    Ok(path_id)
}

/// Anything that accepts configuration requests on behalf of the device controller.
pub trait ConfigureSink {
    fn submit(&mut self, request: ConfigureRequest) -> Result<(), ControllerError>;
}

/// Feeds requests into a simulated device controller, generated at its current clock.
impl ConfigureSink for DeviceController {
    fn submit(&mut self, request: ConfigureRequest) -> Result<(), ControllerError> {
        let now = self.now();
        DeviceController::submit(self, request, now)
    }
}

/// Move a reserved path to Configuring and send its hop words.
pub fn activate_path(
    table: &mut OpticalPathTable,
    path_id: PathId,
    request_id: RequestId,
    sink: &mut dyn ConfigureSink,
) -> Result<ConfigureRequest, PathError> {
    let entry = table.entries.get(&path_id).ok_or(PathError::UnknownPath(path_id))?;
    if entry.state != PathState::Reserved {
        return Err(PathError::WrongState {
            path: path_id,
            state: entry.state,
            expected: PathState::Reserved,
        });
    }
    let hops = entry.hops.clone();
    let targets = hops
        .iter()
        .map(|h| Target {
            segment: h.segment,
            device: h.device,
            outputs: table.device_word(h.segment, h.device) | h.word,
        })
        .collect();
    let request = ConfigureRequest::new(request_id, targets);
    sink.submit(request.clone())?;
    table.transition(path_id, PathState::Reserved, PathState::Configuring)?;
    Ok(request)
}

/// Mark a configuring path active once its request has completed.
pub fn complete_path(table: &mut OpticalPathTable, path_id: PathId, config_time_ns: u64) -> Result<(), PathError> {
    let entry = table.transition(path_id, PathState::Configuring, PathState::Active)?;
    entry.config_time_ns = Some(config_time_ns);
    Ok(())
}

pub fn release_path(
    table: &mut OpticalPathTable,
    resources: &mut OcsResourceModel,
    path_id: PathId,
) -> Result<(), PathError> {
    let entry = table.transition(path_id, PathState::Active, PathState::Released)?;
    for hop in &entry.hops {
        resources.give_back(hop);
    }
    Ok(())
}

/// Outcome of classifying one flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Detection {
    /// Matched a proactive rule.
    Proactive { flow_id: u64, rule_id: u64 },
    /// Crossed the reactive threshold.
    Reactive { flow_id: u64 },
}

impl Detection {
    pub fn flow_id(&self) -> u64 {
        match self {
            Detection::Proactive { flow_id, .. } | Detection::Reactive { flow_id } => *flow_id,
        }
    }
}

/// Table, resources and rules bundled with request-id bookkeeping.
#[derive(Debug, Clone)]
pub struct NetworkController {
    pub table: OpticalPathTable,
    pub resources: OcsResourceModel,
    pub rules: RuleSet,
    pub threshold_bps: NonZeroU64,
    in_flight: BTreeMap<RequestId, PathId>,
    next_request: RequestId,
}

impl NetworkController {
    pub fn new(topology: &Topology, threshold_bps: NonZeroU64) -> Self {
        Self {
            table: OpticalPathTable::new(),
            resources: OcsResourceModel::from_topology(topology),
            rules: RuleSet::default(),
            threshold_bps,
            in_flight: BTreeMap::new(),
            next_request: 1,
        }
    }

    /// Service-oriented rules first, then the reactive threshold.
    pub fn classify(&self, flows: &[FlowStats]) -> Vec<Detection> {
        let reactive = detect_large_flow_reactive(flows, self.threshold_bps);
        flows
            .iter()
            .filter_map(|f| match match_proactive_rules(f, self.rules.rules()) {
                Some(rule_id) => Some(Detection::Proactive {
                    flow_id: f.flow_id,
                    rule_id,
                }),
                None => reactive
                    .contains(&f.flow_id)
                    .then_some(Detection::Reactive { flow_id: f.flow_id }),
            })
            .collect()
    }

    pub fn allocate(&mut self, src_tor: TorId, dst_tor: TorId) -> Result<PathId, PathError> {
        allocate_path(&mut self.table, &mut self.resources, src_tor, dst_tor)
    }

    pub fn activate(&mut self, path_id: PathId, sink: &mut dyn ConfigureSink) -> Result<ConfigureRequest, PathError> {
        let request_id = self.next_request;
        let req = activate_path(&mut self.table, path_id, request_id, sink)?;
        self.next_request += 1;
        self.in_flight.insert(request_id, path_id);
        Ok(req)
    }

    /// Apply a completion report; returns the path that became active.
    pub fn on_completion(&mut self, report: &CompletionReport) -> Result<Option<PathId>, PathError> {
        let Some(path) = self.in_flight.remove(&report.request_id) else {
            return Ok(None);
        };
        complete_path(&mut self.table, path, report.config_time_ns)?;
        Ok(Some(path))
    }

    pub fn release(&mut self, path_id: PathId) -> Result<(), PathError> {
        release_path(&mut self.table, &mut self.resources, path_id)
    }

    /// Activate through a simulated device controller and run it to completion.
    pub fn activate_and_wait(
        &mut self,
        path_id: PathId,
        dc: &mut DeviceController,
    ) -> Result<CompletionReport, PathError> {
        let req = self.activate(path_id, dc)?;
        let report = dc
            .run_until_complete(req.request_id)
            .expect("submitted request is known");
        self.on_completion(&report)?;
        Ok(report)
    }
}
