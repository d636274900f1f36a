//! Physical arrangement of EtherCAT segments and the timing parameters that
//! drive the simulator.
//!
//! All durations are integer nanoseconds. A [`Topology`] is immutable once
//! built and may be shared freely between threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard ceiling on the number of masters a single device controller runs.
pub const MAX_SEGMENTS: usize = 6;

/// Upper bound on the PDO cycle.
pub const MAX_PDO_CYCLE_NS: u64 = 100_000;

/// Bytes of process image owned by each device (one 16-bit output word).
pub const DEVICE_WORD_BYTES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("{0} segments requested, at most {MAX_SEGMENTS} masters are supported")]
    SegmentCountExceeded(usize),
    #[error("topology has no segments")]
    NoSegments,
    #[error("segment {0} has no devices")]
    EmptySegment(usize),
    #[error("timing parameter `{0}` is negative")]
    NegativeTiming(&'static str),
    #[error("PDO cycle of {0} ns is outside (0, {MAX_PDO_CYCLE_NS}] ns")]
    InvalidCycle(i64),
    #[error("index out of range: segment {segment}, device {device:?}")]
    IndexOutOfRange { segment: usize, device: Option<usize> },
}

/// Calibrated timing of one control-plane hop chain.
///
/// Only the sum `d_sb + d_frame_head + d_latch` is pinned by measurement; the
/// split between the three is a modelling choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingParams {
    pub pdo_cycle_ns: u64,
    /// Network controller to device controller delivery.
    pub d_sb_ns: u64,
    /// Master-side staging plus frame serialization head.
    pub d_frame_head_ns: u64,
    /// Per-device forwarding contribution along the cascade.
    pub d_hop_ns: u64,
    /// Slave output latch after the frame passes.
    pub d_latch_ns: u64,
    /// Fixed multi-master staging overhead, only charged with more than one segment.
    pub d_mm_ns: u64,
    /// Upper bound of the uniform dispatch jitter.
    pub d_jitter_max_ns: u64,
    /// Nominal link rate. Serialization time is folded into `d_frame_head_ns`.
    pub link_mbps: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            pdo_cycle_ns: 32_000,
            d_sb_ns: 70_000,
            d_frame_head_ns: 12_000,
            d_hop_ns: 900,
            d_latch_ns: 800,
            d_mm_ns: 0,
            d_jitter_max_ns: 0,
            link_mbps: 100,
        }
    }
}

impl TimingParams {
    /// Multi-master overhead actually charged for a topology with `n_segments` masters.
    pub fn multi_master_overhead(&self, n_segments: usize) -> u64 {
        if n_segments > 1 {
            self.d_mm_ns
        } else {
            0
        }
    }
}

/// Unvalidated timing description, as found in scenario files. Missing fields
/// fall back to [`TimingParams::default`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSpec {
    pub pdo_cycle_ns: i64,
    pub d_sb_ns: i64,
    pub d_frame_head_ns: i64,
    pub d_hop_ns: i64,
    pub d_latch_ns: i64,
    pub d_mm_ns: i64,
    pub d_jitter_max_ns: i64,
    pub link_mbps: i64,
}

impl Default for TimingSpec {
    fn default() -> Self {
        TimingParams::default().into()
    }
}

impl From<TimingParams> for TimingSpec {
    fn from(t: TimingParams) -> Self {
        // Every field is bounded well below i64::MAX by validation.
        Self {
            pdo_cycle_ns: t.pdo_cycle_ns as i64,
            d_sb_ns: t.d_sb_ns as i64,
            d_frame_head_ns: t.d_frame_head_ns as i64,
            d_hop_ns: t.d_hop_ns as i64,
            d_latch_ns: t.d_latch_ns as i64,
            d_mm_ns: t.d_mm_ns as i64,
            d_jitter_max_ns: t.d_jitter_max_ns as i64,
            link_mbps: t.link_mbps as i64,
        }
    }
}

impl TimingSpec {
    pub fn validate(&self) -> Result<TimingParams, TopologyError> {
        fn non_neg(v: i64, name: &'static str) -> Result<u64, TopologyError> {
            u64::try_from(v).map_err(|_| TopologyError::NegativeTiming(name))
        }
        let pdo_cycle_ns = non_neg(self.pdo_cycle_ns, "pdo_cycle_ns")?;
        if pdo_cycle_ns == 0 || pdo_cycle_ns > MAX_PDO_CYCLE_NS {
            return Err(TopologyError::InvalidCycle(self.pdo_cycle_ns));
        }
        Ok(TimingParams {
            pdo_cycle_ns,
            d_sb_ns: non_neg(self.d_sb_ns, "d_sb_ns")?,
            d_frame_head_ns: non_neg(self.d_frame_head_ns, "d_frame_head_ns")?,
            d_hop_ns: non_neg(self.d_hop_ns, "d_hop_ns")?,
            d_latch_ns: non_neg(self.d_latch_ns, "d_latch_ns")?,
            d_mm_ns: non_neg(self.d_mm_ns, "d_mm_ns")?,
            d_jitter_max_ns: non_neg(self.d_jitter_max_ns, "d_jitter_max_ns")?,
            link_mbps: non_neg(self.link_mbps, "link_mbps")?,
        })
    }
}

/// One master's cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub device_count: usize,
    /// PDO boundary phase of this segment's master.
    #[serde(default)]
    pub phase_ns: u64,
}

/// Structured topology description before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub timing: TimingSpec,
}

impl TopologySpec {
    /// `segments` cascades of `devices` each, all masters in phase.
    pub fn uniform(segments: usize, devices: usize, timing: TimingParams) -> Self {
        Self {
            segments: vec![
                SegmentSpec {
                    device_count: devices,
                    phase_ns: 0,
                };
                segments
            ],
            timing: timing.into(),
        }
    }
}

/// Validated topology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Topology {
    segments: Vec<SegmentSpec>,
    timing: TimingParams,
}

pub fn build_topology(spec: &TopologySpec) -> Result<Topology, TopologyError> {
    match spec.segments.len() {
        0 => return Err(TopologyError::NoSegments),
        n if n > MAX_SEGMENTS => return Err(TopologyError::SegmentCountExceeded(n)),
        _ => {}
    }
    if let Some(idx) = spec.segments.iter().position(|s| s.device_count == 0) {
        return Err(TopologyError::EmptySegment(idx));
    }
    let timing = spec.timing.validate()?;
    Ok(Topology {
        segments: spec.segments.clone(),
        timing,
    })
}

impl Topology {
    pub fn segments(&self) -> &[SegmentSpec] {
        &self.segments
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn segment(&self, segment: usize) -> Result<&SegmentSpec, TopologyError> {
        self.segments
            .get(segment)
            .ok_or(TopologyError::IndexOutOfRange { segment, device: None })
    }

    pub fn device_count(&self, segment: usize) -> Result<usize, TopologyError> {
        self.segment(segment).map(|s| s.device_count)
    }

    pub fn total_devices(&self) -> usize {
        self.segments.iter().map(|s| s.device_count).sum()
    }

    pub fn contains(&self, segment: usize, device: usize) -> bool {
        self.segments.get(segment).is_some_and(|s| device < s.device_count)
    }

    /// Byte offset of a device's output word in its master's logical process image.
    pub fn logical_offset(&self, segment: usize, device: usize) -> Result<u32, TopologyError> {
        if !self.contains(segment, device) {
            return Err(TopologyError::IndexOutOfRange {
                segment,
                device: Some(device),
            });
        }
        Ok((DEVICE_WORD_BYTES * device) as u32)
    }

    /// The last device of the cascade; cascade order is distance order.
    pub fn most_distant(&self, segment: usize) -> Result<usize, TopologyError> {
        self.device_count(segment).map(|n| n - 1)
    }
}
