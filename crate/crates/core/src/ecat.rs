//! Cyclic master emission, bucket-brigade traversal of a cascade, slave output
//! latching, and the closed-form latency model the event simulation is held to.

use crate::codec::{self, apply_to_word, Command, EcatDatagram, EcatFrame, SlaveMapping};
use crate::topology::{TimingParams, DEVICE_WORD_BYTES};

pub type RequestId = u64;

/// Smallest boundary `phase_ns + k * cycle_ns` (k >= 0) strictly after `t`.
pub fn next_pdo_boundary(t: u64, phase_ns: u64, cycle_ns: u64) -> u64 {
    assert!(cycle_ns > 0);
    if t < phase_ns {
        return phase_ns;
    }
    let k = (t - phase_ns) / cycle_ns + 1;
    phase_ns + k * cycle_ns
}

/// Smallest boundary at or after `t`. Outputs staged exactly on a boundary
/// still make that boundary's frame.
pub fn pickup_boundary(t: u64, phase_ns: u64, cycle_ns: u64) -> u64 {
    if t <= phase_ns {
        return phase_ns;
    }
    next_pdo_boundary(t - 1, phase_ns, cycle_ns)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingWrite {
    boundary: u64,
    request: RequestId,
    device: usize,
    word: u16,
}

/// One EtherCAT master and its staged output image.
#[derive(Debug, Clone)]
pub struct MasterState {
    pub segment: usize,
    pub phase_ns: u64,
    pub cycle_ns: u64,
    image: Vec<u8>,
    pending: Vec<PendingWrite>,
    last_emit: Option<u64>,
    cycle_count: u64,
}

impl MasterState {
    pub fn new(segment: usize, device_count: usize, phase_ns: u64, cycle_ns: u64) -> Self {
        Self {
            segment,
            phase_ns,
            cycle_ns,
            image: vec![0; DEVICE_WORD_BYTES * device_count],
            pending: Vec::new(),
            last_emit: None,
            cycle_count: 0,
        }
    }

    pub fn device_count(&self) -> usize {
        self.image.len() / DEVICE_WORD_BYTES
    }

    pub fn image(&self) -> &[u8] {
        &self.image
    }

    pub fn last_emit(&self) -> Option<u64> {
        self.last_emit
    }

    /// First boundary not yet transmitted that can still carry outputs staged at `t`.
    pub fn emission_boundary(&self, t: u64) -> u64 {
        let b = pickup_boundary(t, self.phase_ns, self.cycle_ns);
        match self.last_emit {
            Some(last) if b <= last => last + self.cycle_ns,
            _ => b,
        }
    }

    /// Stage `word` for `device`, to go out at the frame for `boundary`.
    pub fn stage(&mut self, boundary: u64, request: RequestId, device: usize, word: u16) {
        assert!(device < self.device_count());
        self.pending.push(PendingWrite {
            boundary,
            request,
            device,
            word,
        });
    }

    pub fn pending_requests(&self) -> Vec<RequestId> {
        let mut ids: Vec<_> = self.pending.iter().map(|p| p.request).collect();
        ids.dedup();
        ids
    }

    /// First boundary strictly after the last emission, or the first boundary
    /// at or after `from` if nothing has been sent yet.
    pub fn next_emission(&self, from: u64) -> u64 {
        match self.last_emit {
            Some(last) => next_pdo_boundary(last, self.phase_ns, self.cycle_ns),
            None => pickup_boundary(from, self.phase_ns, self.cycle_ns),
        }
    }
}

/// Frame arrival at one device of the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameArrival {
    pub device: usize,
    pub time_ns: u64,
}

/// Everything produced by one cyclic transmission.
#[derive(Debug, Clone)]
pub struct Emission {
    pub segment: usize,
    pub boundary_ns: u64,
    pub frame: EcatFrame,
    pub wire_len: usize,
    pub arrivals: Vec<FrameArrival>,
    /// (request, device) pairs whose outputs ride in this frame.
    pub carried: Vec<(RequestId, usize)>,
    /// Requests getting their first emission mark from this frame.
    pub marked: Vec<RequestId>,
}

/// Transmit the cyclic frame of `master` at `boundary_ns`.
///
/// Pending writes due at or before the boundary are folded into the image in
/// staging order (last writer wins), and one LWR datagram covering the whole
/// image goes out. Device `j` sees the frame at
/// `boundary + d_frame_head + (j + 1) * d_hop`.
pub fn emit_cycle(master: &mut MasterState, boundary_ns: u64, timing: &TimingParams) -> Emission {
    debug_assert_eq!(
        (boundary_ns - master.phase_ns) % master.cycle_ns,
        0,
        "emission off the PDO grid"
    );
    let mut carried = Vec::new();
    let mut marked: Vec<RequestId> = Vec::new();
    let mut keep = Vec::new();
    for w in master.pending.drain(..) {
        if w.boundary <= boundary_ns {
            let off = DEVICE_WORD_BYTES * w.device;
            master.image[off..off + 2].copy_from_slice(&w.word.to_le_bytes());
            carried.push((w.request, w.device));
            if !marked.contains(&w.request) {
                marked.push(w.request);
            }
        } else {
            keep.push(w);
        }
    }
    master.pending = keep;

    let mut dgram = EcatDatagram::new(Command::Lwr, 0, master.image.clone());
    dgram.idx = (master.cycle_count & 0xff) as u8;
    let frame = EcatFrame::new(vec![dgram]);
    let wire_len = codec::encode_frame(&frame)
        .expect("process image fits a single frame")
        .len();

    let first = boundary_ns + timing.d_frame_head_ns;
    let arrivals = (0..master.device_count())
        .map(|j| FrameArrival {
            device: j,
            time_ns: first + (j as u64 + 1) * timing.d_hop_ns,
        })
        .collect();

    master.last_emit = Some(boundary_ns);
    master.cycle_count += 1;
    Emission {
        segment: master.segment,
        boundary_ns,
        frame,
        wire_len,
        arrivals,
        carried,
        marked,
    }
}

/// One slave device: a single 16-bit output word.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub segment: usize,
    pub position: usize,
    pub word: u16,
    pub mapping: SlaveMapping,
    /// (bit index, assert time) for every rising output bit.
    pub activations: Vec<(u8, u64)>,
}

impl DeviceState {
    pub fn new(segment: usize, position: usize, logical_start: u32) -> Self {
        Self {
            segment,
            position,
            word: 0,
            mapping: SlaveMapping::new(logical_start, DEVICE_WORD_BYTES as u16),
            activations: Vec::new(),
        }
    }

    /// Process the passing frame on the fly; returns the word this device
    /// will latch. The frame's working counter is updated.
    pub fn process_frame(&self, frame: &mut EcatFrame) -> u16 {
        let mut word = self.word;
        for d in frame.datagrams.iter_mut().filter(|d| d.cmd.is_logical()) {
            word = apply_to_word(word, d, &self.mapping).expect("logical datagram").0;
        }
        word
    }

    /// Apply a latch; returns the bits that rose.
    pub fn apply_latch(&mut self, latch: &PendingLatch) -> Vec<u8> {
        let rising = latch.word & !self.word;
        self.word = latch.word;
        let bits: Vec<u8> = (0..16u8).filter(|b| rising & (1 << b) != 0).collect();
        for &b in &bits {
            self.activations.push((b, latch.at_ns));
        }
        bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingLatch {
    pub at_ns: u64,
    pub word: u16,
}

/// Output latch following a frame arrival at `t_arrival_ns`.
pub fn device_receive(word: u16, t_arrival_ns: u64, timing: &TimingParams) -> PendingLatch {
    PendingLatch {
        at_ns: t_arrival_ns + timing.d_latch_ns,
        word,
    }
}

/// Closed-form configuration time.
///
/// `position` is 1-based along the cascade, `wait_ns` the time outputs sit
/// staged before their PDO boundary, `jitter_ns` the dispatch jitter.
pub fn analytic_latency(timing: &TimingParams, n_segments: usize, position: u64, wait_ns: u64, jitter_ns: u64) -> u64 {
    timing.d_sb_ns
        + timing.multi_master_overhead(n_segments)
        + jitter_ns
        + wait_ns
        + timing.d_frame_head_ns
        + position * timing.d_hop_ns
        + timing.d_latch_ns
}
