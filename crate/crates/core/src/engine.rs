//! Deterministic discrete-event core.
//!
//! Events are ordered by `(time_ns, seq)`; `seq` is the insertion counter, so
//! events sharing a timestamp dequeue in FIFO order. One engine is strictly
//! single-threaded.
//!
//! Randomness comes from [`SimRng`]: xoshiro256** whose four state words are
//! the first four outputs of SplitMix64 started at the scenario seed. Range
//! draws use rejection sampling (see [`SimRng::uniform_draw`]), so a seed
//! yields the same sequence on every platform.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot schedule at {at} ns, clock is already at {now} ns")]
pub struct SchedulingInPast {
    pub at: u64,
    pub now: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent<T> {
    pub time_ns: u64,
    pub seq: u64,
    pub payload: T,
}

struct Queued<T>(TimedEvent<T>);

impl<T> Queued<T> {
    fn key(&self) -> (u64, u64) {
        (self.0.time_ns, self.0.seq)
    }
}

impl<T> PartialEq for Queued<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<T> Eq for Queued<T> {}

impl<T> PartialOrd for Queued<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Queued<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// Seeded generator with a portable integer range mapping.
#[derive(Debug, Clone)]
pub struct SimRng(Xoshiro256StarStar);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        // rand_xoshiro fills the state from SplitMix64 outputs in order
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `[lo, hi]`.
    ///
    /// With `range = hi - lo + 1`, raw outputs `x` are drawn until
    /// `x < floor(2^64 / range) * range`; the result is `lo + x % range`.
    /// At least one output is consumed even when `lo == hi`.
    pub fn uniform_draw(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "uniform_draw: lo {lo} > hi {hi}");
        let range = (hi as i128 - lo as i128 + 1) as u128;
        if range == 1u128 << 64 {
            return lo.wrapping_add(self.next_u64() as i64);
        }
        let limit = ((1u128 << 64) / range) * range;
        loop {
            let x = self.next_u64() as u128;
            if x < limit {
                return (lo as i128 + (x % range) as i128) as i64;
            }
        }
    }

    /// `uniform_draw` over an index range `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.uniform_draw(0, n as i64 - 1) as usize
    }
}

pub struct Engine<T> {
    now: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<T>>>,
}

impl<T> Default for Engine<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Engine<T> {
    pub fn new() -> Self {
        Self {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(q)| q.0.time_ns)
    }

    /// Enqueue `payload` at `time_ns`; returns the assigned sequence number.
    pub fn schedule(&mut self, time_ns: u64, payload: T) -> Result<u64, SchedulingInPast> {
        if time_ns < self.now {
            return Err(SchedulingInPast {
                at: time_ns,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued(TimedEvent { time_ns, seq, payload })));
        Ok(seq)
    }

    /// Schedule `delay_ns` after the current clock.
    pub fn schedule_in(&mut self, delay_ns: u64, payload: T) -> u64 {
        let at = self.now + delay_ns;
        self.schedule(at, payload)
            .expect("relative schedule is never in the past")
    }

    /// Pop the next event if it is due at or before `t_end`, advancing the clock.
    pub fn pop_due(&mut self, t_end: u64) -> Option<TimedEvent<T>> {
        match self.peek_time() {
            Some(t) if t <= t_end => {
                let Reverse(Queued(ev)) = self.queue.pop()?;
                self.now = ev.time_ns;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Pop the next event regardless of time.
    pub fn pop_next(&mut self) -> Option<TimedEvent<T>> {
        self.pop_due(u64::MAX)
    }

    /// Process every event with `time_ns <= t_end` in `(time, seq)` order,
    /// calling `handler` for each. Handlers may schedule more events. The
    /// clock finishes at `max(last processed time, t_end)`.
    pub fn run_until<F>(&mut self, t_end: u64, mut handler: F) -> Vec<TimedEvent<T>>
    where
        F: FnMut(&mut Self, &TimedEvent<T>),
    {
        let mut log = Vec::new();
        while let Some(ev) = self.pop_due(t_end) {
            handler(self, &ev);
            log.push(ev);
        }
        self.now = self.now.max(t_end);
        log
    }
}
