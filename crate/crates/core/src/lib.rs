//! Discrete-event model of MEOW, a multi-master EtherCAT control plane for
//! optical circuit switches.
//!
//! The crate is layered bottom-up:
//!
//! - [`topology`]: segments, cascades and calibrated timing.
//! - [`codec`]: EtherCAT telegram wire format and slave datagram processing.
//! - [`engine`]: deterministic event queue and seeded RNG.
//! - [`ecat`]: cyclic masters, frame traversal, latching, closed-form latency.
//! - [`device_controller`]: request fan-out over up to six masters.
//! - [`network_controller`]: optical path table, flow detection, allocation.
//! - [`southbound`]: newline-delimited JSON protocol in front of the device controller.
//! - [`northbound`]: scripted network-controller sessions.
//! - [`bench`]: scenarios, statistics, sweeps, extrapolation and exports.

pub mod bench;
pub mod codec;
pub mod device_controller;
pub mod ecat;
pub mod engine;
pub mod network_controller;
pub mod northbound;
pub mod southbound;
pub mod topology;
