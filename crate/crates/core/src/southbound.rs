//! Newline-delimited JSON front end for the device controller.
//!
//! Each inbound line is one message:
//!
//! ```text
//! {"type":"configure","request_id":7,"targets":[{"segment":0,"device":3,"outputs":"0x0001"}]}
//! ```
//!
//! A valid request gets an `ack` line followed by a `complete` line carrying
//! the configuration time and the full trace. Anything else gets one `error`
//! line. The plant runs in virtual time: before each request the session
//! lets a seeded idle gap of up to one PDO cycle elapse, so successive
//! requests see varied boundary phases.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::bench::fmt_us;
use crate::device_controller::{ConfigureRequest, ControllerError, DeviceController, RequestTrace, Target};
use crate::ecat::RequestId;
use crate::engine::SimRng;
use crate::topology::Topology;

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Inbound {
    Configure {
        request_id: RequestId,
        targets: Vec<Target>,
        #[serde(default)]
        measure_at: Option<(usize, usize)>,
    },
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Outbound<'a> {
    Ack {
        request_id: RequestId,
    },
    Complete {
        request_id: RequestId,
        config_time_us: serde_json::Value,
        trace: &'a RequestTrace,
    },
    Error {
        #[serde(skip_serializing_if = "Option::is_none")]
        request_id: Option<RequestId>,
        code: &'static str,
        message: String,
    },
}

fn error_code(e: &ControllerError) -> &'static str {
    match e {
        ControllerError::UnknownTarget { .. } => "UnknownTarget",
        ControllerError::DuplicateRequestId(_) => "DuplicateRequestId",
        ControllerError::TooManySegments(_) => "TooManySegments",
        ControllerError::EmptyRequest => "EmptyRequest",
        ControllerError::DuplicateTarget { .. } => "DuplicateTarget",
        ControllerError::BadMeasurementTarget(..) => "BadMeasurementTarget",
        ControllerError::SchedulingInPast(_) => "SchedulingInPast",
    }
}

fn to_line(msg: &Outbound) -> String {
    serde_json::to_string(msg).expect("outbound messages always serialize")
}

pub struct Session {
    controller: DeviceController,
    rng: SimRng,
}

impl Session {
    pub fn new(topology: Topology, seed: u64) -> Self {
        Self {
            controller: DeviceController::new(topology, seed),
            // separate stream so idle gaps never perturb dispatch jitter
            rng: SimRng::new(seed ^ 0x5eed_5eed_5eed_5eed),
        }
    }

    pub fn controller(&self) -> &DeviceController {
        &self.controller
    }

    /// Process one inbound line and return the reply lines, in order.
    pub fn handle_line(&mut self, line: &str) -> Vec<String> {
        let msg: Inbound = match serde_json::from_str(line) {
            Ok(m) => m,
            Err(e) => {
                let request_id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("request_id")?.as_u64());
                return vec![to_line(&Outbound::Error {
                    request_id,
                    code: "BadRequest",
                    message: e.to_string(),
                })];
            }
        };
        let Inbound::Configure {
            request_id,
            targets,
            measure_at,
        } = msg;
        let mut req = ConfigureRequest::new(request_id, targets);
        req.measure_at = measure_at;

        let cycle = self.controller.topology().timing().pdo_cycle_ns;
        let gap = self.rng.uniform_draw(0, cycle as i64 - 1) as u64;
        let t_gen = self.controller.now() + gap;
        if let Err(e) = self.controller.submit(req, t_gen) {
            return vec![to_line(&Outbound::Error {
                request_id: Some(request_id),
                code: error_code(&e),
                message: e.to_string(),
            })];
        }
        let ack = to_line(&Outbound::Ack { request_id });
        let report = self
            .controller
            .run_until_complete(request_id)
            .expect("accepted requests complete");
        let trace = self.controller.trace(request_id).expect("recorded");
        let us: serde_json::Value = fmt_us(report.config_time_ns).parse().expect("decimal literal");
        let done = to_line(&Outbound::Complete {
            request_id,
            config_time_us: us,
            trace,
        });
        vec![ack, done]
    }
}

fn serve_connection(stream: TcpStream, session: &Mutex<Session>) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let replies = session.lock().expect("session lock").handle_line(&line);
        for r in replies {
            writeln!(out, "{r}")?;
        }
        out.flush()?;
    }
    Ok(())
}

/// Accept connections forever, one thread per client. All clients share
/// one session; requests are serialized through it.
pub fn serve_on(listener: TcpListener, session: Session) -> io::Result<()> {
    let session = Arc::new(Mutex::new(session));
    for stream in listener.incoming() {
        let stream = stream?;
        let session = Arc::clone(&session);
        thread::spawn(move || {
            let _ = serve_connection(stream, &session);
        });
    }
    Ok(())
}

pub fn serve<A: ToSocketAddrs>(addr: A, session: Session) -> io::Result<()> {
    serve_on(TcpListener::bind(addr)?, session)
}
