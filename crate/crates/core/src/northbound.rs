//! Line-oriented scripts driving a [`NetworkController`] against a simulated
//! device controller.
//!
//! ```text
//! # comments and blank lines are skipped
//! threshold 500000000
//! add-rule 1 10 src=3 tag=storage
//! inject-flows [{"flow_id":9,"src_tor":3,"dst_tor":4,"rate_bps":1000,"service_tag":"storage"}]
//! allocate 3 4
//! activate 0
//! release 0
//! dump-table
//! ```
//!
//! Every command prints one JSON line.

use std::num::NonZeroU64;

use serde_json::json;
use thiserror::Error;

use crate::bench::fmt_us;
use crate::device_controller::DeviceController;
use crate::network_controller::{FlowStats, NetworkController, OpticalPathEntry, PathError, ProactiveRule, RuleMatch};
use crate::topology::Topology;

pub const DEFAULT_THRESHOLD_BPS: u64 = 1_000_000_000;

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

pub struct ScriptRunner {
    nc: NetworkController,
    dc: DeviceController,
}

fn arg<T: std::str::FromStr>(words: &[&str], i: usize, what: &str) -> Result<T, String> {
    let w = words.get(i).ok_or_else(|| format!("missing {what}"))?;
    w.parse().map_err(|_| format!("bad {what}: {w:?}"))
}

impl ScriptRunner {
    pub fn new(topology: Topology, seed: u64) -> Self {
        let threshold = NonZeroU64::new(DEFAULT_THRESHOLD_BPS).expect("nonzero");
        Self {
            nc: NetworkController::new(&topology, threshold),
            dc: DeviceController::new(topology, seed),
        }
    }

    pub fn network(&self) -> &NetworkController {
        &self.nc
    }

    pub fn devices(&self) -> &DeviceController {
        &self.dc
    }

    /// Run every line, stopping at the first failing command.
    pub fn run(&mut self, script: &str) -> Result<Vec<String>, ScriptError> {
        let mut out = Vec::new();
        for (i, raw) in script.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let reply = self
                .command(line)
                .map_err(|message| ScriptError { line: i + 1, message })?;
            out.push(reply.to_string());
        }
        Ok(out)
    }

    fn command(&mut self, line: &str) -> Result<serde_json::Value, String> {
        let (verb, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let words: Vec<&str> = rest.split_whitespace().collect();
        let path_err = |e: PathError| e.to_string();
        match verb {
            "threshold" => {
                let bps: u64 = arg(&words, 0, "threshold")?;
                self.nc.threshold_bps = NonZeroU64::new(bps).ok_or("threshold must be positive")?;
                Ok(json!({"threshold_bps": bps}))
            }
            "add-rule" => {
                let rule_id = arg(&words, 0, "rule id")?;
                let priority = arg(&words, 1, "priority")?;
                let mut matcher = RuleMatch::default();
                for w in &words[2..] {
                    match w.split_once('=') {
                        Some(("src", v)) => matcher.src_tor = Some(v.parse().map_err(|_| format!("bad src {v:?}"))?),
                        Some(("dst", v)) => matcher.dst_tor = Some(v.parse().map_err(|_| format!("bad dst {v:?}"))?),
                        Some(("tag", v)) => matcher.service_tag = Some(v.to_string()),
                        _ => return Err(format!("unknown rule field {w:?}")),
                    }
                }
                let rule = ProactiveRule {
                    rule_id,
                    matcher,
                    priority,
                };
                self.nc.rules.add(rule.clone()).map_err(path_err)?;
                Ok(json!({"rule": rule}))
            }
            "inject-flows" => {
                let flows: Vec<FlowStats> = serde_json::from_str(rest).map_err(|e| e.to_string())?;
                Ok(json!({"detections": self.nc.classify(&flows)}))
            }
            "allocate" => {
                let path = self
                    .nc
                    .allocate(arg(&words, 0, "source ToR")?, arg(&words, 1, "destination ToR")?)
                    .map_err(path_err)?;
                Ok(json!({"path_id": path, "hops": self.entry(path).hops}))
            }
            "activate" => {
                let path = arg(&words, 0, "path id")?;
                let report = self.nc.activate_and_wait(path, &mut self.dc).map_err(path_err)?;
                Ok(json!({
                    "path_id": path,
                    "request_id": report.request_id,
                    "config_time_us": fmt_us(report.config_time_ns).parse::<serde_json::Value>().expect("decimal"),
                }))
            }
            "release" => {
                let path = arg(&words, 0, "path id")?;
                self.nc.release(path).map_err(path_err)?;
                Ok(json!({"released": path}))
            }
            "dump-table" => {
                let entries: Vec<&OpticalPathEntry> = self.nc.table.entries().collect();
                Ok(json!({"paths": entries, "free_words": self.nc.resources.free_words()}))
            }
            other => Err(format!("unknown command {other:?}")),
        }
    }

    fn entry(&self, path: u64) -> OpticalPathEntry {
        self.nc.table.get(path).expect("just allocated").clone()
    }
}
