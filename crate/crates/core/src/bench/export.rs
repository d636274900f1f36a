//! CSV, trace and event-log writers.
//!
//! Times are printed in microseconds with one decimal, rounded half-up to
//! the nearest 100 ns. All arithmetic stays in integers so output is
//! byte-stable across platforms.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use crate::device_controller::{Event, RequestTrace};
use crate::engine::TimedEvent;

use super::scenario::RequestResult;

pub const CSV_HEADER: &str = "request_id,t_gen_us,t_emit_us,t_complete_us,config_time_us,segment,device";

pub fn fmt_us(ns: u64) -> String {
    let tenths = (ns + 50) / 100;
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// Inverse of [`fmt_us`] for values it produced.
pub fn parse_us(s: &str) -> Option<u64> {
    let (whole, frac) = s.split_once('.')?;
    if frac.len() != 1 {
        return None;
    }
    let whole: u64 = whole.parse().ok()?;
    let frac: u64 = frac.parse().ok()?;
    Some(whole * 1000 + frac * 100)
}

pub fn write_csv<W: Write>(results: &[RequestResult], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.request_id,
            fmt_us(r.t_gen_ns),
            fmt_us(r.t_emit_ns),
            fmt_us(r.t_complete_ns),
            fmt_us(r.config_time_ns),
            r.segment,
            r.device
        )?;
    }
    Ok(())
}

/// Read the `config_time_us` column back, in nanoseconds.
pub fn read_csv_config_times<R: BufRead>(input: R) -> io::Result<Vec<u64>> {
    let bad = |line: usize| io::Error::new(io::ErrorKind::InvalidData, format!("csv line {line}"));
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h == CSV_HEADER => {}
        _ => return Err(bad(1)),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let field = line.split(',').nth(4).ok_or_else(|| bad(i + 2))?;
        out.push(parse_us(field).ok_or_else(|| bad(i + 2))?);
    }
    Ok(out)
}

/// One line per request with its three timestamps:
/// ① generation, ② master emission per segment, ③ latch per device.
pub fn write_trace<W: Write>(traces: &[RequestTrace], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "# request ①generated_us ②master_emit_us[segment] ③latched_us[segment.device] config_us"
    )?;
    for t in traces {
        let mut line = format!("{} ①{}", t.request_id, fmt_us(t.t_generated_ns));
        let emits: Vec<String> = t
            .t_master_emit_ns
            .iter()
            .map(|(s, ns)| format!("{s}:{}", fmt_us(*ns)))
            .collect();
        let latches: Vec<String> = t
            .t_latched_ns
            .iter()
            .map(|((s, d), ns)| format!("{s}.{d}:{}", fmt_us(*ns)))
            .collect();
        let _ = write!(line, " ②{} ③{}", emits.join(","), latches.join(","));
        match t.config_time_ns() {
            Some(c) => {
                let _ = write!(line, " {}", fmt_us(c));
            }
            None => line.push_str(" -"),
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_event_log<W: Write>(events: &[TimedEvent<Event>], mut out: W) -> io::Result<()> {
    for ev in events {
        writeln!(out, "{} {} {:?}", ev.time_ns, ev.seq, ev.payload)?;
    }
    Ok(())
}
