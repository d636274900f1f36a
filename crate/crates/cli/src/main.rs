use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use meow_core::bench::{
    devices_per_segment, extrapolate_worst, pdo_reduction_analysis, run_scenario_logged, sweep_devices, write_csv,
    write_event_log, write_trace, Scenario,
};
use meow_core::codec::{check_vectors, CONFORMANCE_VECTORS};
use meow_core::northbound::ScriptRunner;
use meow_core::southbound::{serve, Session};
use meow_core::topology::build_topology;

#[derive(Parser)]
#[command(name = "meow", version, about = "Multi-master EtherCAT control-plane simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or preset (exp1, exp2) and print run statistics.
    Run {
        scenario: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Vary the device count of a single-segment scenario.
    Sweep {
        #[arg(long, default_value = "exp1")]
        scenario: String,
        /// Inclusive range such as 1..8.
        #[arg(long, default_value = "1..8", value_parser = parse_range)]
        devices: (usize, usize),
    },
    /// Worst-case configuration time for a data center of `racks` ToRs.
    Extrapolate {
        #[arg(long)]
        racks: u64,
        #[arg(long)]
        masters: u64,
        #[arg(long, default_value_t = 187_000)]
        worst_base_ns: u64,
        #[arg(long, default_value_t = 900)]
        slope_ns: u64,
    },
    /// Compare worst cases at two PDO cycle lengths.
    PdoCompare {
        #[arg(long, default_value = "exp2")]
        scenario: String,
        #[arg(long, default_value_t = 80_000)]
        slow_ns: u64,
        #[arg(long, default_value_t = 32_000)]
        fast_ns: u64,
    },
    /// Frame codec checks.
    Codec {
        #[command(subcommand)]
        action: CodecAction,
    },
    /// Serve the newline-delimited JSON southbound protocol over TCP.
    Serve {
        #[arg(long)]
        southbound: String,
        #[arg(long, default_value = "exp1")]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run a network-controller script.
    Nc {
        script: PathBuf,
        #[arg(long, default_value = "exp2")]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum CodecAction {
    /// Check conformance vectors: the built-in set or a vector file.
    Selftest {
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or("expected LO..HI")?;
    let lo: usize = a.parse().map_err(|_| format!("bad bound {a:?}"))?;
    let hi: usize = b.parse().map_err(|_| format!("bad bound {b:?}"))?;
    if lo == 0 || lo > hi {
        return Err(format!("empty or zero-based range {s}"));
    }
    Ok((lo, hi))
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            csv,
            trace,
            events,
        } => {
            let s = Scenario::load(&scenario)?;
            let (out, log) = run_scenario_logged(&s)?;
            if let Some(p) = csv.or(s.outputs.csv.clone()) {
                write_csv(&out.results, create(&p)?)?;
            }
            if let Some(p) = trace.or(s.outputs.trace.clone()) {
                write_trace(&out.traces, create(&p)?)?;
            }
            if let Some(p) = events {
                write_event_log(&log, create(&p)?)?;
            }
            print(&json!({"scenario": s.name, "stats": out.stats}));
        }
        Command::Sweep { scenario, devices } => {
            let counts: Vec<usize> = (devices.0..=devices.1).collect();
            if counts.len() < 2 {
                bail!("a sweep needs at least two device counts");
            }
            let r = sweep_devices(&Scenario::load(&scenario)?, &counts)?;
            print(&serde_json::to_value(&r)?);
        }
        Command::Extrapolate {
            racks,
            masters,
            worst_base_ns,
            slope_ns,
        } => {
            if masters == 0 {
                bail!("--masters must be positive");
            }
            let n = devices_per_segment(racks, masters);
            let worst = extrapolate_worst(worst_base_ns, slope_ns, n);
            print(&json!({
                "racks": racks,
                "masters": masters,
                "devices_per_segment": n,
                "worst_ns": worst,
            }));
        }
        Command::PdoCompare {
            scenario,
            slow_ns,
            fast_ns,
        } => {
            let r = pdo_reduction_analysis(&Scenario::load(&scenario)?, slow_ns, fast_ns)?;
            print(&serde_json::to_value(r)?);
        }
        Command::Codec {
            action: CodecAction::Selftest { vectors },
        } => {
            let text = match vectors {
                Some(p) => std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                None => CONFORMANCE_VECTORS.to_string(),
            };
            let outcomes = check_vectors(&text).map_err(anyhow::Error::msg)?;
            let failed = outcomes.iter().filter(|o| !o.passed()).count();
            for o in &outcomes {
                let mark = if o.passed() { "ok  " } else { "FAIL" };
                println!("{mark} line {:>3}: expected {} got {}", o.line, o.expected, o.actual);
            }
            println!("{} vectors, {failed} failed", outcomes.len());
            if failed > 0 {
                bail!("codec selftest failed");
            }
        }
        Command::Serve {
            southbound,
            scenario,
            seed,
        } => {
            let topology = build_topology(&Scenario::load(&scenario)?.topology)?;
            eprintln!("serving southbound on {southbound}");
            serve(southbound.as_str(), Session::new(topology, seed))?;
        }
        Command::Nc { script, scenario, seed } => {
            let text = std::fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
            let topology = build_topology(&Scenario::load(&scenario)?.topology)?;
            for line in ScriptRunner::new(topology, seed).run(&text)? {
                println!("{line}");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..8"), Ok((1, 8)));
        assert!(parse_range("0..3").is_err());
        assert!(parse_range("5..2").is_err());
        assert!(parse_range("8").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
