use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use roboport::geometry::RobotId;
use roboport::monitor::{check_trace, params_for, Report, RobotParams};
use roboport::platforms::PlatformKind;
use roboport::sim::{export_csv, run, Scenario};
use roboport::trace::{EventKind, Trace};

const EXIT_USAGE: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_FAULT: u8 = 3;

/// Deterministic simulator and trace checker for portable robot programs.
#[derive(Parser)]
#[command(name = "roboport", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Root seed. Required unless the scenario sets one.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also check the trace and exit 2 on any violation.
        #[arg(long)]
        check: bool,
    },
    /// Check a trace against D1, D2, F1, F2 and A1.
    Check {
        trace: PathBuf,
        /// Write the full per-epoch report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Dwell time override, `SECONDS` for every robot or `ROBOT=SECONDS` for one.
        #[arg(long, value_name = "[ROBOT=]SECONDS", value_parser = parse_override)]
        dt: Vec<Override>,
        /// Quantization distance override, `METRES` or `ROBOT=METRES`.
        #[arg(long, value_name = "[ROBOT=]METRES", value_parser = parse_override)]
        qd: Vec<Override>,
    },
    /// Convert a trace to one CSV row per pose sample.
    Export {
        #[arg(long)]
        csv: PathBuf,
        trace: PathBuf,
    },
    /// Print a bundled scenario.
    Demo {
        app: DemoApp,
        #[arg(long, value_enum, default_value = "diffdrive")]
        platform: Platform,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoApp {
    Formation,
    Race,
    Search,
    Waypoints,
}

#[derive(Clone, Copy, ValueEnum)]
enum Platform {
    Quad,
    Diffdrive,
}

impl From<Platform> for PlatformKind {
    fn from(p: Platform) -> PlatformKind {
        match p {
            Platform::Quad => PlatformKind::Quad,
            Platform::Diffdrive => PlatformKind::Diffdrive,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Override {
    robot: Option<u32>,
    value: f64,
}

fn parse_override(s: &str) -> Result<Override, String> {
    let (robot, v) = match s.split_once('=') {
        Some((r, v)) => (Some(r.trim().parse::<u32>().map_err(|e| format!("robot id {r:?}: {e}"))?), v),
        None => (None, s),
    };
    let value: f64 = v.trim().parse().map_err(|e| format!("{v:?}: {e}"))?;
    if !(value.is_finite() && value > 0.0) {
        return Err(format!("{value} must be positive"));
    }
    Ok(Override { robot, value })
}

/// Header parameters with the command-line overrides applied, later flags winning.
fn overridden(tr: &Trace, dt: &[Override], qd: &[Override]) -> Result<BTreeMap<RobotId, RobotParams>, String> {
    let mut m = params_for(tr, &BTreeMap::new());
    for (list, set) in [(dt, (|p: &mut RobotParams, v| p.d_t = v) as fn(&mut RobotParams, f64)), (qd, |p, v| p.q_d = v)] {
        for o in list {
            match o.robot {
                Some(r) => set(m.get_mut(&RobotId(r)).ok_or(format!("robot {r} is not in the trace"))?, o.value),
                None => m.values_mut().for_each(|p| set(p, o.value)),
            }
        }
    }
    Ok(m)
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn read_trace(p: &Path) -> Result<Trace, String> {
    let f = File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
    Trace::read_from(BufReader::new(f)).map_err(|e| format!("{}: {e}", p.display()))
}

fn fault_count(tr: &Trace) -> usize {
    tr.events.iter().filter(|e| matches!(e.kind, EventKind::Fault { .. })).count()
}

fn check(tr: &Trace, overrides: &BTreeMap<RobotId, RobotParams>) -> Result<Report, String> {
    check_trace(tr, overrides).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.cmd {
        Cmd::Run { scenario, seed, out, check: do_check } => {
            let s = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let r = match run(&s, seed) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let written = File::create(&out).and_then(|f| {
                let mut w = BufWriter::new(f);
                r.trace.write_to(&mut w)?;
                w.flush()
            });
            if let Err(e) = written {
                return fail(format!("{}: {e}", out.display()));
            }
            eprintln!("{} events written to {}", r.trace.events.len(), out.display());
            for f in &r.faults {
                match f.robot {
                    Some(r) => eprintln!("fault at {} (robot {}): {}", f.t, r.0, f.message),
                    None => eprintln!("fault at {}: {}", f.t, f.message),
                }
            }
            if do_check {
                let rep = match check(&r.trace, &BTreeMap::new()) {
                    Ok(rep) => rep,
                    Err(e) => return fail(e),
                };
                print!("{}", rep.summary());
                if rep.any_fail() {
                    return ExitCode::from(EXIT_VIOLATION);
                }
            }
            if r.faults.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAULT)
            }
        }
        Cmd::Check { trace, report, dt, qd } => {
            let tr = match read_trace(&trace) {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            let params = match overridden(&tr, &dt, &qd) {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            let rep = match check(&tr, &params) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            print!("{}", rep.summary());
            if let Some(p) = report {
                let json = serde_json::to_string_pretty(&rep).expect("report serializes");
                if let Err(e) = std::fs::write(&p, json + "\n") {
                    return fail(format!("{}: {e}", p.display()));
                }
            }
            let faults = fault_count(&tr);
            if faults > 0 {
                println!("{faults} runtime faults in trace");
            }
            if rep.any_fail() {
                ExitCode::from(EXIT_VIOLATION)
            } else if faults > 0 {
                ExitCode::from(EXIT_FAULT)
            } else {
                ExitCode::SUCCESS
            }
        }
        Cmd::Export { csv, trace } => {
            let tr = match read_trace(&trace) {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            let f = match File::create(&csv) {
                Ok(f) => f,
                Err(e) => return fail(format!("{}: {e}", csv.display())),
            };
            match export_csv(&tr, BufWriter::new(f)) {
                Ok(n) => {
                    eprintln!("{n} rows written to {}", csv.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Demo { app, platform, out, seed } => {
            let name = match app {
                DemoApp::Formation => "formation",
                DemoApp::Race => "race",
                DemoApp::Search => "search",
                DemoApp::Waypoints => "waypoints",
            };
            let mut s = roboport::apps::demo(name, platform.into()).expect("every demo app is bundled");
            s.seed = Some(seed.unwrap_or(1));
            let text = s.to_toml();
            match out {
                Some(p) => match std::fs::write(&p, text) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(format!("{}: {e}", p.display())),
                },
                None => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
            }
        }
    }
}
