//! `fso-nmpc` command line: `run`, `validate`, `metrics` and `sweep`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 solver abort.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::scenario::{load_scenario_with_overrides, Scenario};
use crate::sim::{self, compute_metrics, run_closed_loop, Metrics, SimLog, SolverStats};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ABORT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fso-nmpc", version, about = "Communication-aware NMPC closed-loop simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop mission and write log.csv, metrics.txt and config.normalized.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a configuration and print its normalized form.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Recompute metrics from a log written by `run`.
    Metrics {
        /// Log file to read.
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run the Cartesian product of `--grid` values, one subdirectory each.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Grid axis `key=v1,v2,...` (repeatable).
        #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
        grid: Vec<String>,
        /// Concurrent runs; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario configuration; the built-in defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override `key=value` (repeatable), applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Gauss–Newton iterations per control period.
    #[arg(long)]
    pub rti_iters: Option<usize>,
    /// Mission duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Reserved; every run is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ScenarioArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(n) = self.rti_iters {
            o.push(format!("solver.rti_iters={n}"));
        }
        if let Some(d) = self.duration {
            o.push(format!("mission.duration={d}"));
        }
        o
    }

    fn load(&self, extra: &[String]) -> Result<Scenario, String> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
            None => String::new(),
        };
        let mut overrides = self.overrides();
        overrides.extend_from_slice(extra);
        load_scenario_with_overrides(&text, &overrides).map_err(|e| match &self.config {
            Some(p) => format!("{}: {e}", p.display()),
            None => e.to_string(),
        })
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { scenario, out } => cmd_run(&scenario, &out),
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Metrics { log, scenario } => cmd_metrics(&log, &scenario),
        Command::Sweep { scenario, out, grid, jobs } => cmd_sweep(&scenario, &out, &grid, jobs),
    }
}

fn cmd_validate(args: &ScenarioArgs) -> i32 {
    match args.load(&[]) {
        Ok(s) => {
            print!("{}", s.to_config_text());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn cmd_metrics(log_path: &Path, args: &ScenarioArgs) -> i32 {
    let scenario = match args.load(&[]) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let log = fs::File::open(log_path)
        .map_err(Error::from)
        .and_then(|f| sim::parse_csv(BufReader::new(f)));
    match log.and_then(|l| compute_metrics(&l, &scenario.optics)) {
        Ok(m) => {
            print!("{}", m.to_text());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}: {e}", log_path.display());
            EXIT_CONFIG
        }
    }
}

/// Outcome of one mission written to `out`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub metrics: Option<Metrics>,
    pub message: Option<String>,
}

/// Runs a validated scenario and writes its artefacts into `out`.
pub fn run_to_dir(scenario: &Scenario, out: &Path) -> RunOutcome {
    let fail = |code, msg: String| RunOutcome { exit_code: code, metrics: None, message: Some(msg) };
    if let Err(e) = fs::create_dir_all(out) {
        return fail(EXIT_CONFIG, format!("{}: {e}", out.display()));
    }
    let (log, abort) = match run_closed_loop(scenario) {
        Ok(log) => (log, None),
        Err(a) => {
            let msg = a.to_string();
            (*a.log, Some((a.time, msg)))
        }
    };
    let written = write_outputs(scenario, &log, abort.as_ref().map(|a| a.0), out);
    let metrics = written.as_ref().ok().and_then(|m| m.clone());
    match (abort, written) {
        (_, Err(e)) => fail(EXIT_CONFIG, format!("writing outputs: {e}")),
        (Some((_, msg)), Ok(_)) => RunOutcome { exit_code: EXIT_ABORT, metrics, message: Some(msg) },
        (None, Ok(_)) => RunOutcome { exit_code: EXIT_OK, metrics, message: None },
    }
}

fn write_outputs(scenario: &Scenario, log: &SimLog, aborted_at: Option<f64>, out: &Path) -> crate::Result<Option<Metrics>> {
    fs::write(out.join("config.normalized"), scenario.to_config_text())?;
    sim::write_csv_file(log, &out.join("log.csv"))?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "status = {}",
        match aborted_at {
            Some(t) => format!("aborted at {t}"),
            None => "completed".into(),
        }
    );
    let metrics = if log.records.is_empty() {
        None
    } else {
        let m = compute_metrics(log, &scenario.optics)?;
        text.push_str(&m.to_text());
        Some(m)
    };
    text.push_str(&SolverStats::from_log(log).to_text());
    fs::write(out.join("metrics.txt"), text)?;
    if let Some(m) = &metrics {
        fs::write(out.join("metrics.json"), m.to_json())?;
    }
    Ok(metrics)
}

fn cmd_run(args: &ScenarioArgs, out: &Path) -> i32 {
    let scenario = match args.load(&[]) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = run_to_dir(&scenario, out);
    if let Some(msg) = &outcome.message {
        eprintln!("error: {msg}");
    }
    if let Some(m) = &outcome.metrics {
        eprint!("{}", m.to_text());
    }
    outcome.exit_code
}

/// Parses `key=v1,v2,...` grid axes.
pub fn parse_grid(axes: &[String]) -> Result<Vec<(String, Vec<String>)>, String> {
    axes.iter()
        .map(|a| {
            let (k, vs) = a.split_once('=').ok_or_else(|| format!("grid axis `{a}` is not key=v1,v2,..."))?;
            let values: Vec<String> = vs.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
            Ok((k.trim().to_string(), values))
        })
        .collect()
}

/// Cartesian product of the axes, each point as a list of `key=value`.
pub fn grid_points(axes: &[(String, Vec<String>)]) -> Vec<Vec<String>> {
    let mut points = vec![Vec::new()];
    for (key, values) in axes {
        points = points
            .iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(format!("{key}={v}"));
                    q
                })
            })
            .collect();
    }
    points
}

fn cmd_sweep(args: &ScenarioArgs, out: &Path, grid: &[String], jobs: Option<usize>) -> i32 {
    let axes = match parse_grid(grid) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
        eprintln!("error: empty parameter grid");
        return EXIT_CONFIG;
    }
    let points = grid_points(&axes);
    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("error: {}: {e}", out.display());
        return EXIT_CONFIG;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, point)| match args.load(point) {
                Ok(s) => run_to_dir(&s, &out.join(format!("run_{i:03}"))),
                Err(e) => RunOutcome { exit_code: EXIT_CONFIG, metrics: None, message: Some(e) },
            })
            .collect()
    });

    let mut summary = String::from("run");
    for (k, _) in &axes {
        summary.push(',');
        summary.push_str(k);
    }
    summary.push_str(",exit_code");
    for k in Metrics::KEYS {
        summary.push(',');
        summary.push_str(k);
    }
    summary.push('\n');
    for (i, (point, o)) in points.iter().zip(&outcomes).enumerate() {
        let _ = write!(summary, "run_{i:03}");
        for kv in point {
            let _ = write!(summary, ",{}", kv.split_once('=').map_or("", |p| p.1));
        }
        let _ = write!(summary, ",{}", o.exit_code);
        match &o.metrics {
            Some(m) => m.values().iter().for_each(|v| {
                let _ = write!(summary, ",{v}");
            }),
            None => Metrics::KEYS.iter().for_each(|_| summary.push(',')),
        }
        summary.push('\n');
        if let Some(msg) = &o.message {
            eprintln!("run_{i:03}: {msg}");
        }
    }
    if let Err(e) = fs::write(out.join("summary.csv"), summary) {
        eprintln!("error: writing summary: {e}");
        return EXIT_CONFIG;
    }
    if outcomes.iter().any(|o| o.exit_code == EXIT_CONFIG) {
        EXIT_CONFIG
    } else if outcomes.iter().any(|o| o.exit_code == EXIT_ABORT) {
        EXIT_ABORT
    } else {
        EXIT_OK
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian() {
        let axes = parse_grid(&["a=1,2".into(), "b=x,y,z".into()]).unwrap();
        let pts = grid_points(&axes);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec!["a=1".to_string(), "b=x".to_string()]);
        assert_eq!(pts[5], vec!["a=2".to_string(), "b=z".to_string()]);
        assert!(parse_grid(&["novalue".into()]).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_cli(["fso-nmpc", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(run_cli(["fso-nmpc", "validate", "--set", "bogus.key=1"]), EXIT_CONFIG);
        assert_eq!(run_cli(["fso-nmpc", "validate", "--set", "rates.control_hz=300"]), EXIT_CONFIG);
        assert_eq!(run_cli(["fso-nmpc", "validate"]), EXIT_OK);
    }
}
