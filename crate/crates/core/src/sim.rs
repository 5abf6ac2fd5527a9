//! Multirate closed loop: plant at `plant_hz`, one real-time iteration every
//! `plant_hz / control_hz` plant steps, reference refresh every
//! `plant_hz / reference_hz` steps. Rotor accelerations are held between
//! controller updates. Also holds metrics and the CSV log format.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::time::Instant;

use nalgebra::{DVector, Vector3};
use serde::Serialize;

use crate::dynamics::{ControlRate, ExtendedState, GtmrModel};
use crate::ocp::{output_map, OcpProblem, OutputVector, StageData, NY};
use crate::optics::{self, LinkSample, OpticalParams};
use crate::scenario::{ReceiverGimbal, Scenario};
use crate::solver::rti::{
    advance_warm_start, cold_solve, predicted_margins, rti_step, OcpSolution, SolveStatus,
};
use crate::{Error, Result};

pub const CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub time: f64,
    pub state: ExtendedState,
    /// Rotor accelerations applied over the following plant step.
    pub control: ControlRate,
    /// Rotor speeds the latest solve predicts one shooting interval ahead.
    pub commanded_speeds: DVector<f64>,
    pub output: OutputVector,
    pub reference: OutputVector,
    pub link: LinkSample,
    pub rx_axis: Vector3<f64>,
    /// m, ‖p − p_O‖ − d_O per obstacle
    pub clearances: Vec<f64>,
    /// First-node slacks of the latest solve.
    pub slacks: Vec<f64>,
    pub kkt: f64,
    /// s, zero unless wall-time recording is enabled
    pub solve_time: f64,
}

/// Per-solve statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub time: f64,
    pub status: SolveStatus,
    pub kkt: f64,
    pub qp_iterations: usize,
    pub sqp_iterations: usize,
    pub cost: f64,
    /// Smallest range margin over nodes 1..N of the predicted trajectory.
    pub range_margin: f64,
    /// Smallest c_δ − cos ψ_C over nodes 1..N.
    pub cone_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub n_rotors: usize,
    pub n_obstacles: usize,
    pub plant_hz: u32,
    pub speed_bounds: (f64, f64),
    pub accel_bounds: (f64, f64),
    pub records: Vec<SimRecord>,
    pub solves: Vec<SolveRecord>,
    pub reference_refreshes: usize,
}

impl SimLog {
    fn new(scenario: &Scenario) -> Self {
        let g = &scenario.gtmr;
        Self {
            n_rotors: g.n_rotors,
            n_obstacles: scenario.n_obstacles(),
            plant_hz: scenario.rates.plant_hz,
            speed_bounds: (g.speed_min, g.speed_max),
            accel_bounds: (g.accel_min, g.accel_max),
            records: Vec::new(),
            solves: Vec::new(),
            reference_refreshes: 0,
        }
    }

    pub fn duration(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.time)
    }
}

/// Closed-loop failure with the log recorded up to the failing step.
#[derive(Debug)]
pub struct SimAbort {
    pub time: f64,
    pub error: Error,
    pub log: Box<SimLog>,
}

impl std::fmt::Display for SimAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "closed loop aborted at t = {} s: {}", self.time, self.error)
    }
}

impl std::error::Error for SimAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<SimAbort> for Error {
    fn from(a: SimAbort) -> Self {
        Error::Aborted { time: a.time, source: Box::new(a.error) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    Nmpc,
    /// Rotor accelerations held at zero; the plant runs open loop.
    Disabled,
}

/// Reference samples latched by the last refresh on a T_s grid.
struct LatchedReference {
    start: f64,
    step: f64,
    samples: Vec<[f64; NY]>,
}

impl LatchedReference {
    fn new(scenario: &Scenario, t: f64) -> Self {
        let n = scenario.horizon_steps + 1;
        let samples = (0..=n)
            .map(|j| scenario.stage_data(t + j as f64 * scenario.horizon_step).reference.to_array())
            .collect();
        Self { start: t, step: scenario.horizon_step, samples }
    }

    fn at(&self, t: f64) -> OutputVector {
        let s = ((t - self.start) / self.step).max(0.0);
        let last = self.samples.len() - 1;
        let j = (s.floor() as usize).min(last);
        let f = if j == last { 0.0 } else { s - j as f64 };
        let (a, b) = (&self.samples[j], &self.samples[(j + 1).min(last)]);
        let mut y = [0.0; NY];
        for i in 0..NY {
            y[i] = if f == 0.0 { a[i] } else { a[i] + (b[i] - a[i]) * f };
        }
        OutputVector::from_array(&y)
    }
}

fn build_stages(scenario: &Scenario, latched: &LatchedReference, t: f64) -> Vec<StageData> {
    (0..=scenario.horizon_steps)
        .map(|k| {
            let tk = t + k as f64 * scenario.horizon_step;
            let mut stage = scenario.stage_data(tk);
            stage.reference = latched.at(tk);
            stage
        })
        .collect()
}

fn clearances(x: &ExtendedState, scenario: &Scenario, t: f64) -> Vec<f64> {
    scenario
        .obstacles
        .iter()
        .map(|o| (x.body.position - o.position(t)).norm() - o.radius)
        .collect()
}

/// Runs the default closed loop with the NMPC controller.
pub fn run_closed_loop(scenario: &Scenario) -> std::result::Result<SimLog, SimAbort> {
    simulate(scenario, Controller::Nmpc)
}

pub fn simulate(scenario: &Scenario, controller: Controller) -> std::result::Result<SimLog, SimAbort> {
    let mut log = SimLog::new(scenario);
    let abort = |time: f64, error: Error, log: SimLog| SimAbort { time, error, log: Box::new(log) };
    if let Err(e) = scenario.validate() {
        return Err(abort(0.0, e, log));
    }
    let model = match GtmrModel::new(scenario.gtmr.clone()) {
        Ok(m) => m,
        Err(e) => return Err(abort(0.0, e, log)),
    };

    let rates = scenario.rates;
    let plant_hz = f64::from(rates.plant_hz);
    let dt = 1.0 / plant_hz;
    let steps = (scenario.duration * plant_hz).round() as usize;
    let ctrl_every = (rates.plant_hz / rates.control_hz) as usize;
    let ref_every = (rates.plant_hz / rates.reference_hz) as usize;
    let n_rotors = scenario.gtmr.n_rotors;

    let x0 = scenario.mrav_initial();
    let mut x = x0.to_vector();
    let mut gimbal = match ReceiverGimbal::pointing_at(
        &scenario.ugv_initial,
        &optics::transmitter_position(&x0, &scenario.optics),
        scenario.optics.rx_lag,
    ) {
        Ok(g) => g,
        Err(e) => return Err(abort(0.0, e, log)),
    };

    let mut problem = OcpProblem {
        horizon_steps: scenario.horizon_steps,
        step: scenario.horizon_step,
        initial_state: x0.clone(),
        stages: Vec::new(),
        weights: scenario.weights.clone(),
        model: model.clone(),
        optics: scenario.optics.clone(),
        safety_margin: scenario.safety_margin + scenario.safety_backoff,
    };
    let rti_config = scenario.rti_config();
    let cold_config = scenario.cold_start_config();

    let mut latched = LatchedReference::new(scenario, 0.0);
    let mut solution: Option<OcpSolution> = None;
    let mut last_solve_time = 0.0;
    let mut held = ControlRate::zeros(n_rotors);
    let mut commanded = x0.rotor_speeds.clone();
    let mut slacks = vec![0.0; scenario.n_obstacles()];
    let mut kkt = 0.0;
    let mut solve_time = 0.0;

    for i in 0..=steps {
        let t = i as f64 / plant_hz;
        let state = ExtendedState::from_slice(x.as_slice());
        let active = i < steps || i == 0;

        if active && i % ref_every == 0 {
            latched = LatchedReference::new(scenario, t);
            log.reference_refreshes += 1;
        }

        if active && i % ctrl_every == 0 && controller == Controller::Nmpc {
            problem.initial_state = state.clone();
            problem.stages = build_stages(scenario, &latched, t);
            let clock = scenario.record_wall_time.then(Instant::now);
            let result = match &solution {
                None => cold_solve(&problem, &cold_config),
                Some(prev) => {
                    let warm = advance_warm_start(prev, (t - last_solve_time) / scenario.horizon_step, &state);
                    rti_step(&problem, &warm, &rti_config)
                }
            };
            let sol = match result {
                Ok(s) => s,
                Err(e) => return Err(abort(t, e, log)),
            };
            solve_time = clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
            let (range_margin, cone_margin) = match predicted_margins(&problem, &sol) {
                Ok(m) => m,
                Err(e) => return Err(abort(t, e, log)),
            };
            log.solves.push(SolveRecord {
                time: t,
                status: sol.status,
                kkt: sol.kkt_residual,
                qp_iterations: sol.qp_iterations,
                sqp_iterations: sol.sqp_iterations,
                cost: sol.cost,
                range_margin,
                cone_margin,
            });
            held = sol.controls[0].clone();
            commanded = sol.states[1].rotor_speeds.clone();
            slacks = sol.slacks[0].iter().copied().collect();
            kkt = sol.kkt_residual;
            last_solve_time = t;
            solution = Some(sol);
        }

        let stage = scenario.stage_data(t);
        let output = match output_map(&state, &stage, &model, &scenario.optics) {
            Ok(y) => y,
            Err(e) => return Err(abort(t, e, log)),
        };
        let link = match link_sample(t, &output, &state, &stage, &gimbal.axis, &scenario.optics) {
            Ok(l) => l,
            Err(e) => return Err(abort(t, e, log)),
        };
        log.records.push(SimRecord {
            time: t,
            clearances: clearances(&state, scenario, t),
            state,
            control: held.clone(),
            commanded_speeds: commanded.clone(),
            output,
            reference: latched.at(t),
            link,
            rx_axis: gimbal.axis,
            slacks: slacks.clone(),
            kkt,
            solve_time,
        });

        if i == steps {
            break;
        }
        x = match model.rk4(x.as_slice(), held.rotor_accels.as_slice(), dt) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => next,
            Ok(_) => return Err(abort(t, Error::invalid("plant state", "became non-finite"), log)),
            Err(e) => return Err(abort(t, e, log)),
        };
        let t_next = (i + 1) as f64 / plant_hz;
        let rx = scenario.stage_data(t_next).rx_pos;
        let tx = optics::transmitter_position(&ExtendedState::from_slice(x.as_slice()), &scenario.optics);
        if let Err(e) = gimbal.update(&rx, &tx, dt) {
            return Err(abort(t_next, e, log));
        }
    }
    Ok(log)
}

fn link_sample(
    t: f64,
    y: &OutputVector,
    x: &ExtendedState,
    stage: &StageData,
    rx_axis: &Vector3<f64>,
    params: &OpticalParams,
) -> Result<LinkSample> {
    let d_c = optics::transmitter_position(x, params) - stage.rx_pos;
    let i_tx = optics::tx_indicator(y.cos_delta, params);
    let i_rx = optics::rx_indicator(rx_axis, &d_c, params)?;
    Ok(LinkSample {
        time: t,
        cos_delta: y.cos_delta,
        cos_delta_rate: y.cos_delta_rate,
        range: y.range,
        i_tx,
        i_rx,
        i_link: optics::link_indicator(i_tx, i_rx, y.range, params),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Ī over the final `rx_window` seconds.
    pub mean_link_quality: f64,
    /// Fraction of records with the link up.
    pub link_uptime_fraction: f64,
    pub rms_velocity_error: f64,
    pub rms_range_error: f64,
    pub min_obstacle_clearance: f64,
    pub max_slack: f64,
    pub rotor_bound_violations: usize,
    pub cone_violations_duration: f64,
    /// Fraction of records with the range inside [d̲_C, d̄_C].
    pub range_satisfied_fraction: f64,
    /// Fraction of records with c_δ ≥ cos ψ_C.
    pub cone_satisfied_fraction: f64,
}

pub fn compute_metrics(log: &SimLog, optics: &OpticalParams) -> Result<Metrics> {
    let recs = &log.records;
    if recs.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n = recs.len() as f64;
    let samples: Vec<LinkSample> = recs.iter().map(|r| r.link).collect();
    let t_end = log.duration();
    let mean_link_quality = if recs.len() == 1 {
        f64::from(samples[0].i_link)
    } else {
        optics::moving_average(&samples, t_end, optics.rx_window)?
    };
    let tol = 1e-6;
    let (smin, smax) = log.speed_bounds;
    let (amin, amax) = log.accel_bounds;
    let rotor_bound_violations = recs
        .iter()
        .filter(|r| {
            r.state.rotor_speeds.iter().any(|s| *s < smin - tol || *s > smax + tol)
                || r.control.rotor_accels.iter().any(|a| *a < amin - tol || *a > amax + tol)
        })
        .count();
    let cone_ok = |r: &SimRecord| r.output.cos_delta >= optics.cone_cos_threshold;
    let cone_violations_duration = recs
        .windows(2)
        .filter(|w| !cone_ok(&w[0]))
        .map(|w| w[1].time - w[0].time)
        .fold(0.0, |a, b| a + b);
    let frac = |pred: &dyn Fn(&SimRecord) -> bool| recs.iter().filter(|r| pred(r)).count() as f64 / n;
    Ok(Metrics {
        mean_link_quality,
        link_uptime_fraction: frac(&|r| r.link.i_link == 1),
        rms_velocity_error: (recs
            .iter()
            .map(|r| (r.output.velocity - r.reference.velocity).norm_squared())
            .sum::<f64>()
            / n)
            .sqrt(),
        rms_range_error: (recs.iter().map(|r| (r.output.range - r.reference.range).powi(2)).sum::<f64>() / n).sqrt(),
        min_obstacle_clearance: recs
            .iter()
            .flat_map(|r| r.clearances.iter().copied())
            .fold(f64::INFINITY, f64::min),
        max_slack: recs.iter().flat_map(|r| r.slacks.iter().copied()).fold(0.0, f64::max),
        rotor_bound_violations,
        cone_violations_duration,
        range_satisfied_fraction: frac(&|r| r.output.range >= optics.range_min && r.output.range <= optics.range_max),
        cone_satisfied_fraction: frac(&cone_ok),
    })
}

impl Metrics {
    /// Values in [`Self::KEYS`] order.
    pub fn values(&self) -> Vec<String> {
        vec![
            self.mean_link_quality.to_string(),
            self.link_uptime_fraction.to_string(),
            self.rms_velocity_error.to_string(),
            self.rms_range_error.to_string(),
            self.min_obstacle_clearance.to_string(),
            self.max_slack.to_string(),
            self.rotor_bound_violations.to_string(),
            self.cone_violations_duration.to_string(),
            self.range_satisfied_fraction.to_string(),
            self.cone_satisfied_fraction.to_string(),
        ]
    }

    /// Flat `key = value` report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in Self::KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }

    pub const KEYS: &'static [&'static str] = &[
        "mean_link_quality",
        "link_uptime_fraction",
        "rms_velocity_error",
        "rms_range_error",
        "min_obstacle_clearance",
        "max_slack",
        "rotor_bound_violations",
        "cone_violations_duration",
        "range_satisfied_fraction",
        "cone_satisfied_fraction",
    ];
}

/// Summary of the per-solve records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverStats {
    pub solves: usize,
    pub converged: usize,
    pub infeasible_qp: usize,
    pub max_kkt: f64,
    pub mean_qp_iterations: f64,
    pub min_predicted_range_margin: f64,
    pub min_predicted_cone_margin: f64,
}

impl SolverStats {
    /// `solver.<field> = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "solver.solves = {}", self.solves);
        let _ = writeln!(out, "solver.converged = {}", self.converged);
        let _ = writeln!(out, "solver.infeasible_qp = {}", self.infeasible_qp);
        let _ = writeln!(out, "solver.max_kkt = {}", self.max_kkt);
        let _ = writeln!(out, "solver.mean_qp_iterations = {}", self.mean_qp_iterations);
        let _ = writeln!(out, "solver.min_predicted_range_margin = {}", self.min_predicted_range_margin);
        let _ = writeln!(out, "solver.min_predicted_cone_margin = {}", self.min_predicted_cone_margin);
        out
    }

    pub fn from_log(log: &SimLog) -> Self {
        let s = &log.solves;
        let n = s.len().max(1) as f64;
        Self {
            solves: s.len(),
            converged: s.iter().filter(|r| r.status == SolveStatus::Converged).count(),
            infeasible_qp: s.iter().filter(|r| r.status == SolveStatus::InfeasibleQp).count(),
            max_kkt: s.iter().map(|r| r.kkt).fold(0.0, f64::max),
            mean_qp_iterations: s.iter().map(|r| r.qp_iterations as f64).sum::<f64>() / n,
            min_predicted_range_margin: s.iter().map(|r| r.range_margin).fold(f64::INFINITY, f64::min),
            min_predicted_cone_margin: s.iter().map(|r| r.cone_margin).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Column names in file order.
pub fn csv_columns(n_rotors: usize, n_obstacles: usize) -> Vec<String> {
    let mut c = vec!["time".to_string()];
    let xyz = ["x", "y", "z"];
    let triple = |c: &mut Vec<String>, prefix: &str, names: [&str; 3]| {
        c.extend(names.iter().map(|s| format!("{prefix}_{s}")));
    };
    triple(&mut c, "p", xyz);
    triple(&mut c, "eta", ["roll", "pitch", "yaw"]);
    triple(&mut c, "v", xyz);
    triple(&mut c, "omega", xyz);
    c.extend((1..=n_rotors).map(|i| format!("gamma_{i}")));
    c.extend((1..=n_rotors).map(|i| format!("u_{i}")));
    c.extend((1..=n_rotors).map(|i| format!("gamma_cmd_{i}")));
    for prefix in ["y", "yref"] {
        triple(&mut c, &format!("{prefix}_p"), xyz);
        triple(&mut c, &format!("{prefix}_v"), xyz);
        triple(&mut c, &format!("{prefix}_a"), xyz);
        c.push(format!("{prefix}_cos_delta"));
        c.push(format!("{prefix}_cos_delta_rate"));
        c.push(format!("{prefix}_range"));
    }
    c.extend(["i_tx", "i_rx", "i_link"].map(String::from));
    triple(&mut c, "rx_axis", xyz);
    c.extend((1..=n_obstacles).map(|j| format!("clearance_{j}")));
    c.extend((1..=n_obstacles).map(|j| format!("slack_{j}")));
    c.push("kkt".into());
    c.push("solve_time".into());
    c
}

/// Nine significant digits in positional notation; scientific only for
/// magnitudes outside [1e-30, 1e21).
fn fmt9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let e = v.abs().log10().floor() as i32;
    if !(-30..21).contains(&e) {
        return format!("{v:.8e}");
    }
    let decimals = (8 - e).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn export_csv(log: &SimLog, mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "# fso-nmpc log v{CSV_VERSION} n_rotors={} n_obstacles={} plant_hz={} speed_bounds={},{} accel_bounds={},{}",
        log.n_rotors,
        log.n_obstacles,
        log.plant_hz,
        log.speed_bounds.0,
        log.speed_bounds.1,
        log.accel_bounds.0,
        log.accel_bounds.1
    )?;
    writeln!(w, "{}", csv_columns(log.n_rotors, log.n_obstacles).join(","))?;
    let mut line = String::new();
    for r in &log.records {
        line.clear();
        let mut push = |v: f64| {
            if !line.is_empty() {
                line.push(',');
            }
            line.push_str(&fmt9(v));
        };
        push(r.time);
        for v in r.state.to_vector().iter() {
            push(*v);
        }
        r.control.rotor_accels.iter().for_each(|v| push(*v));
        r.commanded_speeds.iter().for_each(|v| push(*v));
        r.output.to_array().iter().for_each(|v| push(*v));
        r.reference.to_array().iter().for_each(|v| push(*v));
        for i in [r.link.i_tx, r.link.i_rx, r.link.i_link] {
            push(f64::from(i));
        }
        r.rx_axis.iter().for_each(|v| push(*v));
        r.clearances.iter().for_each(|v| push(*v));
        r.slacks.iter().for_each(|v| push(*v));
        push(r.kkt);
        push(r.solve_time);
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_csv_file(log: &SimLog, path: &std::path::Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    export_csv(log, &mut f)?;
    f.flush()?;
    Ok(())
}

fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    header
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Csv(format!("header lacks `{key}`")))
}

fn pair(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Csv(format!("malformed bounds `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

/// Reads a log written by [`export_csv`]. Per-solve records are not part of
/// the file and come back empty.
pub fn parse_csv(r: impl BufRead) -> Result<SimLog> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Csv("empty file".into()))??;
    let version = header
        .strip_prefix("# fso-nmpc log v")
        .and_then(|rest| rest.split_whitespace().next())
        .ok_or_else(|| Error::Csv("missing version header".into()))?;
    if version != CSV_VERSION.to_string() {
        return Err(Error::Csv(format!("unsupported log version {version}")));
    }
    let parse_usize = |k: &str| -> Result<usize> {
        header_field(&header, k)?.parse().map_err(|_| Error::Csv(format!("bad `{k}`")))
    };
    let n_rotors = parse_usize("n_rotors")?;
    let n_obstacles = parse_usize("n_obstacles")?;
    let plant_hz = parse_usize("plant_hz")? as u32;
    let speed_bounds = pair(header_field(&header, "speed_bounds")?)?;
    let accel_bounds = pair(header_field(&header, "accel_bounds")?)?;
    let columns = csv_columns(n_rotors, n_obstacles);
    let names = lines.next().ok_or_else(|| Error::Csv("missing column row".into()))??;
    if names.split(',').ne(columns.iter().map(String::as_str)) {
        return Err(Error::Csv("column row does not match the schema".into()));
    }
    let nx = 12 + n_rotors;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Csv(format!("data row {}: {e}", i + 1)))?;
        if row.len() != columns.len() {
            return Err(Error::Csv(format!(
                "data row {} has {} fields, expected {}",
                i + 1,
                row.len(),
                columns.len()
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &row[at..at + n];
            at += n;
            s
        };
        let time = take(1)[0];
        let state = ExtendedState::from_slice(take(nx));
        let control = ControlRate::from_slice(take(n_rotors));
        let commanded_speeds = DVector::from_column_slice(take(n_rotors));
        let mut y = [0.0; NY];
        y.copy_from_slice(take(NY));
        let output = OutputVector::from_array(&y);
        y.copy_from_slice(take(NY));
        let reference = OutputVector::from_array(&y);
        let ind = take(3);
        let rx_axis = Vector3::from_column_slice(take(3));
        let clearances = take(n_obstacles).to_vec();
        let slacks = take(n_obstacles).to_vec();
        let kkt = take(1)[0];
        let solve_time = take(1)[0];
        records.push(SimRecord {
            time,
            link: LinkSample {
                time,
                cos_delta: output.cos_delta,
                cos_delta_rate: output.cos_delta_rate,
                range: output.range,
                i_tx: ind[0] as u8,
                i_rx: ind[1] as u8,
                i_link: ind[2] as u8,
            },
            state,
            control,
            commanded_speeds,
            output,
            reference,
            rx_axis,
            clearances,
            slacks,
            kkt,
            solve_time,
        });
    }
    Ok(SimLog {
        n_rotors,
        n_obstacles,
        plant_hz,
        speed_bounds,
        accel_bounds,
        records,
        solves: Vec::new(),
        reference_refreshes: 0,
    })
}
