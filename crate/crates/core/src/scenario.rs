//! Scenario configuration, ground-vehicle path, obstacle motion and receiver
//! pointing.
//!
//! The configuration format is line-oriented UTF-8 text:
//!
//! ```text
//! # comment
//! schema_version = 1
//! mission.duration = 26
//! obstacle.2.window = 6, 10
//! ugv.waypoints = -3,-3,0 @ 0; 3,-3,0 @ 6.5
//! ```
//!
//! Every key is optional; missing keys take the inspection-experiment
//! defaults. Unknown or repeated keys are errors. [`Scenario::to_config_text`]
//! writes the canonical form with every key in a fixed order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::dynamics::{ExtendedState, GtmrParams, RigidBodyState};
use crate::ocp::{OcpWeights, OutputVector, StageData};
use crate::optics::OpticalParams;
use crate::solver::rti::SolverConfig;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rates {
    pub reference_hz: u32,
    pub control_hz: u32,
    pub plant_hz: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Vector3<f64>,
    /// s
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub start_pos: Vector3<f64>,
    pub end_pos: Vector3<f64>,
    /// s, [t_a, t_b]
    pub motion_window: (f64, f64),
    /// m, d_O
    pub radius: f64,
}

impl Obstacle {
    pub fn fixed(position: Vector3<f64>, radius: f64) -> Self {
        Self {
            start_pos: position,
            end_pos: position,
            motion_window: (0.0, 0.0),
            radius,
        }
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        let (ta, tb) = self.motion_window;
        if t <= ta {
            self.start_pos
        } else if t >= tb {
            self.end_pos
        } else {
            let s = (t - ta) / (tb - ta);
            self.start_pos + (self.end_pos - self.start_pos) * s
        }
    }
}

/// Initial rotor speed of the aerial vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotorInit {
    Hover,
    Speed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// s
    pub duration: f64,
    /// m, recorded only
    pub workspace: Vector3<f64>,
    pub ugv_initial: Vector3<f64>,
    pub ugv_path: Vec<Waypoint>,
    pub mrav_initial_body: RigidBodyState,
    pub mrav_initial_rotors: RotorInit,
    /// m, reference position relative to the ground vehicle
    pub mrav_ref_offset: Vector3<f64>,
    pub obstacles: Vec<Obstacle>,
    pub gtmr: GtmrParams,
    pub optics: OpticalParams,
    pub weights: OcpWeights,
    /// m, d_safe
    pub safety_margin: f64,
    /// m, added to the obstacle bound inside the controller only, so the
    /// plant stays clear between solves
    pub safety_backoff: f64,
    pub rates: Rates,
    pub horizon_steps: usize,
    /// s, T_s
    pub horizon_step: f64,
    /// Gauss–Newton iterations per control period.
    pub rti_iters: usize,
    /// Line-searched iterations of the initial solve.
    pub cold_start_iters: usize,
    pub solver: SolverConfig,
    /// Record solver wall time in the log (makes logs non-reproducible).
    pub record_wall_time: bool,
}

fn square_path(half: f64, z: f64, period: f64) -> Vec<Waypoint> {
    let corners = [(-half, -half), (half, -half), (half, half), (-half, half), (-half, -half)];
    corners
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Waypoint {
            position: Vector3::new(x, y, z),
            time: period * i as f64 / 4.0,
        })
        .collect()
}

impl Default for Scenario {
    /// The inspection experiment: hexarotor hovering next to a ground vehicle
    /// that drives a 6 m square in 26 s, one static and two moving obstacles.
    fn default() -> Self {
        let gtmr = GtmrParams::tilted_hexarotor();
        let n_rotors = gtmr.n_rotors;
        Self {
            duration: 26.0,
            workspace: Vector3::new(5.0, 5.0, 2.0),
            ugv_initial: Vector3::new(-3.0, -3.0, 0.0),
            ugv_path: square_path(3.0, 0.0, 26.0),
            mrav_initial_body: RigidBodyState::at_rest(Vector3::new(-3.25, -3.25, 1.0)),
            mrav_initial_rotors: RotorInit::Hover,
            mrav_ref_offset: Vector3::new(0.0, 0.0, 1.0),
            obstacles: vec![
                Obstacle::fixed(Vector3::new(1.5, -3.0, 0.75), 0.25),
                Obstacle {
                    start_pos: Vector3::new(5.0, 1.0, 2.0),
                    end_pos: Vector3::new(2.0, -1.0, 0.5),
                    motion_window: (6.0, 10.0),
                    radius: 0.25,
                },
                Obstacle {
                    start_pos: Vector3::new(-2.0, 1.5, 0.5),
                    end_pos: Vector3::new(0.0, -3.0, 2.0),
                    motion_window: (18.0, 21.0),
                    radius: 0.25,
                },
            ],
            gtmr,
            optics: OpticalParams::default(),
            weights: OcpWeights::closed_loop(n_rotors, 3),
            safety_margin: 0.25,
            safety_backoff: 0.002,
            rates: Rates {
                reference_hz: 200,
                control_hz: 500,
                plant_hz: 1000,
            },
            horizon_steps: 50,
            horizon_step: 0.015,
            rti_iters: 1,
            cold_start_iters: 50,
            solver: SolverConfig::default(),
            record_wall_time: false,
        }
    }
}

impl Scenario {
    pub fn mrav_initial(&self) -> ExtendedState {
        let n = self.gtmr.n_rotors;
        let speed = match self.mrav_initial_rotors {
            RotorInit::Hover => self.gtmr.hover_speed(),
            RotorInit::Speed(s) => s,
        };
        ExtendedState {
            body: self.mrav_initial_body.clone(),
            rotor_speeds: nalgebra::DVector::from_element(n, speed),
        }
    }

    pub fn n_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    /// Configuration used by every control-period solve.
    pub fn rti_config(&self) -> SolverConfig {
        SolverConfig {
            max_sqp_iters: self.rti_iters,
            line_search: false,
            ..self.solver
        }
    }

    /// Configuration of the initial line-searched solve.
    pub fn cold_start_config(&self) -> SolverConfig {
        SolverConfig {
            max_sqp_iters: self.cold_start_iters,
            max_qp_iters: self.solver.max_qp_iters.max(SolverConfig::cold_start().max_qp_iters),
            line_search: true,
            ..self.solver
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::validation(field, reason));
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("mission.duration", "must be finite and non-negative");
        }
        let Rates { reference_hz, control_hz, plant_hz } = self.rates;
        if reference_hz == 0 || control_hz == 0 || plant_hz == 0 {
            return bad("rates", "all rates must be positive");
        }
        if plant_hz < control_hz {
            return bad("rates", "need plant_hz ≥ control_hz");
        }
        if plant_hz % control_hz != 0 || plant_hz % reference_hz != 0 {
            return bad("rates", "plant_hz must be an integer multiple of control_hz and reference_hz");
        }
        if control_hz < reference_hz {
            return bad("rates", "need control_hz ≥ reference_hz");
        }
        let steps = self.duration * plant_hz as f64;
        if (steps - steps.round()).abs() > 1e-9 {
            return bad("mission.duration", "must be a whole number of plant steps");
        }
        if self.horizon_steps == 0 {
            return bad("horizon.steps", "must be at least 1");
        }
        if !(self.horizon_step > 0.0) {
            return bad("horizon.step", "must be positive");
        }
        if self.rti_iters == 0 || self.cold_start_iters == 0 {
            return bad("solver iterations", "must be at least 1");
        }
        if !(self.safety_margin >= 0.0) {
            return bad("safety.margin", "must be non-negative");
        }
        if !(self.safety_backoff >= 0.0) {
            return bad("safety.backoff", "must be non-negative");
        }
        if self.ugv_path.is_empty() {
            return bad("ugv.waypoints", "need at least one waypoint");
        }
        if self.ugv_path[0].time != 0.0 {
            return bad("ugv.waypoints", "first waypoint must be at t = 0");
        }
        if self.ugv_path[0].position != self.ugv_initial {
            return bad("ugv.waypoints", "first waypoint must coincide with ugv.initial");
        }
        if self.ugv_path.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return bad("ugv.waypoints", "times must be strictly increasing");
        }
        for (j, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) {
                return bad(&format!("obstacle radius (obstacle {})", j + 1), "must be positive");
            }
            if !(o.motion_window.0 <= o.motion_window.1) {
                return bad(&format!("obstacle.{}.window", j + 1), "need t_a ≤ t_b");
            }
        }
        if let RotorInit::Speed(s) = self.mrav_initial_rotors {
            if !(s >= self.gtmr.speed_min && s <= self.gtmr.speed_max) {
                return bad("mrav.initial_rotor_speed", "outside the rotor speed bounds");
            }
        }
        self.gtmr.validate().map_err(as_validation)?;
        self.optics.validate().map_err(as_validation)?;
        self.weights.validate().map_err(as_validation)?;
        self.solver.validate().map_err(as_validation)?;
        Ok(())
    }

    /// Ground-vehicle position and velocity at `t`. Past the last waypoint the
    /// vehicle stays put.
    pub fn ugv_state(&self, t: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
        if !(t >= 0.0 && t <= self.duration) {
            return Err(Error::TimeOutOfRange { t, duration: self.duration });
        }
        Ok(self.ugv_state_unchecked(t))
    }

    fn ugv_state_unchecked(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let path = &self.ugv_path;
        let last = path[path.len() - 1];
        if t >= last.time {
            return (last.position, Vector3::zeros());
        }
        let i = path.partition_point(|w| w.time <= t) - 1;
        let (a, b) = (path[i], path[i + 1]);
        let vel = (b.position - a.position) / (b.time - a.time);
        (a.position + vel * (t - a.time), vel)
    }

    /// Output reference: hover offset above the ground vehicle, its velocity,
    /// zero acceleration and the link targets (1, 0, Υ).
    pub fn mrav_reference(&self, t: f64) -> Result<OutputVector> {
        let (p, v) = self.ugv_state(t)?;
        Ok(OutputVector::reference(p + self.mrav_ref_offset, v, Vector3::zeros(), self.optics.desired_range))
    }

    /// Position of obstacle `j` (1-based).
    pub fn obstacle_position(&self, j: usize, t: f64) -> Result<Vector3<f64>> {
        let count = self.obstacles.len();
        if j == 0 || j > count {
            return Err(Error::IndexOutOfRange { index: j, count });
        }
        Ok(self.obstacles[j - 1].position(t))
    }

    /// Stage data at time `t`; times past the mission end are clamped to it.
    pub fn stage_data(&self, t: f64) -> StageData {
        let t = t.clamp(0.0, self.duration);
        let (p, v) = self.ugv_state_unchecked(t);
        StageData {
            reference: OutputVector::reference(p + self.mrav_ref_offset, v, Vector3::zeros(), self.optics.desired_range),
            obstacle_centers: self.obstacles.iter().map(|o| o.position(t)).collect(),
            obstacle_radii: self.obstacles.iter().map(|o| o.radius).collect(),
            rx_pos: p,
            rx_vel: v,
        }
    }
}

fn as_validation(e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => Error::Validation { field, reason },
        other => other,
    }
}

/// Receiver gimbal: slews its axis toward the transmitter with a first-order
/// lag in angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverGimbal {
    pub axis: Vector3<f64>,
    /// s, τ_g
    pub lag: f64,
}

impl ReceiverGimbal {
    pub fn pointing_at(rx_pos: &Vector3<f64>, tx_pos: &Vector3<f64>, lag: f64) -> Result<Self> {
        Ok(Self { axis: target_axis(rx_pos, tx_pos)?, lag })
    }

    pub fn update(&mut self, rx_pos: &Vector3<f64>, tx_pos: &Vector3<f64>, dt: f64) -> Result<Vector3<f64>> {
        self.axis = receiver_axis(rx_pos, tx_pos, &self.axis, self.lag, dt)?;
        Ok(self.axis)
    }
}

fn target_axis(rx_pos: &Vector3<f64>, tx_pos: &Vector3<f64>) -> Result<Vector3<f64>> {
    let d = tx_pos - rx_pos;
    let range = d.norm();
    if !(range > crate::optics::MIN_RANGE) {
        return Err(Error::DegenerateRange { range });
    }
    Ok(d / range)
}

/// New receiver axis after `dt`: the angle to the target shrinks by
/// exp(−dt/τ_g); τ_g = 0 snaps to the target.
pub fn receiver_axis(
    rx_pos: &Vector3<f64>,
    tx_pos: &Vector3<f64>,
    current: &Vector3<f64>,
    lag: f64,
    dt: f64,
) -> Result<Vector3<f64>> {
    let target = target_axis(rx_pos, tx_pos)?;
    if lag == 0.0 {
        return Ok(target);
    }
    let cur = current.normalize();
    let angle = cur.dot(&target).clamp(-1.0, 1.0).acos();
    if angle == 0.0 {
        return Ok(target);
    }
    let mut axis = cur.cross(&target);
    if axis.norm() < 1e-12 {
        // antiparallel: any perpendicular direction
        axis = cur.cross(&Vector3::x());
        if axis.norm() < 1e-6 {
            axis = cur.cross(&Vector3::y());
        }
    }
    let turn = angle * (1.0 - (-dt / lag).exp());
    let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), turn);
    Ok((rot * cur).normalize())
}

/// Shortest decimal that converts back to exactly `rad`.
fn degrees(rad: f64) -> String {
    let deg = rad.to_degrees();
    for p in 0..17 {
        let s = format!("{deg:.p$}");
        if s.parse::<f64>().map(f64::to_radians) == Ok(rad) {
            return trim_decimal(s);
        }
    }
    // to_degrees and to_radians are not exact inverses; try nearby values
    let step = |x: f64, k: i64| f64::from_bits((x.to_bits() as i64 + k) as u64);
    (1..=8)
        .flat_map(|k| [k, -k])
        .map(|k| step(deg, k))
        .find(|d| d.to_radians() == rad)
        .map_or_else(|| format!("{deg}"), |d| format!("{d}"))
}

fn trim_decimal(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" { "0".into() } else { t.to_string() }
    } else {
        s
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn vec3(v: &Vector3<f64>) -> String {
    format!("{}, {}, {}", v.x, v.y, v.z)
}

fn list(v: impl IntoIterator<Item = String>) -> String {
    v.into_iter().collect::<Vec<_>>().join(", ")
}

impl Scenario {
    /// Canonical configuration text with every key in schema order.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("schema_version", SCHEMA_VERSION.to_string());
        kv("mission.duration", num(self.duration));
        kv("mission.workspace", vec3(&self.workspace));
        kv("rates.reference_hz", self.rates.reference_hz.to_string());
        kv("rates.control_hz", self.rates.control_hz.to_string());
        kv("rates.plant_hz", self.rates.plant_hz.to_string());
        kv("horizon.steps", self.horizon_steps.to_string());
        kv("horizon.step", num(self.horizon_step));
        let g = &self.gtmr;
        kv("gtmr.n_rotors", g.n_rotors.to_string());
        kv("gtmr.mass", num(g.mass));
        kv("gtmr.gravity", num(g.gravity));
        kv("gtmr.inertia", vec3(&g.inertia_diag));
        kv("gtmr.thrust_coeff", num(g.thrust_coeff));
        kv("gtmr.torque_coeff", num(g.torque_coeff));
        kv("gtmr.arm_length", num(g.arm_length));
        kv("gtmr.tilt_alpha_deg", list(g.tilt_alpha.iter().map(|a| degrees(*a))));
        kv("gtmr.tilt_beta_deg", list(g.tilt_beta.iter().map(|a| degrees(*a))));
        kv("gtmr.spin_dir", list(g.spin_dir.iter().map(|s| num(*s))));
        kv("gtmr.speed_min", num(g.speed_min));
        kv("gtmr.speed_max", num(g.speed_max));
        kv("gtmr.accel_min", num(g.accel_min));
        kv("gtmr.accel_max", num(g.accel_max));
        let o = &self.optics;
        kv("optics.cone_cos_threshold", num(o.cone_cos_threshold));
        kv("optics.rx_fov_deg", degrees(o.rx_fov));
        kv("optics.tx_half_power_deg", degrees(o.tx_half_power));
        kv("optics.range_min", num(o.range_min));
        kv("optics.range_max", num(o.range_max));
        kv("optics.desired_range", num(o.desired_range));
        kv("optics.tx_offset", vec3(&o.tx_offset_body));
        let r = &o.tx_rotation_body;
        kv("optics.tx_rotation", list((0..9).map(|i| num(r[(i / 3, i % 3)]))));
        kv("optics.rx_window", num(o.rx_window));
        kv("optics.rx_lag", num(o.rx_lag));
        let w = &self.weights;
        kv("weights.position", num(w.output[0]));
        kv("weights.velocity", num(w.output[3]));
        kv("weights.acceleration", num(w.output[6]));
        kv("weights.cos_delta", num(w.output[9]));
        kv("weights.cos_delta_rate", num(w.output[10]));
        kv("weights.range", num(w.output[11]));
        kv("weights.rate", num(w.rate.get(0).copied().unwrap_or(0.0)));
        kv("weights.slack", num(w.slack.get(0).copied().unwrap_or(1.0)));
        kv("weights.body_rate", num(w.body_rate));
        kv("safety.margin", num(self.safety_margin));
        kv("safety.backoff", num(self.safety_backoff));
        kv("ugv.initial", vec3(&self.ugv_initial));
        kv(
            "ugv.waypoints",
            self.ugv_path
                .iter()
                .map(|w| format!("{} @ {}", vec3(&w.position), w.time))
                .collect::<Vec<_>>()
                .join("; "),
        );
        let b = &self.mrav_initial_body;
        kv("mrav.initial_position", vec3(&b.position));
        kv("mrav.initial_euler_deg", list(b.euler.iter().map(|a| degrees(*a))));
        kv("mrav.initial_velocity", vec3(&b.velocity));
        kv("mrav.initial_body_rates", vec3(&b.body_rates));
        kv(
            "mrav.initial_rotor_speed",
            match self.mrav_initial_rotors {
                RotorInit::Hover => "hover".into(),
                RotorInit::Speed(s) => num(s),
            },
        );
        kv("mrav.ref_offset", vec3(&self.mrav_ref_offset));
        kv("obstacles.count", self.obstacles.len().to_string());
        for (j, ob) in self.obstacles.iter().enumerate() {
            let j = j + 1;
            kv(&format!("obstacle.{j}.start"), vec3(&ob.start_pos));
            kv(&format!("obstacle.{j}.end"), vec3(&ob.end_pos));
            kv(&format!("obstacle.{j}.window"), format!("{}, {}", ob.motion_window.0, ob.motion_window.1));
            kv(&format!("obstacle.{j}.radius"), num(ob.radius));
        }
        let s = &self.solver;
        kv("solver.rti_iters", self.rti_iters.to_string());
        kv("solver.cold_start_iters", self.cold_start_iters.to_string());
        kv("solver.max_qp_iters", s.max_qp_iters.to_string());
        kv("solver.kkt_tol", num(s.kkt_tol));
        kv("solver.active_set_tol", num(s.active_set_tol));
        kv("solver.levenberg_damping", num(s.levenberg_damping));
        kv("solver.merit_penalty", num(s.merit_penalty));
        kv("sim.record_wall_time", self.record_wall_time.to_string());
        out
    }
}

/// Parsed `key = value` entries with their line numbers.
#[derive(Debug, Clone, Default)]
pub struct ConfigEntries {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigEntries {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse { line, message: format!("malformed key `{key}`") });
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line, value.trim().to_string())) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Applies a `key=value` override, replacing any file entry. Overrides
    /// report line 0 in errors.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("override `{assignment}` is not of the form key=value"),
        })?;
        self.entries.insert(k.trim().to_string(), (0, v.trim().to_string()));
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }
}

struct Reader {
    entries: ConfigEntries,
}

fn parse_err(line: usize, key: &str, message: impl std::fmt::Display) -> Error {
    Error::Parse { line, message: format!("{key}: {message}") }
}

fn parse_f64(line: usize, key: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| !v.is_nan())
        .ok_or_else(|| parse_err(line, key, format!("`{}` is not a number", s.trim())))
}

fn parse_list(line: usize, key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| parse_f64(line, key, t)).collect()
}

impl Reader {
    fn get<T>(&mut self, key: &str, target: &mut T, parse: impl FnOnce(usize, &str) -> Result<T>) -> Result<()> {
        if let Some((line, v)) = self.entries.take(key) {
            *target = parse(line, &v)?;
        }
        Ok(())
    }

    fn f64(&mut self, key: &str, target: &mut f64) -> Result<()> {
        self.get(key, target, |l, v| parse_f64(l, key, v))
    }

    fn deg(&mut self, key: &str, target: &mut f64) -> Result<()> {
        self.get(key, target, |l, v| Ok(parse_f64(l, key, v)?.to_radians()))
    }

    fn uint<T: std::str::FromStr>(&mut self, key: &str, target: &mut T) -> Result<()> {
        self.get(key, target, |l, v| {
            v.parse::<T>().map_err(|_| parse_err(l, key, format!("`{v}` is not a non-negative integer")))
        })
    }

    fn list(&mut self, key: &str, len: Option<usize>, target: &mut Vec<f64>) -> Result<()> {
        self.get(key, target, |l, v| {
            let xs = parse_list(l, key, v)?;
            if let Some(n) = len {
                if xs.len() != n {
                    return Err(parse_err(l, key, format!("expected {n} values, found {}", xs.len())));
                }
            }
            Ok(xs)
        })
    }

    fn vec3(&mut self, key: &str, target: &mut Vector3<f64>) -> Result<()> {
        self.get(key, target, |l, v| {
            let xs = parse_list(l, key, v)?;
            if xs.len() != 3 {
                return Err(parse_err(l, key, format!("expected 3 values, found {}", xs.len())));
            }
            Ok(Vector3::new(xs[0], xs[1], xs[2]))
        })
    }
}

/// Parses and validates a configuration.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    load_scenario_with_overrides::<&str>(text, &[])
}

/// Parses a configuration, applies `key=value` overrides, validates.
pub fn load_scenario_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Scenario> {
    let mut entries = ConfigEntries::parse(text)?;
    for o in overrides {
        entries.set(o.as_ref())?;
    }
    let scenario = build(entries)?;
    scenario.validate()?;
    Ok(scenario)
}

fn build(entries: ConfigEntries) -> Result<Scenario> {
    let mut r = Reader { entries };
    let mut s = Scenario::default();

    let mut version = SCHEMA_VERSION;
    r.uint("schema_version", &mut version)?;
    if version != SCHEMA_VERSION {
        return Err(Error::validation("schema_version", format!("unsupported version {version}")));
    }
    r.f64("mission.duration", &mut s.duration)?;
    r.vec3("mission.workspace", &mut s.workspace)?;
    r.uint("rates.reference_hz", &mut s.rates.reference_hz)?;
    r.uint("rates.control_hz", &mut s.rates.control_hz)?;
    r.uint("rates.plant_hz", &mut s.rates.plant_hz)?;
    r.uint("horizon.steps", &mut s.horizon_steps)?;
    r.f64("horizon.step", &mut s.horizon_step)?;

    let g = &mut s.gtmr;
    let n_before = g.n_rotors;
    r.uint("gtmr.n_rotors", &mut g.n_rotors)?;
    if g.n_rotors != n_before {
        // per-rotor defaults follow the alternating pattern
        let n = g.n_rotors;
        let alpha = 20f64.to_radians();
        g.tilt_alpha = (0..n).map(|i| if i % 2 == 0 { alpha } else { -alpha }).collect();
        g.tilt_beta = vec![0.0; n];
        g.spin_dir = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    }
    r.f64("gtmr.mass", &mut g.mass)?;
    r.f64("gtmr.gravity", &mut g.gravity)?;
    r.vec3("gtmr.inertia", &mut g.inertia_diag)?;
    r.f64("gtmr.thrust_coeff", &mut g.thrust_coeff)?;
    r.f64("gtmr.torque_coeff", &mut g.torque_coeff)?;
    r.f64("gtmr.arm_length", &mut g.arm_length)?;
    let n = g.n_rotors;
    let deg_list = |r: &mut Reader, key: &str, target: &mut Vec<f64>| -> Result<()> {
        let mut d = Vec::new();
        let had = r.entries.entries.contains_key(key);
        r.list(key, Some(n), &mut d)?;
        if had {
            *target = d.into_iter().map(f64::to_radians).collect();
        }
        Ok(())
    };
    deg_list(&mut r, "gtmr.tilt_alpha_deg", &mut g.tilt_alpha)?;
    deg_list(&mut r, "gtmr.tilt_beta_deg", &mut g.tilt_beta)?;
    r.list("gtmr.spin_dir", Some(n), &mut g.spin_dir)?;
    r.f64("gtmr.speed_min", &mut g.speed_min)?;
    r.f64("gtmr.speed_max", &mut g.speed_max)?;
    r.f64("gtmr.accel_min", &mut g.accel_min)?;
    r.f64("gtmr.accel_max", &mut g.accel_max)?;

    let o = &mut s.optics;
    r.f64("optics.cone_cos_threshold", &mut o.cone_cos_threshold)?;
    r.deg("optics.rx_fov_deg", &mut o.rx_fov)?;
    r.deg("optics.tx_half_power_deg", &mut o.tx_half_power)?;
    r.f64("optics.range_min", &mut o.range_min)?;
    r.f64("optics.range_max", &mut o.range_max)?;
    r.f64("optics.desired_range", &mut o.desired_range)?;
    r.vec3("optics.tx_offset", &mut o.tx_offset_body)?;
    let mut rot: Vec<f64> = o.tx_rotation_body.transpose().as_slice().to_vec();
    r.list("optics.tx_rotation", Some(9), &mut rot)?;
    o.tx_rotation_body = Matrix3::from_row_slice(&rot);
    r.f64("optics.rx_window", &mut o.rx_window)?;
    r.f64("optics.rx_lag", &mut o.rx_lag)?;

    let w0 = &s.weights;
    let mut wb = [
        w0.output[0],
        w0.output[3],
        w0.output[6],
        w0.output[9],
        w0.output[10],
        w0.output[11],
        w0.rate[0],
        w0.slack[0],
    ];
    for (key, slot) in [
        "weights.position",
        "weights.velocity",
        "weights.acceleration",
        "weights.cos_delta",
        "weights.cos_delta_rate",
        "weights.range",
        "weights.rate",
        "weights.slack",
    ]
    .iter()
    .zip(wb.iter_mut())
    {
        r.f64(key, slot)?;
    }
    let mut body_rate = w0.body_rate;
    r.f64("weights.body_rate", &mut body_rate)?;
    r.f64("safety.margin", &mut s.safety_margin)?;
    r.f64("safety.backoff", &mut s.safety_backoff)?;

    r.vec3("ugv.initial", &mut s.ugv_initial)?;
    let initial_given = s.ugv_initial != Scenario::default().ugv_initial;
    let mut path_given = false;
    if let Some((line, v)) = r.entries.take("ugv.waypoints") {
        s.ugv_path = parse_waypoints(line, &v)?;
        path_given = true;
    }
    if initial_given && !path_given {
        // translate the default square so that it starts at the new origin
        let last = s.ugv_path.len() - 1;
        let closes = last > 0 && s.ugv_path[0].position == s.ugv_path[last].position;
        let shift = s.ugv_initial - s.ugv_path[0].position;
        for w in s.ugv_path.iter_mut() {
            w.position += shift;
        }
        s.ugv_path[0].position = s.ugv_initial;
        if closes {
            s.ugv_path[last].position = s.ugv_initial;
        }
    }

    let b = &mut s.mrav_initial_body;
    r.vec3("mrav.initial_position", &mut b.position)?;
    let mut euler = Vector3::zeros();
    let mut euler_given = false;
    if r.entries.entries.contains_key("mrav.initial_euler_deg") {
        r.vec3("mrav.initial_euler_deg", &mut euler)?;
        euler_given = true;
    }
    if euler_given {
        b.euler = euler.map(f64::to_radians);
    }
    r.vec3("mrav.initial_velocity", &mut b.velocity)?;
    r.vec3("mrav.initial_body_rates", &mut b.body_rates)?;
    r.get("mrav.initial_rotor_speed", &mut s.mrav_initial_rotors, |l, v| {
        if v == "hover" {
            Ok(RotorInit::Hover)
        } else {
            Ok(RotorInit::Speed(parse_f64(l, "mrav.initial_rotor_speed", v)?))
        }
    })?;
    r.vec3("mrav.ref_offset", &mut s.mrav_ref_offset)?;

    let mut count = s.obstacles.len();
    r.uint("obstacles.count", &mut count)?;
    let defaults = Scenario::default().obstacles;
    let mut obstacles = Vec::with_capacity(count);
    for j in 1..=count {
        let mut ob = defaults.get(j - 1).cloned();
        let keys = ["start", "end", "window", "radius"].map(|f| format!("obstacle.{j}.{f}"));
        if ob.is_none() {
            if let Some(missing) = keys.iter().find(|k| !r.entries.entries.contains_key(*k)) {
                return Err(Error::validation(missing, "required for obstacles beyond the defaults"));
            }
            ob = Some(Obstacle::fixed(Vector3::zeros(), 1.0));
        }
        let mut ob = ob.expect("obstacle initialised above");
        r.vec3(&keys[0], &mut ob.start_pos)?;
        r.vec3(&keys[1], &mut ob.end_pos)?;
        r.get(&keys[2], &mut ob.motion_window, |l, v| {
            let xs = parse_list(l, &keys[2], v)?;
            if xs.len() != 2 {
                return Err(parse_err(l, &keys[2], "expected `t_a, t_b`"));
            }
            Ok((xs[0], xs[1]))
        })?;
        r.f64(&keys[3], &mut ob.radius)?;
        obstacles.push(ob);
    }
    s.obstacles = obstacles;
    s.weights = OcpWeights::from_blocks(wb[0], wb[1], wb[2], wb[3], wb[4], wb[5], wb[6], wb[7], n, count)
        .with_body_rate(body_rate);

    r.uint("solver.rti_iters", &mut s.rti_iters)?;
    r.uint("solver.cold_start_iters", &mut s.cold_start_iters)?;
    r.uint("solver.max_qp_iters", &mut s.solver.max_qp_iters)?;
    r.f64("solver.kkt_tol", &mut s.solver.kkt_tol)?;
    r.f64("solver.active_set_tol", &mut s.solver.active_set_tol)?;
    r.f64("solver.levenberg_damping", &mut s.solver.levenberg_damping)?;
    r.f64("solver.merit_penalty", &mut s.solver.merit_penalty)?;
    r.get("sim.record_wall_time", &mut s.record_wall_time, |l, v| match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(l, "sim.record_wall_time", "expected true or false")),
    })?;

    if let Some((key, (line, _))) = r.entries.entries.iter().next() {
        return Err(Error::Parse { line: *line, message: format!("unknown key `{key}`") });
    }
    Ok(s)
}

fn parse_waypoints(line: usize, text: &str) -> Result<Vec<Waypoint>> {
    let key = "ugv.waypoints";
    text.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|item| {
            let (pos, time) = item
                .split_once('@')
                .ok_or_else(|| parse_err(line, key, format!("`{}` is not `x, y, z @ t`", item.trim())))?;
            let xs = parse_list(line, key, pos)?;
            if xs.len() != 3 {
                return Err(parse_err(line, key, "waypoint positions need 3 values"));
            }
            Ok(Waypoint {
                position: Vector3::new(xs[0], xs[1], xs[2]),
                time: parse_f64(line, key, time)?,
            })
        })
        .collect()
}
