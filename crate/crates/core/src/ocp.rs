//! Finite-horizon tracking problem: output map, stage cost, path constraints
//! and stage-wise linearisations used by the SQP solver.
//!
//! Path constraints are kept in two-sided form `lower ≤ h(x̄) (+ ε) ≤ upper`.
//! The one-sided residual view `g ≥ 0` is derived from the same rows.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::dynamics::{ControlRate, ExtendedState, GtmrModel, GtmrParams, POS, RATES, ROTORS};
use crate::optics::{LinkGeometry, OpticalParams};
use crate::{Error, Result};

/// Number of outputs `y = (p, v, v̇, c_δ, ċ_δ, ‖d_C‖)`.
pub const NY: usize = 12;

/// Denominator regularisation of the obstacle-distance gradient.
const OBSTACLE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputVector {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub cos_delta: f64,
    pub cos_delta_rate: f64,
    pub range: f64,
}

impl OutputVector {
    pub fn to_array(&self) -> [f64; NY] {
        let mut y = [0.0; NY];
        y[0..3].copy_from_slice(self.position.as_slice());
        y[3..6].copy_from_slice(self.velocity.as_slice());
        y[6..9].copy_from_slice(self.acceleration.as_slice());
        y[9] = self.cos_delta;
        y[10] = self.cos_delta_rate;
        y[11] = self.range;
        y
    }

    pub fn from_array(y: &[f64; NY]) -> Self {
        Self {
            position: Vector3::new(y[0], y[1], y[2]),
            velocity: Vector3::new(y[3], y[4], y[5]),
            acceleration: Vector3::new(y[6], y[7], y[8]),
            cos_delta: y[9],
            cos_delta_rate: y[10],
            range: y[11],
        }
    }

    /// Reference with the link targets (1, 0, Υ).
    pub fn reference(
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        acceleration: Vector3<f64>,
        desired_range: f64,
    ) -> Self {
        Self {
            position,
            velocity,
            acceleration,
            cos_delta: 1.0,
            cos_delta_rate: 0.0,
            range: desired_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpWeights {
    /// Diagonal of Q in output order.
    pub output: [f64; NY],
    /// Diagonal of Q_ū, one entry per rotor.
    pub rate: DVector<f64>,
    /// Diagonal of Q_ε, one entry per obstacle.
    pub slack: DVector<f64>,
    /// Damping on the body rates ω, applied as ‖ω‖² times this weight.
    pub body_rate: f64,
}

impl OcpWeights {
    /// Per-block output weights: each kinematic scalar multiplies a whole
    /// 3-vector block.
    #[allow(clippy::too_many_arguments)]
    pub fn from_blocks(
        position: f64,
        velocity: f64,
        acceleration: f64,
        cos_delta: f64,
        cos_delta_rate: f64,
        range: f64,
        rate: f64,
        slack: f64,
        n_rotors: usize,
        n_obstacles: usize,
    ) -> Self {
        let mut output = [0.0; NY];
        output[0..3].fill(position);
        output[3..6].fill(velocity);
        output[6..9].fill(acceleration);
        output[9] = cos_delta;
        output[10] = cos_delta_rate;
        output[11] = range;
        Self {
            output,
            rate: DVector::from_element(n_rotors, rate),
            slack: DVector::from_element(n_obstacles, slack),
            body_rate: 0.0,
        }
    }

    pub fn with_body_rate(mut self, w: f64) -> Self {
        self.body_rate = w;
        self
    }

    /// Q̄ = diag(0, 0.1, 0.1) per block, then diag(10, 10, 2); Q_ū = 10·I,
    /// Q_ε = 10⁴·I.
    pub fn inspection(n_rotors: usize, n_obstacles: usize) -> Self {
        Self::from_blocks(0.0, 0.1, 0.1, 10.0, 10.0, 2.0, 10.0, 1e4, n_rotors, n_obstacles)
    }

    /// Closed-loop tuning: position tracking, a stronger pointing term, light
    /// rotor-acceleration and body-rate penalties.
    pub fn closed_loop(n_rotors: usize, n_obstacles: usize) -> Self {
        Self::from_blocks(10.0, 0.1, 0.1, 100.0, 10.0, 2.0, 1e-6, 1e4, n_rotors, n_obstacles).with_body_rate(0.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output.iter().chain(self.rate.iter()).chain([&self.body_rate]).any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights", "output and rate weights must be non-negative"));
        }
        if self.slack.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("weights", "slack weights must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub reference: OutputVector,
    pub obstacle_centers: Vec<Vector3<f64>>,
    pub obstacle_radii: Vec<f64>,
    pub rx_pos: Vector3<f64>,
    pub rx_vel: Vector3<f64>,
}

impl StageData {
    pub fn n_obstacles(&self) -> usize {
        self.obstacle_centers.len()
    }
}

#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub horizon_steps: usize,
    /// s, shooting interval T_s
    pub step: f64,
    pub initial_state: ExtendedState,
    /// N + 1 entries.
    pub stages: Vec<StageData>,
    pub weights: OcpWeights,
    pub model: GtmrModel,
    pub optics: OpticalParams,
    /// m, d_safe
    pub safety_margin: f64,
}

impl OcpProblem {
    pub fn gtmr(&self) -> &GtmrParams {
        &self.model.params
    }

    pub fn n_obstacles(&self) -> usize {
        self.weights.slack.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps < 1 {
            return Err(Error::invalid("horizon_steps", "need at least one shooting interval"));
        }
        if !(self.step > 0.0) {
            return Err(Error::invalid("step", "must be positive"));
        }
        if self.stages.len() != self.horizon_steps + 1 {
            return Err(Error::Dimension(format!(
                "expected {} stages, got {}",
                self.horizon_steps + 1,
                self.stages.len()
            )));
        }
        self.weights.validate()?;
        if self.weights.rate.len() != self.gtmr().n_rotors {
            return Err(Error::Dimension("rate weights must have one entry per rotor".into()));
        }
        let no = self.n_obstacles();
        for (k, s) in self.stages.iter().enumerate() {
            if s.obstacle_centers.len() != no || s.obstacle_radii.len() != no {
                return Err(Error::Dimension(format!("stage {k}: expected {no} obstacles")));
            }
            if s.obstacle_radii.iter().any(|r| !(*r > 0.0)) {
                return Err(Error::invalid("obstacle radius", "must be positive"));
            }
        }
        if self.initial_state.n_rotors() != self.gtmr().n_rotors {
            return Err(Error::Dimension("initial state rotor count".into()));
        }
        Ok(())
    }
}

/// Output and its Jacobian ∂y/∂x̄ (12 × nx) at a flat state.
pub fn output_with_jacobian(
    model: &GtmrModel,
    optics: &OpticalParams,
    x: &[f64],
    stage: &StageData,
) -> Result<([f64; NY], DMatrix<f64>)> {
    let nx = model.nx();
    let geo = LinkGeometry::new(&x[..ROTORS], &stage.rx_pos, &stage.rx_vel, optics)?;
    let accel = model.acceleration(x);
    let mut y = [0.0; NY];
    y[0..3].copy_from_slice(&x[0..3]);
    y[3..6].copy_from_slice(&x[6..9]);
    y[6..9].copy_from_slice(accel.as_slice());
    y[9] = geo.cos_delta();
    y[10] = geo.cos_delta_rate();
    y[11] = geo.range();

    let mut c = DMatrix::zeros(NY, nx);
    for i in 0..3 {
        c[(i, i)] = 1.0;
        c[(3 + i, 6 + i)] = 1.0;
    }
    c.view_mut((6, 0), (3, nx)).copy_from(&model.acceleration_jacobian(x));
    let link = geo.jacobian();
    for r in 0..3 {
        for col in 0..ROTORS {
            c[(9 + r, col)] = link[(r, col)];
        }
    }
    Ok((y, c))
}

pub fn output_map(
    x: &ExtendedState,
    stage: &StageData,
    model: &GtmrModel,
    optics: &OpticalParams,
) -> Result<OutputVector> {
    let xv = x.to_vector();
    let geo = LinkGeometry::new(&xv.as_slice()[..ROTORS], &stage.rx_pos, &stage.rx_vel, optics)?;
    Ok(OutputVector {
        position: x.body.position,
        velocity: x.body.velocity,
        acceleration: model.acceleration(xv.as_slice()),
        cos_delta: geo.cos_delta(),
        cos_delta_rate: geo.cos_delta_rate(),
        range: geo.range(),
    })
}

/// ‖y_d − y‖²_Q + ‖ū‖²_{Q_ū} + ‖ε‖²_{Q_ε}
pub fn stage_cost(
    y: &OutputVector,
    stage: &StageData,
    u_rate: Option<&ControlRate>,
    slacks: &[f64],
    w: &OcpWeights,
) -> Result<f64> {
    if let Some(&value) = slacks.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::NegativeSlack { value });
    }
    let y = y.to_array();
    let yd = stage.reference.to_array();
    let mut cost: f64 = (0..NY).map(|i| w.output[i] * (yd[i] - y[i]).powi(2)).sum();
    if let Some(u) = u_rate {
        cost += u
            .rotor_accels
            .iter()
            .zip(w.rate.iter())
            .map(|(u, q)| q * u * u)
            .sum::<f64>();
    }
    cost += slacks.iter().zip(w.slack.iter()).map(|(e, q)| q * e * e).sum::<f64>();
    Ok(cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathKind {
    RotorSpeed(usize),
    Range,
    Cone,
    Obstacle(usize),
}

/// `lower ≤ value + slack ≤ upper`, linearised as `jac · δx̄`.
#[derive(Debug, Clone)]
pub struct PathConstraint {
    pub kind: PathKind,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub jac: DVector<f64>,
    /// Index of the obstacle slack entering this row with coefficient +1.
    pub slack: Option<usize>,
}

pub fn path_constraints(
    problem: &OcpProblem,
    x: &[f64],
    stage: &StageData,
) -> Result<Vec<PathConstraint>> {
    let gtmr = problem.gtmr();
    let optics = &problem.optics;
    let nx = problem.model.nx();
    let geo = LinkGeometry::new(&x[..ROTORS], &stage.rx_pos, &stage.rx_vel, optics)?;
    let mut rows = Vec::with_capacity(gtmr.n_rotors + 2 + stage.n_obstacles());
    for i in 0..gtmr.n_rotors {
        let mut jac = DVector::zeros(nx);
        jac[ROTORS + i] = 1.0;
        rows.push(PathConstraint {
            kind: PathKind::RotorSpeed(i),
            value: x[ROTORS + i],
            lower: gtmr.speed_min,
            upper: gtmr.speed_max,
            jac,
            slack: None,
        });
    }
    let pad = |row: crate::optics::BodyRow| {
        let mut jac = DVector::zeros(nx);
        jac.rows_mut(0, ROTORS).copy_from(&row.transpose());
        jac
    };
    rows.push(PathConstraint {
        kind: PathKind::Range,
        value: geo.range(),
        lower: optics.range_min,
        upper: optics.range_max,
        jac: pad(geo.range_jacobian()),
        slack: None,
    });
    rows.push(PathConstraint {
        kind: PathKind::Cone,
        value: -geo.beam_axis().dot(&geo.link_vector()) / geo.range(),
        lower: optics.cone_cos_threshold,
        upper: f64::INFINITY,
        jac: pad(geo.cos_delta_jacobian()),
        slack: None,
    });
    let p = Vector3::new(x[0], x[1], x[2]);
    for (j, (center, radius)) in stage
        .obstacle_centers
        .iter()
        .zip(&stage.obstacle_radii)
        .enumerate()
    {
        let diff = p - center;
        let dist = diff.norm();
        let mut jac = DVector::zeros(nx);
        jac.rows_mut(POS, 3).copy_from(&(diff / (dist + OBSTACLE_EPS)));
        rows.push(PathConstraint {
            kind: PathKind::Obstacle(j),
            value: dist,
            lower: radius + problem.safety_margin,
            upper: f64::INFINITY,
            jac,
            slack: Some(j),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    SpeedLower(usize),
    SpeedUpper(usize),
    AccelLower(usize),
    AccelUpper(usize),
    RangeLower,
    RangeUpper,
    Cone,
    Obstacle(usize),
    SlackNonNegative(usize),
}

/// One-sided residuals `g ≥ 0` of a stage and their Jacobians.
#[derive(Debug, Clone)]
pub struct StageResiduals {
    pub kinds: Vec<ResidualKind>,
    pub values: DVector<f64>,
    pub jac_x: DMatrix<f64>,
    pub jac_u: DMatrix<f64>,
    pub jac_s: DMatrix<f64>,
}

fn residuals_from_rows(
    problem: &OcpProblem,
    rows: &[PathConstraint],
    u: &[f64],
    slacks: &[f64],
) -> StageResiduals {
    let gtmr = problem.gtmr();
    let nx = problem.model.nx();
    let nu = gtmr.n_rotors;
    let ns = slacks.len();
    let mut kinds = Vec::new();
    let mut values = Vec::new();
    let mut jx: Vec<DVector<f64>> = Vec::new();
    let mut ju: Vec<(usize, f64)> = Vec::new();
    let mut js: Vec<(usize, f64)> = Vec::new();
    let mut push = |kind, value, jac: DVector<f64>, u: Option<(usize, f64)>, s: Option<(usize, f64)>| {
        kinds.push(kind);
        values.push(value);
        jx.push(jac);
        ju.push(u.unwrap_or((usize::MAX, 0.0)));
        js.push(s.unwrap_or((usize::MAX, 0.0)));
    };
    let zero = DVector::zeros(nx);
    for row in rows.iter().filter(|r| matches!(r.kind, PathKind::RotorSpeed(_))) {
        let PathKind::RotorSpeed(i) = row.kind else { unreachable!() };
        push(ResidualKind::SpeedLower(i), row.value - row.lower, row.jac.clone(), None, None);
        push(ResidualKind::SpeedUpper(i), row.upper - row.value, -&row.jac, None, None);
    }
    for i in 0..nu {
        push(ResidualKind::AccelLower(i), u[i] - gtmr.accel_min, zero.clone(), Some((i, 1.0)), None);
        push(ResidualKind::AccelUpper(i), gtmr.accel_max - u[i], zero.clone(), Some((i, -1.0)), None);
    }
    for row in rows {
        match row.kind {
            PathKind::Range => {
                push(ResidualKind::RangeLower, row.value - row.lower, row.jac.clone(), None, None);
                push(ResidualKind::RangeUpper, row.upper - row.value, -&row.jac, None, None);
            }
            PathKind::Cone => push(ResidualKind::Cone, row.value - row.lower, row.jac.clone(), None, None),
            _ => {}
        }
    }
    for row in rows {
        if let (PathKind::Obstacle(j), Some(s)) = (row.kind, row.slack) {
            push(
                ResidualKind::Obstacle(j),
                row.value + slacks[s] - row.lower,
                row.jac.clone(),
                None,
                Some((s, 1.0)),
            );
        }
    }
    for (j, e) in slacks.iter().enumerate() {
        push(ResidualKind::SlackNonNegative(j), *e, zero.clone(), None, Some((j, 1.0)));
    }
    let m = values.len();
    let mut jac_x = DMatrix::zeros(m, nx);
    let mut jac_u = DMatrix::zeros(m, nu);
    let mut jac_s = DMatrix::zeros(m, ns);
    for r in 0..m {
        jac_x.set_row(r, &jx[r].transpose());
        if ju[r].0 != usize::MAX {
            jac_u[(r, ju[r].0)] = ju[r].1;
        }
        if js[r].0 != usize::MAX {
            jac_s[(r, js[r].0)] = js[r].1;
        }
    }
    StageResiduals {
        kinds,
        values: DVector::from_vec(values),
        jac_x,
        jac_u,
        jac_s,
    }
}

/// Residuals in the order: rotor-speed box (lower, upper per rotor), rotor
/// acceleration box, range lower/upper, cone, obstacles, slack
/// non-negativity.
pub fn constraint_residuals(
    x: &ExtendedState,
    u_rate: &ControlRate,
    slacks: &[f64],
    stage: &StageData,
    problem: &OcpProblem,
) -> Result<StageResiduals> {
    let xv = x.to_vector();
    let rows = path_constraints(problem, xv.as_slice(), stage)?;
    Ok(residuals_from_rows(problem, &rows, u_rate.rotor_accels.as_slice(), slacks))
}

#[derive(Debug, Clone)]
pub struct StageLinearization {
    /// RK4 successor over one shooting interval.
    pub next_state: DVector<f64>,
    pub dyn_x: DMatrix<f64>,
    pub dyn_u: DMatrix<f64>,
    pub output: [f64; NY],
    pub out_x: DMatrix<f64>,
    pub out_u: DMatrix<f64>,
    pub residuals: StageResiduals,
    /// Jᵀ_y Q J_y + blkdiag(Q_ū, Q_ε) over (x̄, ū, ε).
    pub gn_hessian: DMatrix<f64>,
}

pub fn linearize_stage(
    x: &ExtendedState,
    u_rate: &ControlRate,
    slacks: &[f64],
    stage: &StageData,
    problem: &OcpProblem,
) -> Result<StageLinearization> {
    let model = &problem.model;
    let nx = model.nx();
    let nu = model.nu();
    let ns = slacks.len();
    let xv = x.to_vector();
    let u = u_rate.rotor_accels.as_slice();
    let (next_state, dyn_x, dyn_u) = model.rk4_sensitivity(xv.as_slice(), u, problem.step)?;
    let (output, out_x) = output_with_jacobian(model, &problem.optics, xv.as_slice(), stage)?;
    let rows = path_constraints(problem, xv.as_slice(), stage)?;
    let residuals = residuals_from_rows(problem, &rows, u, slacks);

    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&problem.weights.output));
    let mut gn_hessian = DMatrix::zeros(nx + nu + ns, nx + nu + ns);
    gn_hessian
        .view_mut((0, 0), (nx, nx))
        .copy_from(&(out_x.transpose() * q * &out_x));
    for i in RATES..RATES + 3 {
        gn_hessian[(i, i)] += problem.weights.body_rate;
    }
    for i in 0..nu {
        gn_hessian[(nx + i, nx + i)] = problem.weights.rate[i];
    }
    for j in 0..ns {
        gn_hessian[(nx + nu + j, nx + nu + j)] = problem.weights.slack[j];
    }
    Ok(StageLinearization {
        next_state,
        dyn_x,
        dyn_u,
        output,
        out_x,
        out_u: DMatrix::zeros(NY, nu),
        residuals,
        gn_hessian,
    })
}
