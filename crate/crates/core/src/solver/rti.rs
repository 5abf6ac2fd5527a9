//! Gauss–Newton SQP on the multiple-shooting transcription. One iteration
//! per control period in real-time mode, a line-searched loop for cold
//! starts.

use nalgebra::{DMatrix, DVector};

use super::condense::{ShootingQp, StageRow};
use super::qp::{solve_qp_from, ActiveConstraint, QpSettings};
use crate::dynamics::{ControlRate, ExtendedState, RATES};
use crate::ocp::{output_with_jacobian, path_constraints, OcpProblem, PathKind, NY};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_sqp_iters: usize,
    pub max_qp_iters: usize,
    pub kkt_tol: f64,
    pub active_set_tol: f64,
    pub levenberg_damping: f64,
    /// ℓ₁ penalty of the merit function used by the line search.
    pub merit_penalty: f64,
    /// Halving line search on the merit function instead of full steps.
    pub line_search: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_sqp_iters: 1,
            max_qp_iters: 1000,
            kkt_tol: 1e-6,
            active_set_tol: 1e-9,
            levenberg_damping: 1e-8,
            merit_penalty: 1e6,
            line_search: false,
        }
    }
}

impl SolverConfig {
    pub fn cold_start() -> Self {
        Self {
            max_sqp_iters: 50,
            max_qp_iters: 2000,
            line_search: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_sqp_iters == 0 || self.max_qp_iters == 0 {
            return Err(Error::invalid("solver", "iteration limits must be positive"));
        }
        for (name, v) in [
            ("solver.kkt_tol", self.kkt_tol),
            ("solver.active_set_tol", self.active_set_tol),
            ("solver.levenberg_damping", self.levenberg_damping),
            ("solver.merit_penalty", self.merit_penalty),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleQp,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleQp => "infeasible_qp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub states: Vec<ExtendedState>,
    pub controls: Vec<ControlRate>,
    /// N + 1 entries of N_O slacks.
    pub slacks: Vec<DVector<f64>>,
    pub kkt_residual: f64,
    pub qp_iterations: usize,
    pub sqp_iterations: usize,
    pub status: SolveStatus,
    /// Nonlinear objective at the returned trajectory.
    pub cost: f64,
    pub active_set: Vec<ActiveConstraint>,
}

impl OcpSolution {
    /// Constant trajectory at `x0` with zero rotor accelerations.
    pub fn constant(x0: &ExtendedState, horizon: usize, n_obstacles: usize) -> Self {
        let nu = x0.n_rotors();
        Self {
            states: vec![x0.clone(); horizon + 1],
            controls: vec![ControlRate::zeros(nu); horizon],
            slacks: vec![DVector::zeros(n_obstacles); horizon + 1],
            kkt_residual: f64::INFINITY,
            qp_iterations: 0,
            sqp_iterations: 0,
            status: SolveStatus::MaxIter,
            cost: f64::INFINITY,
            active_set: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    fn check_dims(&self, problem: &OcpProblem) -> Result<()> {
        let n = problem.horizon_steps;
        let nu = problem.gtmr().n_rotors;
        let ok = self.states.len() == n + 1
            && self.controls.len() == n
            && self.slacks.len() == n + 1
            && self.states.iter().all(|x| x.n_rotors() == nu)
            && self.controls.iter().all(|u| u.rotor_accels.len() == nu)
            && self.slacks.iter().all(|e| e.len() == problem.n_obstacles());
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("warm start does not match the problem horizon".into()))
        }
    }
}

/// Flat iterate of the multiple-shooting problem.
#[derive(Debug, Clone)]
struct Iterate {
    x: Vec<DVector<f64>>,
    u: Vec<DVector<f64>>,
    eps: Vec<DVector<f64>>,
}

impl Iterate {
    fn from_solution(sol: &OcpSolution) -> Self {
        Self {
            x: sol.states.iter().map(|s| s.to_vector()).collect(),
            u: sol.controls.iter().map(|c| c.rotor_accels.clone()).collect(),
            eps: sol.slacks.clone(),
        }
    }
}

fn stage_error(k: usize, e: Error) -> Error {
    match e {
        Error::EulerSingularity { pitch } => Error::StageSingularity { stage: k, pitch },
        other => other,
    }
}

/// Soft rows further than this from their lower bound enter the QP as hard
/// rows without a slack column.
const SOFT_ROW_MARGIN: f64 = 0.5;

fn row_of(c: &crate::ocp::PathConstraint) -> StageRow {
    StageRow {
        value: c.value,
        jac: c.jac.clone(),
        lower: c.lower,
        upper: c.upper,
        slack: c.slack.filter(|_| c.value - c.lower < SOFT_ROW_MARGIN),
    }
}

/// An empty interval `lower > upper` becomes two one-sided rows, left for the
/// elastic phase of the QP to resolve.
fn rows_of(c: &crate::ocp::PathConstraint) -> Vec<StageRow> {
    let row = row_of(c);
    if row.lower <= row.upper {
        return vec![row];
    }
    let upper_side = StageRow { lower: f64::NEG_INFINITY, ..row.clone() };
    vec![StageRow { upper: f64::INFINITY, ..row }, upper_side]
}

/// Linearises the transcription at `it`.
fn build_shooting_qp(problem: &OcpProblem, it: &Iterate) -> Result<ShootingQp> {
    let n = problem.horizon_steps;
    let model = &problem.model;
    let gtmr = problem.gtmr();
    let w = &problem.weights;
    let mut dyn_x = Vec::with_capacity(n);
    let mut dyn_u = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);
    for k in 0..n {
        let (next, fx, fu) = model
            .rk4_sensitivity(it.x[k].as_slice(), it.u[k].as_slice(), problem.step)
            .map_err(|e| stage_error(k, e))?;
        gaps.push(next - &it.x[k + 1]);
        dyn_x.push(fx);
        dyn_u.push(fu);
    }
    let mut out_jac = Vec::with_capacity(n + 1);
    let mut out_res = Vec::with_capacity(n + 1);
    let mut rows = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let stage = &problem.stages[k];
        let (y, c) = output_with_jacobian(model, &problem.optics, it.x[k].as_slice(), stage)?;
        let yd = stage.reference.to_array();
        if w.body_rate > 0.0 {
            let nx = model.nx();
            out_res.push(DVector::from_fn(NY + 3, |i, _| {
                if i < NY { y[i] - yd[i] } else { it.x[k][RATES + i - NY] }
            }));
            out_jac.push(DMatrix::from_fn(NY + 3, nx, |i, j| {
                if i < NY { c[(i, j)] } else if j == RATES + i - NY { 1.0 } else { 0.0 }
            }));
        } else {
            out_res.push(DVector::from_fn(NY, |i, _| y[i] - yd[i]));
            out_jac.push(c);
        }
        rows.push(
            path_constraints(problem, it.x[k].as_slice(), stage)?
                .iter()
                .flat_map(rows_of)
                .collect(),
        );
    }
    let nu = gtmr.n_rotors;
    Ok(ShootingQp {
        nx: model.nx(),
        nu,
        ns: problem.n_obstacles(),
        dyn_x,
        dyn_u,
        gaps,
        dx0: problem.initial_state.to_vector() - &it.x[0],
        out_jac,
        out_res,
        out_weight: if w.body_rate > 0.0 {
            DVector::from_iterator(NY + 3, w.output.iter().copied().chain([w.body_rate; 3]))
        } else {
            DVector::from_column_slice(&w.output)
        },
        u_ref: it.u.clone(),
        u_weight: w.rate.clone(),
        u_lower: DVector::from_element(nu, gtmr.accel_min),
        u_upper: DVector::from_element(nu, gtmr.accel_max),
        slack_weight: w.slack.clone(),
        rows,
    })
}

/// Objective and ℓ₁ infeasibility of an iterate of the nonlinear problem.
fn merit_terms(problem: &OcpProblem, it: &Iterate) -> Result<(f64, f64)> {
    let n = problem.horizon_steps;
    let model = &problem.model;
    let w = &problem.weights;
    let mut cost = 0.0;
    let mut infeas = (problem.initial_state.to_vector() - &it.x[0]).lp_norm(1);
    for k in 0..=n {
        let stage = &problem.stages[k];
        let (y, _) = output_with_jacobian(model, &problem.optics, it.x[k].as_slice(), stage)?;
        let yd = stage.reference.to_array();
        cost += (0..NY).map(|i| w.output[i] * (y[i] - yd[i]).powi(2)).sum::<f64>();
        cost += w.body_rate * it.x[k].rows(RATES, 3).norm_squared();
        cost += it.eps[k].component_mul(&it.eps[k]).dot(&w.slack);
        if k < n {
            cost += it.u[k].component_mul(&it.u[k]).dot(&w.rate);
            let next = model
                .rk4(it.x[k].as_slice(), it.u[k].as_slice(), problem.step)
                .map_err(|e| stage_error(k, e))?;
            infeas += (next - &it.x[k + 1]).lp_norm(1);
        }
        if k > 0 {
            infeas += row_violation(problem, it, k)?.1;
        }
    }
    Ok((cost, infeas))
}

/// Largest and summed violation of the path constraints at node k.
fn row_violation(problem: &OcpProblem, it: &Iterate, k: usize) -> Result<(f64, f64)> {
    let rows = path_constraints(problem, it.x[k].as_slice(), &problem.stages[k])?;
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for r in &rows {
        let v = r.value + r.slack.map_or(0.0, |s| it.eps[k][s]);
        let viol = (r.lower - v).max(v - r.upper).max(0.0);
        max = max.max(viol);
        sum += viol;
    }
    Ok((max, sum))
}

/// Raises each slack to the smallest value satisfying its nonlinear row at
/// the current states.
fn reset_slacks(problem: &OcpProblem, it: &mut Iterate) -> Result<()> {
    for k in 0..it.x.len() {
        for r in path_constraints(problem, it.x[k].as_slice(), &problem.stages[k])? {
            if let Some(s) = r.slack {
                it.eps[k][s] = it.eps[k][s].max(r.lower - r.value);
            }
        }
    }
    Ok(())
}

struct StepOutcome {
    du: Vec<DVector<f64>>,
    dx: Vec<DVector<f64>>,
    eps: Vec<DVector<f64>>,
    stationarity: f64,
    complementarity: f64,
    qp_iterations: usize,
    infeasible: bool,
    active_set: Vec<ActiveConstraint>,
}

fn sqp_step(problem: &OcpProblem, it: &Iterate, config: &SolverConfig) -> Result<(StepOutcome, f64)> {
    let sq = build_shooting_qp(problem, it)?;
    let cq = sq.condense(config.levenberg_damping)?;
    let qp = &cq.qp;
    let gap = sq.gaps.iter().map(|g| g.amax()).fold(0.0, f64::max);

    // start: Δu = 0, slacks at the smallest value satisfying their rows
    let mut z0 = DVector::<f64>::zeros(qp.n());
    for (i, &(k, r)) in cq.row_origin.iter().enumerate() {
        if let Some(s) = sq.rows[k][r].slack {
            let idx = cq.slack_columns[k][s].expect("slack column");
            z0[idx] = z0[idx].max(qp.ineq_lower[i]);
        }
    }
    let settings = QpSettings {
        max_iter: config.max_qp_iters,
        feas_tol: config.active_set_tol,
        kkt_tol: config.kkt_tol,
        accept_elastic: true,
        ..QpSettings::default()
    };
    let sol = solve_qp_from(qp, Some(&z0), None, &settings)?;
    let (du, eps) = sq.split(&sol.primal);
    let dx = sq.expand(&du);

    let mut dz = sol.primal.clone();
    for (k, cols) in cq.slack_columns.iter().enumerate() {
        for (s, c) in cols.iter().enumerate() {
            if let Some(c) = *c {
                dz[c] -= it.eps[k][s];
            }
        }
    }
    let stationarity = (&qp.hessian * &dz).amax();
    let complementarity = sol.kkt(qp).complementarity;
    let outcome = StepOutcome {
        du,
        dx,
        eps,
        stationarity,
        complementarity,
        qp_iterations: sol.iterations,
        infeasible: sol.elastic_violation > 0.0,
        active_set: sol.active_set,
    };
    Ok((outcome, gap))
}

fn apply(it: &Iterate, step: &StepOutcome, alpha: f64) -> Iterate {
    Iterate {
        x: it.x.iter().zip(&step.dx).map(|(x, d)| x + d * alpha).collect(),
        u: it.u.iter().zip(&step.du).map(|(u, d)| u + d * alpha).collect(),
        eps: it
            .eps
            .iter()
            .zip(&step.eps)
            .map(|(e, n)| (e * (1.0 - alpha) + n * alpha).map(|v| v.max(0.0)))
            .collect(),
    }
}

/// Runs `config.max_sqp_iters` Gauss–Newton iterations from `warm`.
pub fn rti_step(problem: &OcpProblem, warm: &OcpSolution, config: &SolverConfig) -> Result<OcpSolution> {
    problem.validate()?;
    config.validate()?;
    warm.check_dims(problem)?;
    let mut it = Iterate::from_solution(warm);
    let mut qp_iterations = 0;
    let mut status = SolveStatus::MaxIter;
    let mut kkt = f64::INFINITY;
    let mut active_set = Vec::new();
    let mut sqp_iterations = 0;
    for _ in 0..config.max_sqp_iters {
        sqp_iterations += 1;
        let (step, gap) = sqp_step(problem, &it, config)?;
        qp_iterations += step.qp_iterations;
        let mut viol: f64 = 0.0;
        for k in 1..=problem.horizon_steps {
            viol = viol.max(row_violation(problem, &it, k)?.0);
        }
        let x0_gap = (problem.initial_state.to_vector() - &it.x[0]).amax();
        kkt = step.stationarity.max(gap).max(x0_gap).max(viol).max(step.complementarity);

        it = if config.line_search {
            line_search(problem, &it, &step, config.merit_penalty)?
        } else {
            apply(&it, &step, 1.0)
        };
        active_set = step.active_set;
        if step.infeasible {
            status = SolveStatus::InfeasibleQp;
            kkt = f64::INFINITY;
        } else if kkt < config.kkt_tol {
            status = SolveStatus::Converged;
            break;
        } else {
            status = SolveStatus::MaxIter;
        }
    }
    for (k, x) in it.x.iter().enumerate() {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("rti", format!("non-finite state at node {k}")));
        }
    }
    reset_slacks(problem, &mut it)?;
    let (cost, _) = merit_terms(problem, &it)?;
    Ok(OcpSolution {
        states: it.x.iter().map(|x| ExtendedState::from_slice(x.as_slice())).collect(),
        controls: it.u.iter().map(|u| ControlRate { rotor_accels: u.clone() }).collect(),
        slacks: it.eps,
        kkt_residual: kkt,
        qp_iterations,
        sqp_iterations,
        status,
        cost,
        active_set,
    })
}

/// Replaces the states by the nonlinear simulation of the controls from the
/// measured initial state.
fn simulate(problem: &OcpProblem, it: &Iterate) -> Result<Iterate> {
    let mut x = Vec::with_capacity(it.x.len());
    x.push(problem.initial_state.to_vector());
    for (k, u) in it.u.iter().enumerate() {
        let next = problem
            .model
            .rk4(x[k].as_slice(), u.as_slice(), problem.step)
            .map_err(|e| stage_error(k, e))?;
        x.push(next);
    }
    Ok(Iterate { x, u: it.u.clone(), eps: it.eps.clone() })
}

/// Halving search on the ℓ₁ merit. Trial points are evaluated on their
/// simulated trajectory, so the shooting gaps left by the linearisation do
/// not enter the merit.
fn line_search(problem: &OcpProblem, it: &Iterate, step: &StepOutcome, penalty: f64) -> Result<Iterate> {
    let merit = |it: &Iterate| -> Result<f64> {
        let (c, v) = merit_terms(problem, it)?;
        Ok(c + penalty * v)
    };
    let phi0 = merit(it)?;
    let mut alpha = 1.0;
    let mut last = None;
    for _ in 0..12 {
        match simulate(problem, &apply(it, step, alpha)) {
            Ok(trial) => match merit(&trial) {
                Ok(phi) if phi < phi0 => return Ok(trial),
                Ok(_) => last = Some(trial),
                Err(Error::DegenerateRange { .. }) => {}
                Err(e) => return Err(e),
            },
            Err(Error::StageSingularity { .. }) => {}
            Err(e) => return Err(e),
        }
        alpha *= 0.5;
    }
    Ok(last.unwrap_or_else(|| it.clone()))
}

/// Cold solve with the line-searched configuration.
pub fn cold_solve(problem: &OcpProblem, config: &SolverConfig) -> Result<OcpSolution> {
    let warm = OcpSolution::constant(&problem.initial_state, problem.horizon_steps, problem.n_obstacles());
    rti_step(problem, &warm, config)
}

/// Shifts the trajectory by one node, duplicating the tail, and replaces the
/// first state with `new_initial`.
pub fn shift_warm_start(prev: &OcpSolution, new_initial: &ExtendedState) -> OcpSolution {
    advance_warm_start(prev, 1.0, new_initial)
}

/// Moves the trajectory forward by `fraction` of a shooting interval,
/// interpolating linearly between nodes.
pub fn advance_warm_start(prev: &OcpSolution, fraction: f64, new_initial: &ExtendedState) -> OcpSolution {
    let n = prev.horizon();
    let f = fraction.clamp(0.0, 1.0);
    let lerp = |a: &DVector<f64>, b: &DVector<f64>| a * (1.0 - f) + b * f;
    let xs: Vec<DVector<f64>> = prev.states.iter().map(|s| s.to_vector()).collect();
    let mut states: Vec<ExtendedState> = (0..=n)
        .map(|k| {
            let v = lerp(&xs[k], &xs[(k + 1).min(n)]);
            ExtendedState::from_slice(v.as_slice())
        })
        .collect();
    states[0] = new_initial.clone();
    let controls = (0..n)
        .map(|k| ControlRate {
            rotor_accels: lerp(&prev.controls[k].rotor_accels, &prev.controls[(k + 1).min(n - 1)].rotor_accels),
        })
        .collect();
    let slacks = (0..=n).map(|k| lerp(&prev.slacks[k], &prev.slacks[(k + 1).min(n)])).collect();
    OcpSolution {
        states,
        controls,
        slacks,
        ..prev.clone()
    }
}

/// Range and cone margins predicted by a solution: the smallest value of
/// min(ℓ − d̲, d̄ − ℓ) and of c_δ − cos ψ over nodes 1..N.
pub fn predicted_margins(problem: &OcpProblem, sol: &OcpSolution) -> Result<(f64, f64)> {
    let mut range_margin = f64::INFINITY;
    let mut cone_margin = f64::INFINITY;
    for k in 1..sol.states.len() {
        let x = sol.states[k].to_vector();
        for r in path_constraints(problem, x.as_slice(), &problem.stages[k])? {
            match r.kind {
                PathKind::Range => range_margin = range_margin.min((r.value - r.lower).min(r.upper - r.value)),
                PathKind::Cone => cone_margin = cone_margin.min(r.value - r.lower),
                _ => {}
            }
        }
    }
    Ok((range_margin, cone_margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::tests::hover_problem;
    use nalgebra::Vector3;

    #[test]
    fn stationary_hover_gives_zero_update() {
        let prob = hover_problem(Vector3::new(0.0, 0.0, 1.0), 10);
        let warm = OcpSolution::constant(&prob.initial_state, 10, 1);
        let sol = rti_step(&prob, &warm, &SolverConfig::default()).unwrap();
        assert!(sol.kkt_residual < 1e-8, "{}", sol.kkt_residual);
        assert_eq!(sol.status, SolveStatus::Converged);
        for (a, b) in sol.states.iter().zip(&warm.states) {
            assert!((a.to_vector() - b.to_vector()).amax() < 1e-8);
        }
    }

    #[test]
    fn shift_bookkeeping() {
        let prob = hover_problem(Vector3::new(0.0, 0.0, 1.0), 4);
        let mut sol = OcpSolution::constant(&prob.initial_state, 4, 1);
        for (k, s) in sol.states.iter_mut().enumerate() {
            s.body.position.x = k as f64;
        }
        for (k, u) in sol.controls.iter_mut().enumerate() {
            u.rotor_accels.fill(k as f64);
        }
        let x0 = prob.initial_state.clone();
        let once = shift_warm_start(&sol, &x0);
        for k in 1..3 {
            assert_eq!(once.states[k].body.position.x, (k + 1) as f64);
            assert_eq!(once.controls[k].rotor_accels[0], (k + 1) as f64);
        }
        assert_eq!(once.states[4].body.position.x, 4.0);
        assert_eq!(once.states[0], x0);
        let twice = shift_warm_start(&once, &x0);
        assert_eq!(twice.states[2].body.position.x, 4.0);
        assert_eq!(twice.states[4].body.position.x, 4.0);
        assert_eq!(twice.controls[3].rotor_accels[0], 3.0);
    }

    fn iterate_history(prob: &OcpProblem, iters: usize) -> (OcpSolution, Vec<f64>, Vec<f64>) {
        let config = SolverConfig { max_sqp_iters: 1, ..SolverConfig::cold_start() };
        let mut sol = OcpSolution::constant(&prob.initial_state, prob.horizon_steps, prob.n_obstacles());
        let mut costs = Vec::new();
        let mut kkts = Vec::new();
        for _ in 0..iters {
            sol = rti_step(prob, &sol, &config).unwrap();
            costs.push(sol.cost);
            kkts.push(sol.kkt_residual);
        }
        (sol, costs, kkts)
    }

    #[test]
    fn cold_start_toward_displaced_range_converges() {
        let mut prob = hover_problem(Vector3::new(0.0, 0.0, 1.0), 20);
        prob.weights.rate.fill(1e-3);
        for s in prob.stages.iter_mut() {
            s.reference.range = 1.1;
        }
        let (_, costs, kkts) = iterate_history(&prob, 20);
        assert!(kkts.iter().any(|k| *k < 1e-6), "{kkts:?}");
        for w in costs[2..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{costs:?}");
        }
    }

    #[test]
    fn range_upper_bound_becomes_active() {
        let mut prob = hover_problem(Vector3::new(0.0, 0.0, 1.0), 50);
        prob.weights.rate.fill(1e-3);
        for s in prob.stages.iter_mut() {
            s.rx_pos.z -= 0.39;
            s.reference.range = 1.6;
        }
        let (sol, _, _) = iterate_history(&prob, 30);
        assert_eq!(sol.status, SolveStatus::Converged);
        let ranges: Vec<f64> = (1..=50)
            .map(|k| {
                let x = sol.states[k].to_vector();
                let rows = path_constraints(&prob, x.as_slice(), &prob.stages[k]).unwrap();
                rows.iter().find(|r| r.kind == PathKind::Range).unwrap().value
            })
            .collect();
        assert!(ranges.iter().all(|r| *r <= 1.4 + 1e-6));
        assert!((ranges[49] - 1.4).abs() < 1e-4, "{}", ranges[49]);
        assert!(ranges[40..].windows(2).all(|w| w[1] >= w[0]));
    }
}
