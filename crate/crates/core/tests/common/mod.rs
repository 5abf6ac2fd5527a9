//! Independent checks shared by the property tests and the acceptance target.
//! Each returns the measured quantity so callers decide the pass bound.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fso_nmpc::dynamics::{build_allocation, ExtendedState, GtmrModel, GtmrParams};
use fso_nmpc::ocp::{output_with_jacobian, path_constraints, OcpProblem, NY};
use fso_nmpc::scenario::Scenario;
use fso_nmpc::solver::condense::{ShootingQp, StageRow};
use fso_nmpc::solver::qp::{solve_qp, ActiveConstraint, QpProblem, QpSettings};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strictly convex QP with a known feasible point; about a third of the
/// bounds are infinite.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
    let f = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let hessian = f.transpose() * &f + DMatrix::identity(n, n) * 0.1;
    let gradient = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let ineq_matrix = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let feasible = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let az = &ineq_matrix * &feasible;
    let mut side = |v: f64, sign: f64| {
        if rng.gen_bool(0.3) {
            sign * f64::INFINITY
        } else {
            v + sign * rng.gen_range(0.0..0.5)
        }
    };
    let ineq_lower = DVector::from_fn(m, |i, _| side(az[i], -1.0));
    let ineq_upper = DVector::from_fn(m, |i, _| side(az[i], 1.0));
    let var_lower = DVector::from_fn(n, |j, _| side(feasible[j], -1.0));
    let var_upper = DVector::from_fn(n, |j, _| side(feasible[j], 1.0));
    QpProblem { hessian, gradient, ineq_matrix, ineq_lower, ineq_upper, var_lower, var_upper }
}

/// Largest KKT residual over `count` random QPs.
pub fn worst_qp_kkt(count: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let settings = QpSettings { max_iter: 2000, ..Default::default() };
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=30);
            let m = rng.gen_range(0..=60);
            let qp = random_feasible_qp(&mut rng, n, m);
            let sol = solve_qp(&qp, None, &settings).expect("feasible QP");
            sol.kkt(&qp).max()
        })
        .fold(0.0, f64::max)
}

pub fn random_shooting_qp(rng: &mut ChaCha8Rng, n: usize) -> ShootingQp {
    let (nx, nu, ns, ny) = (4, 2, 1, 3);
    let mat = |rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
    let vec = |rng: &mut ChaCha8Rng, r: usize, s: f64| DVector::from_fn(r, |_, _| rng.gen_range(-s..s));
    let rows = (0..=n)
        .map(|_| {
            vec![
                StageRow { value: rng.gen_range(-0.2..0.2), jac: vec(rng, nx, 1.0), lower: -0.3, upper: 0.3, slack: None },
                StageRow {
                    value: rng.gen_range(-0.5..0.5),
                    jac: vec(rng, nx, 1.0),
                    lower: 0.2,
                    upper: f64::INFINITY,
                    slack: Some(0),
                },
            ]
        })
        .collect();
    ShootingQp {
        nx,
        nu,
        ns,
        dyn_x: (0..n).map(|_| DMatrix::identity(nx, nx) + mat(rng, nx, nx, 0.3)).collect(),
        dyn_u: (0..n).map(|_| mat(rng, nx, nu, 1.0)).collect(),
        gaps: (0..n).map(|_| vec(rng, nx, 0.05)).collect(),
        dx0: vec(rng, nx, 0.1),
        out_jac: (0..=n).map(|_| mat(rng, ny, nx, 1.0)).collect(),
        out_res: (0..=n).map(|_| vec(rng, ny, 1.0)).collect(),
        out_weight: DVector::from_fn(ny, |_, _| rng.gen_range(0.1..2.0)),
        u_ref: (0..n).map(|_| vec(rng, nu, 0.2)).collect(),
        u_weight: DVector::from_fn(nu, |_, _| rng.gen_range(0.1..1.0)),
        u_lower: DVector::from_element(nu, -0.5),
        u_upper: DVector::from_element(nu, 0.5),
        slack_weight: DVector::from_element(ns, 100.0),
        rows,
    }
}

/// Solves the sparse equality-constrained KKT system in (Δx, Δu, ε) with the
/// working set of the condensed solution fixed, and returns the largest
/// difference between the two (Δu, ε).
pub fn condensed_vs_sparse(sq: &ShootingQp) -> f64 {
    let cq = sq.condense(0.0).expect("condense");
    let sol = solve_qp(&cq.qp, None, &QpSettings { max_iter: 2000, ..Default::default() }).expect("QP");
    let (du_c, eps_c) = sq.split(&sol.primal);

    let n = sq.horizon();
    let (nx, nu) = (sq.nx, sq.nu);
    let slack_cols = sq.slack_columns();
    // sparse variable layout: dx_0..dx_N, du_0..du_{N-1}, then used slacks
    let xi = |k: usize| k * nx;
    let ui = |k: usize| (n + 1) * nx + k * nu;
    let base_s = (n + 1) * nx + n * nu;
    let si = |c: usize| base_s + (c - n * nu);
    let nw = base_s + (cq.qp.n() - n * nu);

    let mut h = DMatrix::<f64>::zeros(nw, nw);
    let mut g = DVector::<f64>::zeros(nw);
    let w = DMatrix::from_diagonal(&sq.out_weight);
    for k in 0..=n {
        let jt = sq.out_jac[k].transpose();
        h.view_mut((xi(k), xi(k)), (nx, nx)).copy_from(&(&jt * &w * &sq.out_jac[k] * 2.0));
        g.rows_mut(xi(k), nx).copy_from(&(&jt * &w * &sq.out_res[k] * 2.0));
        for (s, c) in slack_cols[k].iter().enumerate() {
            if let Some(c) = c {
                h[(si(*c), si(*c))] = 2.0 * sq.slack_weight[s];
            }
        }
    }
    for k in 0..n {
        for i in 0..nu {
            h[(ui(k) + i, ui(k) + i)] = 2.0 * sq.u_weight[i];
            g[ui(k) + i] = 2.0 * sq.u_weight[i] * sq.u_ref[k][i];
        }
    }

    let mut eq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..nx {
        let mut a = DVector::zeros(nw);
        a[xi(0) + i] = 1.0;
        eq_rows.push((a, sq.dx0[i]));
    }
    for k in 0..n {
        for i in 0..nx {
            let mut a = DVector::zeros(nw);
            a[xi(k + 1) + i] = 1.0;
            for j in 0..nx {
                a[xi(k) + j] -= sq.dyn_x[k][(i, j)];
            }
            for j in 0..nu {
                a[ui(k) + j] -= sq.dyn_u[k][(i, j)];
            }
            eq_rows.push((a, sq.gaps[k][i]));
        }
    }
    for c in &sol.active_set {
        match *c {
            ActiveConstraint::RowLower(r) | ActiveConstraint::RowUpper(r) => {
                let (k, ri) = cq.row_origin[r];
                let row = &sq.rows[k][ri];
                let bound = if matches!(c, ActiveConstraint::RowLower(_)) { row.lower } else { row.upper };
                let mut a = DVector::zeros(nw);
                a.rows_mut(xi(k), nx).copy_from(&row.jac);
                if let Some(s) = row.slack {
                    a[si(slack_cols[k][s].expect("slack column"))] = 1.0;
                }
                eq_rows.push((a, bound - row.value));
            }
            ActiveConstraint::VarLower(j) | ActiveConstraint::VarUpper(j) => {
                let bound =
                    if matches!(c, ActiveConstraint::VarLower(_)) { cq.qp.var_lower[j] } else { cq.qp.var_upper[j] };
                let mut a = DVector::zeros(nw);
                let col = if j < n * nu { ui(j / nu) + j % nu } else { si(j) };
                a[col] = 1.0;
                eq_rows.push((a, bound));
            }
        }
    }

    let me = eq_rows.len();
    let mut kkt = DMatrix::<f64>::zeros(nw + me, nw + me);
    let mut rhs = DVector::<f64>::zeros(nw + me);
    kkt.view_mut((0, 0), (nw, nw)).copy_from(&h);
    rhs.rows_mut(0, nw).copy_from(&(-&g));
    for (r, (a, b)) in eq_rows.iter().enumerate() {
        for j in 0..nw {
            kkt[(nw + r, j)] = a[j];
            kkt[(j, nw + r)] = a[j];
        }
        rhs[nw + r] = *b;
    }
    let z = kkt.lu().solve(&rhs).expect("nonsingular KKT matrix");

    let mut diff: f64 = 0.0;
    for k in 0..n {
        for i in 0..nu {
            diff = diff.max((z[ui(k) + i] - du_c[k][i]).abs());
        }
    }
    for k in 0..=n {
        for (s, c) in slack_cols[k].iter().enumerate() {
            if let Some(c) = c {
                diff = diff.max((z[si(*c)] - eps_c[k][s]).abs());
            }
        }
    }
    diff
}

/// Largest condensed-vs-sparse discrepancy over random instances with
/// horizons 1..=5.
pub fn worst_condensing_gap(per_horizon: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for n in 1..=5 {
        for _ in 0..per_horizon {
            worst = worst.max(condensed_vs_sparse(&random_shooting_qp(&mut rng, n)));
        }
    }
    worst
}

fn random_state(rng: &mut ChaCha8Rng, around: Vector3<f64>) -> ExtendedState {
    let mut v = |s: f64| rng.gen_range(-s..s);
    let mut x = ExtendedState::hover(&GtmrParams::tilted_hexarotor(), around + Vector3::new(v(0.3), v(0.3), v(0.2)));
    x.body.euler = Vector3::new(v(0.5), v(0.5), v(3.0));
    x.body.velocity = Vector3::new(v(2.0), v(2.0), v(1.0));
    x.body.body_rates = Vector3::new(v(1.0), v(1.0), v(1.0));
    for g in x.rotor_speeds.iter_mut() {
        *g = rng.gen_range(30.0..90.0);
    }
    x
}

/// Row-scaled discrepancy between an analytic Jacobian and central
/// differences of `f` at `x`.
fn fd_mismatch(f: &dyn Fn(&[f64]) -> DVector<f64>, x: &[f64], analytic: &DMatrix<f64>) -> f64 {
    let mut fd = DMatrix::zeros(analytic.nrows(), x.len());
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        fd.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    let mut worst: f64 = 0.0;
    for i in 0..fd.nrows() {
        let scale = fd.row(i).amax().max(analytic.row(i).amax()).max(1e-6);
        worst = worst.max((fd.row(i) - analytic.row(i)).amax() / scale);
    }
    worst
}

fn problem_for(scenario: &Scenario) -> OcpProblem {
    let model = GtmrModel::new(scenario.gtmr.clone()).expect("model");
    OcpProblem {
        horizon_steps: 1,
        step: scenario.horizon_step,
        initial_state: scenario.mrav_initial(),
        stages: vec![scenario.stage_data(0.0), scenario.stage_data(scenario.horizon_step)],
        weights: scenario.weights.clone(),
        model,
        optics: scenario.optics.clone(),
        safety_margin: scenario.safety_margin + scenario.safety_backoff,
    }
}

/// Worst finite-difference mismatch of the continuous state Jacobian, the
/// RK4 sensitivities, the output Jacobian and the path-constraint gradients
/// over `points` random states along the default mission.
pub fn worst_jacobian_mismatch(points: usize, seed: u64) -> f64 {
    let scenario = Scenario::default();
    let problem = problem_for(&scenario);
    let model = &problem.model;
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let t = rng.gen_range(0.0..scenario.duration);
        let stage = scenario.stage_data(t);
        let x = random_state(&mut rng, stage.rx_pos + Vector3::new(0.0, 0.0, 1.0)).to_vector();
        let u: Vec<f64> = (0..model.nu()).map(|_| rng.gen_range(-200.0..400.0)).collect();

        let a = model.state_jacobian(x.as_slice()).expect("state jacobian");
        worst = worst.max(fd_mismatch(&|z| model.derivative(z, &u).expect("derivative"), x.as_slice(), &a));

        let (_, fx, fu) = model.rk4_sensitivity(x.as_slice(), &u, problem.step).expect("rk4");
        worst = worst.max(fd_mismatch(&|z| model.rk4(z, &u, problem.step).expect("rk4"), x.as_slice(), &fx));
        let x_fixed = x.clone();
        worst = worst.max(fd_mismatch(
            &|v| model.rk4(x_fixed.as_slice(), v, problem.step).expect("rk4"),
            &u,
            &fu,
        ));

        let output = |z: &[f64]| {
            let (y, _) = output_with_jacobian(model, &problem.optics, z, &stage).expect("output");
            DVector::from_column_slice(&y)
        };
        let (_, c) = output_with_jacobian(model, &problem.optics, x.as_slice(), &stage).expect("output");
        assert_eq!(c.nrows(), NY);
        worst = worst.max(fd_mismatch(&output, x.as_slice(), &c));

        let rows = path_constraints(&problem, x.as_slice(), &stage).expect("constraints");
        let jac = DMatrix::from_fn(rows.len(), x.len(), |i, j| rows[i].jac[j]);
        let values = |z: &[f64]| {
            let r = path_constraints(&problem, z, &stage).expect("constraints");
            DVector::from_iterator(r.len(), r.iter().map(|c| c.value))
        };
        worst = worst.max(fd_mismatch(&values, x.as_slice(), &jac));
    }
    worst
}

/// ‖ẋ‖ at the hover equilibrium of the coplanar and the tilted hexarotor.
pub fn hover_derivative_norms() -> (f64, f64) {
    let norm = |p: GtmrParams| {
        let x = ExtendedState::hover(&p, Vector3::new(0.3, -1.0, 2.0)).to_vector();
        let model = GtmrModel::new(p).expect("model");
        model.derivative(x.as_slice(), &vec![0.0; model.nu()]).expect("derivative").norm()
    };
    (norm(GtmrParams::coplanar_hexarotor()), norm(GtmrParams::tilted_hexarotor()))
}

pub fn allocation_ranks() -> (usize, usize) {
    let rank = |p: GtmrParams| build_allocation(&p).expect("allocation").rank(1e-9);
    (rank(GtmrParams::coplanar_hexarotor()), rank(GtmrParams::tilted_hexarotor()))
}

/// Observed convergence order of RK4 on a tumbling unpowered flight, from
/// step-halving against a fine-step reference.
pub fn rk4_observed_order() -> f64 {
    let p = GtmrParams::tilted_hexarotor();
    let mut x0 = ExtendedState::hover(&p, Vector3::zeros());
    x0.rotor_speeds.fill(0.0);
    x0.body.velocity = Vector3::new(1.0, 0.5, 3.0);
    x0.body.body_rates = Vector3::new(0.6, -0.4, 1.2);
    let model = GtmrModel::new(p).expect("model");
    let u = vec![0.0; model.nu()];
    let horizon = 1.0;
    let integrate = |steps: usize| {
        let dt = horizon / steps as f64;
        let mut x = x0.to_vector();
        for _ in 0..steps {
            x = model.rk4(x.as_slice(), &u, dt).expect("rk4");
        }
        x
    };
    let reference = integrate(20_000);
    let errors: Vec<f64> = [10, 20, 40, 80].iter().map(|&s| (integrate(s) - &reference).norm()).collect();
    errors.windows(2).map(|e| (e[0] / e[1]).log2()).fold(f64::INFINITY, f64::min)
}
