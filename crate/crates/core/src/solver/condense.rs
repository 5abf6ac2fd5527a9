//! Multiple-shooting QP in deviation variables and its condensed form.
//!
//! ```text
//! Δx₀ = dx0,   Δx_{k+1} = A_k Δx_k + B_k Δu_k + c_k
//! J = Σ_{k=0..N} ‖C_k Δx_k + r_k‖²_{W_k} + Σ_{k<N} ‖ū_k + Δu_k‖²_{Q_u} + Σ_k ‖ε_k‖²_{Q_ε}
//! lower ≤ h + jᵀΔx_k (+ ε_{k,s}) ≤ upper,   u_lo ≤ ū_k + Δu_k ≤ u_hi,   ε ≥ 0
//! ```
//!
//! Condensing eliminates Δx, leaving z = [Δu_0 … Δu_{N−1}, ε…] where only
//! slacks used by some row get a column.

use nalgebra::{DMatrix, DVector};

use super::qp::QpProblem;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub value: f64,
    pub jac: DVector<f64>,
    pub lower: f64,
    pub upper: f64,
    pub slack: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingQp {
    pub nx: usize,
    pub nu: usize,
    pub ns: usize,
    /// N entries each.
    pub dyn_x: Vec<DMatrix<f64>>,
    pub dyn_u: Vec<DMatrix<f64>>,
    pub gaps: Vec<DVector<f64>>,
    pub dx0: DVector<f64>,
    /// N + 1 entries each.
    pub out_jac: Vec<DMatrix<f64>>,
    pub out_res: Vec<DVector<f64>>,
    pub out_weight: DVector<f64>,
    /// N entries.
    pub u_ref: Vec<DVector<f64>>,
    pub u_weight: DVector<f64>,
    pub u_lower: DVector<f64>,
    pub u_upper: DVector<f64>,
    pub slack_weight: DVector<f64>,
    /// N + 1 entries.
    pub rows: Vec<Vec<StageRow>>,
}

/// Condensed QP together with what is needed to expand its solution.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub qp: QpProblem,
    /// Free response s_k of the state deviations (Δu = 0).
    pub free_response: Vec<DVector<f64>>,
    /// Stage and local index of every QP row.
    pub row_origin: Vec<(usize, usize)>,
    /// QP column of every slack, per node.
    pub slack_columns: Vec<Vec<Option<usize>>>,
}

impl ShootingQp {
    pub fn horizon(&self) -> usize {
        self.dyn_x.len()
    }

    pub fn n_vars(&self) -> usize {
        self.horizon() * self.nu + self.slack_columns().iter().flatten().flatten().count()
    }

    pub fn u_index(&self, k: usize) -> usize {
        k * self.nu
    }

    /// QP column of slack s at node k, present only when a row uses it.
    pub fn slack_columns(&self) -> Vec<Vec<Option<usize>>> {
        let mut next = self.horizon() * self.nu;
        self.rows
            .iter()
            .map(|rows| {
                (0..self.ns)
                    .map(|s| {
                        rows.iter().any(|r| r.slack == Some(s)).then(|| {
                            next += 1;
                            next - 1
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.horizon();
        let (nx, nu) = (self.nx, self.nu);
        let mismatch = |what: &str| Err(Error::Dimension(format!("shooting QP: {what}")));
        if n == 0 {
            return mismatch("empty horizon");
        }
        if self.dyn_u.len() != n || self.gaps.len() != n || self.u_ref.len() != n {
            return mismatch("per-interval data must have N entries");
        }
        if self.out_jac.len() != n + 1 || self.out_res.len() != n + 1 || self.rows.len() != n + 1 {
            return mismatch("per-node data must have N + 1 entries");
        }
        if self.dx0.len() != nx || self.u_lower.len() != nu || self.u_upper.len() != nu {
            return mismatch("initial deviation or control bounds");
        }
        if self.u_weight.len() != nu || self.slack_weight.len() != self.ns {
            return mismatch("weights");
        }
        for k in 0..n {
            if self.dyn_x[k].shape() != (nx, nx) || self.dyn_u[k].shape() != (nx, nu) || self.gaps[k].len() != nx {
                return mismatch(&format!("dynamics at interval {k}"));
            }
            if self.u_ref[k].len() != nu {
                return mismatch(&format!("control reference at interval {k}"));
            }
        }
        let ny = self.out_weight.len();
        for k in 0..=n {
            if self.out_jac[k].shape() != (ny, nx) || self.out_res[k].len() != ny {
                return mismatch(&format!("outputs at node {k}"));
            }
            for row in &self.rows[k] {
                if row.jac.len() != nx || row.slack.is_some_and(|s| s >= self.ns) {
                    return mismatch(&format!("constraint row at node {k}"));
                }
            }
        }
        Ok(())
    }

    /// State deviations produced by a control deviation sequence.
    pub fn expand(&self, du: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut dx = Vec::with_capacity(self.horizon() + 1);
        dx.push(self.dx0.clone());
        for k in 0..self.horizon() {
            let next = &self.dyn_x[k] * &dx[k] + &self.dyn_u[k] * &du[k] + &self.gaps[k];
            dx.push(next);
        }
        dx
    }

    /// Splits a condensed variable vector into Δu and ε blocks.
    pub fn split(&self, z: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n = self.horizon();
        let du = (0..n).map(|k| z.rows(self.u_index(k), self.nu).into_owned()).collect();
        let eps = self
            .slack_columns()
            .iter()
            .map(|cols| DVector::from_iterator(self.ns, cols.iter().map(|c| c.map_or(0.0, |c| z[c]))))
            .collect();
        (du, eps)
    }

    /// Objective of the shooting QP at (Δx, Δu, ε).
    pub fn objective(&self, dx: &[DVector<f64>], du: &[DVector<f64>], eps: &[DVector<f64>]) -> f64 {
        let mut j = 0.0;
        for k in 0..=self.horizon() {
            let e = &self.out_jac[k] * &dx[k] + &self.out_res[k];
            j += e.component_mul(&e).dot(&self.out_weight);
            j += eps[k].component_mul(&eps[k]).dot(&self.slack_weight);
        }
        for k in 0..self.horizon() {
            let u = &self.u_ref[k] + &du[k];
            j += u.component_mul(&u).dot(&self.u_weight);
        }
        j
    }

    /// Builds the dense QP. `damping` is added to the whole Hessian diagonal.
    /// Rows at node 0 that carry no slack do not depend on any variable and
    /// are left out.
    pub fn condense(&self, damping: f64) -> Result<CondensedQp> {
        self.validate()?;
        let n = self.horizon();
        let (nx, nu) = (self.nx, self.nu);
        let slack_columns = self.slack_columns();
        let nz = self.n_vars();

        let mut free = Vec::with_capacity(n + 1);
        free.push(self.dx0.clone());
        for k in 0..n {
            let next = &self.dyn_x[k] * &free[k] + &self.gaps[k];
            free.push(next);
        }

        // sens[k][l] = ∂Δx_k/∂Δu_l for l < k
        let mut sens: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); n + 1];
        for k in 0..n {
            let mut next = Vec::with_capacity(k + 1);
            for g in &sens[k] {
                next.push(&self.dyn_x[k] * g);
            }
            next.push(self.dyn_u[k].clone());
            sens[k + 1] = next;
        }

        // backward recursions for the cost-to-go curvature and gradient
        let weighted = |k: usize| {
            let cw = self.out_jac[k].transpose() * DMatrix::from_diagonal(&self.out_weight);
            let w = &cw * &self.out_jac[k];
            let v = &cw * (&self.out_res[k] + &self.out_jac[k] * &free[k]);
            (w, v)
        };
        let mut big_v = vec![DMatrix::zeros(nx, nx); n + 1];
        let mut small_v = vec![DVector::zeros(nx); n + 1];
        let (w, v) = weighted(n);
        big_v[n] = w;
        small_v[n] = v;
        for k in (0..n).rev() {
            let (w, v) = weighted(k);
            let at = self.dyn_x[k].transpose();
            big_v[k] = w + &at * &big_v[k + 1] * &self.dyn_x[k];
            small_v[k] = v + &at * &small_v[k + 1];
        }

        let mut hessian = DMatrix::zeros(nz, nz);
        let mut gradient = DVector::zeros(nz);
        for j in 0..n {
            let bv = self.dyn_u[j].transpose() * &big_v[j + 1];
            for l in 0..=j {
                let block = (&bv * &sens[j + 1][l]) * 2.0;
                hessian.view_mut((j * nu, l * nu), (nu, nu)).copy_from(&block);
                if l < j {
                    hessian.view_mut((l * nu, j * nu), (nu, nu)).copy_from(&block.transpose());
                }
            }
            for i in 0..nu {
                hessian[(j * nu + i, j * nu + i)] += 2.0 * self.u_weight[i];
            }
            let gj = (self.dyn_u[j].transpose() * &small_v[j + 1]
                + self.u_ref[j].component_mul(&self.u_weight))
                * 2.0;
            gradient.rows_mut(j * nu, nu).copy_from(&gj);
        }
        // symmetrise the diagonal blocks exactly
        for j in 0..n {
            for a in 0..nu {
                for b in 0..a {
                    let (r, c) = (j * nu + a, j * nu + b);
                    let avg = 0.5 * (hessian[(r, c)] + hessian[(c, r)]);
                    hessian[(r, c)] = avg;
                    hessian[(c, r)] = avg;
                }
            }
        }
        for cols in &slack_columns {
            for (s, c) in cols.iter().enumerate() {
                if let Some(i) = *c {
                    hessian[(i, i)] = 2.0 * self.slack_weight[s];
                }
            }
        }
        for i in 0..nz {
            hessian[(i, i)] += damping;
        }

        let mut var_lower = DVector::zeros(nz);
        let mut var_upper = DVector::from_element(nz, f64::INFINITY);
        for k in 0..n {
            for i in 0..nu {
                var_lower[k * nu + i] = self.u_lower[i] - self.u_ref[k][i];
                var_upper[k * nu + i] = self.u_upper[i] - self.u_ref[k][i];
            }
        }

        let mut row_origin = Vec::new();
        for (k, rows) in self.rows.iter().enumerate() {
            for (r, row) in rows.iter().enumerate() {
                if k == 0 && row.slack.is_none() {
                    continue;
                }
                row_origin.push((k, r));
            }
        }
        let m = row_origin.len();
        let mut ineq_matrix = DMatrix::zeros(m, nz);
        let mut ineq_lower = DVector::zeros(m);
        let mut ineq_upper = DVector::zeros(m);
        for (i, &(k, r)) in row_origin.iter().enumerate() {
            let row = &self.rows[k][r];
            let jt = row.jac.transpose();
            for (l, g) in sens[k].iter().enumerate() {
                ineq_matrix.view_mut((i, l * nu), (1, nu)).copy_from(&(&jt * g));
            }
            if let Some(s) = row.slack {
                let col = slack_columns[k][s].expect("slack used by a row has a column");
                ineq_matrix[(i, col)] = 1.0;
            }
            let offset = row.value + row.jac.dot(&free[k]);
            ineq_lower[i] = row.lower - offset;
            ineq_upper[i] = row.upper - offset;
        }

        Ok(CondensedQp {
            qp: QpProblem {
                hessian,
                gradient,
                ineq_matrix,
                ineq_lower,
                ineq_upper,
                var_lower,
                var_upper,
            },
            free_response: free,
            row_origin,
            slack_columns,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::solver::qp::{solve_qp, QpSettings};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// x⁺ = a x + b u + c, scalar output y = x with residual r, one stage.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn scalar_toy(a: f64, b: f64, c: f64, x0: f64, r: [f64; 2], w: f64, qu: f64, ubar: f64) -> ShootingQp {
        ShootingQp {
            nx: 1,
            nu: 1,
            ns: 0,
            dyn_x: vec![dmatrix![a]],
            dyn_u: vec![dmatrix![b]],
            gaps: vec![dvector![c]],
            dx0: dvector![x0],
            out_jac: vec![dmatrix![1.0], dmatrix![1.0]],
            out_res: vec![dvector![r[0]], dvector![r[1]]],
            out_weight: dvector![w],
            u_ref: vec![dvector![ubar]],
            u_weight: dvector![qu],
            u_lower: dvector![f64::NEG_INFINITY],
            u_upper: dvector![f64::INFINITY],
            slack_weight: DVector::zeros(0),
            rows: vec![Vec::new(), Vec::new()],
        }
    }

    #[test]
    fn one_step_scalar_elimination() {
        let (a, b, c, x0, r1, w, qu, ubar) = (0.9, 0.5, 0.1, 0.3, 0.2, 3.0, 0.7, 0.4);
        let toy = scalar_toy(a, b, c, x0, [1.0, r1], w, qu, ubar);
        let cq = toy.condense(0.0).unwrap();
        // J(Δu) = w (a x0 + c + b Δu + r1)² + qu (ū + Δu)² + const
        let s1 = a * x0 + c;
        assert_relative_eq!(cq.qp.hessian[(0, 0)], 2.0 * (w * b * b + qu), epsilon = 1e-14);
        assert_relative_eq!(cq.qp.gradient[0], 2.0 * (w * b * (s1 + r1) + qu * ubar), epsilon = 1e-14);
        assert_relative_eq!(cq.free_response[1][0], s1, epsilon = 1e-15);
    }

    #[test]
    fn no_rows_gives_box_only() {
        let toy = scalar_toy(1.0, 1.0, 0.0, 0.0, [0.0, 0.0], 1.0, 1.0, 0.0);
        let cq = toy.condense(1e-8).unwrap();
        assert_eq!(cq.qp.m(), 0);
    }

    pub(crate) fn random_shooting_qp(rng: &mut ChaCha8Rng, n: usize) -> ShootingQp {
        let (nx, nu, ns, ny) = (3, 2, 1, 2);
        let mat = |rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
        let vec = |rng: &mut ChaCha8Rng, r: usize, s: f64| DVector::from_fn(r, |_, _| rng.gen_range(-s..s));
        let rows = (0..=n)
            .map(|_| {
                vec![
                    StageRow {
                        value: rng.gen_range(-0.2..0.2),
                        jac: vec(rng, nx, 1.0),
                        lower: -0.3,
                        upper: 0.3,
                        slack: None,
                    },
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

    #[test]
    fn condensed_objective_matches_shooting_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 1..=5 {
            let sq = random_shooting_qp(&mut rng, n);
            let cq = sq.condense(0.0).unwrap();
            let z0 = DVector::zeros(sq.n_vars());
            let (du0, eps0) = sq.split(&z0);
            let base = sq.objective(&sq.expand(&du0), &du0, &eps0);
            for _ in 0..5 {
                let z = DVector::from_fn(sq.n_vars(), |_, _| rng.gen_range(-1.0..1.0));
                let (du, eps) = sq.split(&z);
                let direct = sq.objective(&sq.expand(&du), &du, &eps) - base;
                assert_relative_eq!(cq.qp.objective(&z), direct, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn condensed_rows_match_expanded_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let sq = random_shooting_qp(&mut rng, 4);
        let cq = sq.condense(0.0).unwrap();
        let z = DVector::from_fn(sq.n_vars(), |_, _| rng.gen_range(-1.0..1.0));
        let (du, eps) = sq.split(&z);
        let dx = sq.expand(&du);
        let az = &cq.qp.ineq_matrix * &z;
        for (i, &(k, r)) in cq.row_origin.iter().enumerate() {
            let row = &sq.rows[k][r];
            let h = row.value + row.jac.dot(&dx[k]) + row.slack.map_or(0.0, |s| eps[k][s]);
            assert_relative_eq!(az[i] - cq.qp.ineq_lower[i], h - row.lower, epsilon = 1e-12);
        }
        let sol = solve_qp(&cq.qp, None, &QpSettings { max_iter: 1000, ..Default::default() }).unwrap();
        assert!(sol.kkt(&cq.qp).max() < 1e-8);
    }
}
