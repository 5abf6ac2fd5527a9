//! Dense convex QP
//!
//! ```text
//! minimise   ½ zᵀ H z + gᵀ z
//! subject to ineq_lower ≤ A z ≤ ineq_upper
//!            var_lower  ≤   z ≤ var_upper
//! ```
//!
//! solved by a range-space primal active-set method. H is factored once as
//! L Lᵀ (envelope Cholesky, so block-diagonal tails cost nothing). The working
//! set is kept as U = L⁻¹N together with the triangular factor R of UᵀU, which
//! is updated on additions and Givens-downdated on deletions. Infeasible
//! starting points are handled with a single elastic variable.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_lower: DVector<f64>,
    pub ineq_upper: DVector<f64>,
    pub var_lower: DVector<f64>,
    pub var_upper: DVector<f64>,
}

/// One side of a constraint in the working set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActiveConstraint {
    RowLower(usize),
    RowUpper(usize),
    VarLower(usize),
    VarUpper(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Primal feasibility and active-set tolerance.
    pub feas_tol: f64,
    pub kkt_tol: f64,
    /// Linear cost of the elastic variable used when the start is infeasible.
    pub elastic_penalty: f64,
    pub elastic_weight: f64,
    /// Return the minimum-violation elastic solution instead of an
    /// infeasibility error.
    pub accept_elastic: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feas_tol: 1e-9,
            kkt_tol: 1e-6,
            elastic_penalty: 1e6,
            elastic_weight: 1.0,
            accept_elastic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    /// Signed row multipliers: H z + g + Aᵀλ + ν = 0, λ ≤ 0 on an active
    /// lower side and λ ≥ 0 on an active upper side.
    pub row_duals: DVector<f64>,
    pub var_duals: DVector<f64>,
    pub active_set: Vec<ActiveConstraint>,
    pub iterations: usize,
    pub objective: f64,
    /// Remaining elastic relaxation of the general rows; zero when feasible.
    pub elastic_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_violation: f64,
    pub dual_violation: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_violation)
            .max(self.dual_violation)
            .max(self.complementarity)
    }
}

impl QpProblem {
    /// Problem with only variable bounds.
    pub fn boxed(
        hessian: DMatrix<f64>,
        gradient: DVector<f64>,
        var_lower: DVector<f64>,
        var_upper: DVector<f64>,
    ) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_lower: DVector::zeros(0),
            ineq_upper: DVector::zeros(0),
            var_lower,
            var_upper,
        }
    }

    pub fn n(&self) -> usize {
        self.gradient.len()
    }

    pub fn m(&self) -> usize {
        self.ineq_matrix.nrows()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let dims_ok = self.hessian.shape() == (n, n)
            && self.ineq_matrix.ncols() == n
            && self.ineq_lower.len() == m
            && self.ineq_upper.len() == m
            && self.var_lower.len() == n
            && self.var_upper.len() == n;
        if !dims_ok {
            return Err(Error::Dimension(format!("inconsistent QP with n = {n}, m = {m}")));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(self.hessian.as_slice())
            || !finite(self.gradient.as_slice())
            || !finite(self.ineq_matrix.as_slice())
        {
            return Err(Error::invalid("qp", "non-finite matrix entry"));
        }
        let scale = self.hessian.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::invalid("qp.hessian", format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        let ordered = |lo: &DVector<f64>, hi: &DVector<f64>| {
            lo.iter().zip(hi.iter()).all(|(l, h)| l <= h && *l < f64::INFINITY && *h > f64::NEG_INFINITY)
        };
        if !ordered(&self.ineq_lower, &self.ineq_upper) || !ordered(&self.var_lower, &self.var_upper) {
            return Err(Error::invalid("qp", "lower bound exceeds upper bound"));
        }
        Ok(())
    }

    /// Writes the plain-text dump: a header line with dimensions followed by
    /// named row-major blocks.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "qp {} {}", self.n(), self.m())?;
        let block = |w: &mut W, name: &str, mat: &DMatrix<f64>| -> std::io::Result<()> {
            writeln!(w, "{name}")?;
            for row in mat.row_iter() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
            Ok(())
        };
        let vector = |w: &mut W, name: &str, v: &DVector<f64>| -> std::io::Result<()> {
            writeln!(w, "{name}")?;
            let line: Vec<String> = v.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(" "))
        };
        block(&mut w, "hessian", &self.hessian)?;
        vector(&mut w, "gradient", &self.gradient)?;
        block(&mut w, "ineq_matrix", &self.ineq_matrix)?;
        vector(&mut w, "ineq_lower", &self.ineq_lower)?;
        vector(&mut w, "ineq_upper", &self.ineq_upper)?;
        vector(&mut w, "var_lower", &self.var_lower)?;
        vector(&mut w, "var_upper", &self.var_upper)?;
        Ok(())
    }

    pub fn parse_dump<R: BufRead>(r: R) -> Result<Self> {
        let lines = r.lines().collect::<std::io::Result<Vec<String>>>()?;
        let mut cur = DumpCursor { lines: &lines, pos: 0 };
        let (ln, header) = cur.line()?;
        let dims: Vec<&str> = header.split_whitespace().collect();
        if dims.len() != 3 || dims[0] != "qp" {
            return Err(parse_error(ln, "expected `qp <n> <m>`"));
        }
        let n: usize = dims[1].parse().map_err(|_| parse_error(ln, "bad n"))?;
        let m: usize = dims[2].parse().map_err(|_| parse_error(ln, "bad m"))?;
        let hessian = cur.matrix("hessian", n, n)?;
        let gradient = cur.vector("gradient", n)?;
        let ineq_matrix = cur.matrix("ineq_matrix", m, n)?;
        let qp = Self {
            hessian,
            gradient,
            ineq_matrix,
            ineq_lower: cur.vector("ineq_lower", m)?,
            ineq_upper: cur.vector("ineq_upper", m)?,
            var_lower: cur.vector("var_lower", n)?,
            var_upper: cur.vector("var_upper", n)?,
        };
        qp.validate()?;
        Ok(qp)
    }
}

fn parse_error(line: usize, message: &str) -> Error {
    Error::Parse { line, message: message.to_string() }
}

struct DumpCursor<'a> {
    lines: &'a [String],
    pos: usize,
}

impl DumpCursor<'_> {
    fn line(&mut self) -> Result<(usize, &str)> {
        let l = self
            .lines
            .get(self.pos)
            .ok_or_else(|| parse_error(self.pos + 1, "unexpected end of dump"))?;
        self.pos += 1;
        Ok((self.pos, l.as_str()))
    }

    fn numbers(&mut self, len: usize) -> Result<Vec<f64>> {
        let (ln, l) = self.line()?;
        let v = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_error(ln, &format!("bad number `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != len {
            return Err(parse_error(ln, &format!("expected {len} values, found {}", v.len())));
        }
        Ok(v)
    }

    fn expect(&mut self, name: &str) -> Result<()> {
        let (ln, l) = self.line()?;
        if l.trim() != name {
            return Err(parse_error(ln, &format!("expected block `{name}`")));
        }
        Ok(())
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        self.expect(name)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.numbers(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<DVector<f64>> {
        self.expect(name)?;
        Ok(DVector::from_vec(self.numbers(len)?))
    }
}

/// Row-oriented Cholesky factor restricted to the envelope of the matrix:
/// row i stores L[i][first[i]..=i].
#[derive(Debug, Clone)]
struct EnvelopeCholesky {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl EnvelopeCholesky {
    fn factor(h: &DMatrix<f64>) -> Option<Self> {
        let n = h.nrows();
        let mut first = Vec::with_capacity(n);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let fi = (0..i).find(|&j| h[(i, j)] != 0.0).unwrap_or(i);
            first.push(fi);
            let mut row = vec![0.0; i - fi + 1];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut sum = h[(i, j)];
                if j > k0 {
                    let a = &row[k0 - fi..j - fi];
                    let b = if j == i { a } else { &rows[j][k0 - fj..j - fj] };
                    sum -= dot(a, b);
                }
                if j < i {
                    row[j - fi] = sum / rows[j][j - fj];
                } else {
                    if !(sum > 0.0) {
                        return None;
                    }
                    row[i - fi] = sum.sqrt();
                }
            }
            rows.push(row);
        }
        Some(Self { first, rows })
    }

    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn push_diagonal(&mut self, d: f64) {
        self.first.push(self.rows.len());
        self.rows.push(vec![d.sqrt()]);
    }

    /// Solves L x = b where b vanishes before `start`.
    fn forward(&self, b: &[f64], start: usize) -> Vec<f64> {
        let n = self.dim();
        let mut x = vec![0.0; n];
        for i in start..n {
            let fi = self.first[i];
            let k0 = fi.max(start);
            let row = &self.rows[i];
            let s = b[i] - dot(&row[k0 - fi..i - fi], &x[k0..i]);
            x[i] = s / row[i - fi];
        }
        x
    }

    /// Solves Lᵀ y = v in place.
    fn backward(&self, v: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            let fi = self.first[i];
            let row = &self.rows[i];
            let yi = v[i] / row[i - fi];
            v[i] = yi;
            for (k, l) in (fi..i).zip(row.iter()) {
                v[k] -= l * yi;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Upper-triangular R with RᵀR = UᵀU for the working-set columns U.
#[derive(Debug, Clone)]
struct GramFactor {
    cap: usize,
    size: usize,
    r: Vec<f64>,
}

impl GramFactor {
    fn new(cap: usize) -> Self {
        Self { cap, size: 0, r: vec![0.0; cap * cap] }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.cap + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.r[i * self.cap + j] = v;
    }

    /// Solves Rᵀ y = b.
    fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for i in 0..self.size {
            let mut s = y[i];
            for k in 0..i {
                s -= self.at(k, i) * y[k];
            }
            y[i] = s / self.at(i, i);
        }
        y
    }

    /// Solves R x = y in place.
    fn solve(&self, y: &mut [f64]) {
        for i in (0..self.size).rev() {
            let mut s = y[i];
            for k in i + 1..self.size {
                s -= self.at(i, k) * y[k];
            }
            y[i] = s / self.at(i, i);
        }
    }

    /// Appends column with cross products `b = Uᵀu` and squared norm `uu`.
    /// Returns false when u is numerically in the span of U.
    fn append(&mut self, b: &[f64], uu: f64) -> bool {
        let r = self.solve_transpose(b);
        let rho2 = uu - dot(&r, &r);
        if !(rho2 > 1e-14 * uu) {
            return false;
        }
        let j = self.size;
        for (i, v) in r.iter().enumerate() {
            self.set(i, j, *v);
        }
        self.set(j, j, rho2.sqrt());
        self.size += 1;
        true
    }

    fn remove(&mut self, k: usize) {
        let w = self.size;
        for j in k..w - 1 {
            for i in 0..=j + 1 {
                let v = self.at(i, j + 1);
                self.set(i, j, v);
            }
        }
        for i in 0..w {
            self.set(i, w - 1, 0.0);
        }
        // restore triangularity of the Hessenberg block
        for j in k..w - 1 {
            let a = self.at(j, j);
            let b = self.at(j + 1, j);
            let h = a.hypot(b);
            let (c, s) = if h == 0.0 { (1.0, 0.0) } else { (a / h, b / h) };
            for col in j..w - 1 {
                let x = self.at(j, col);
                let y = self.at(j + 1, col);
                self.set(j, col, c * x + s * y);
                self.set(j + 1, col, -s * x + c * y);
            }
            self.set(j + 1, j, 0.0);
            if self.at(j, j) < 0.0 {
                for col in j..w - 1 {
                    let v = -self.at(j, col);
                    self.set(j, col, v);
                }
            }
        }
        self.size -= 1;
    }
}

struct ActiveSetSolver<'a> {
    qp: &'a QpProblem,
    settings: QpSettings,
    n: usize,
    nv: usize,
    m: usize,
    elastic: bool,
    chol: EnvelopeCholesky,
    z: Vec<f64>,
    az: Vec<f64>,
    /// L⁻¹(Hz + g) in the (possibly augmented) variable space.
    q: Vec<f64>,
    working: Vec<usize>,
    in_working: Vec<bool>,
    u_cols: Vec<Vec<f64>>,
    gram: GramFactor,
    row_first: Vec<usize>,
    iterations: usize,
}

impl<'a> ActiveSetSolver<'a> {
    fn n_constraints(&self) -> usize {
        2 * self.m + 2 * self.nv
    }

    fn decode(&self, c: usize) -> ActiveConstraint {
        let (m, nv) = (self.m, self.nv);
        if c < m {
            ActiveConstraint::RowLower(c)
        } else if c < 2 * m {
            ActiveConstraint::RowUpper(c - m)
        } else if c < 2 * m + nv {
            ActiveConstraint::VarLower(c - 2 * m)
        } else {
            ActiveConstraint::VarUpper(c - 2 * m - nv)
        }
    }

    fn encode(&self, a: ActiveConstraint) -> Option<usize> {
        let (m, nv) = (self.m, self.nv);
        match a {
            ActiveConstraint::RowLower(i) if i < m => Some(i),
            ActiveConstraint::RowUpper(i) if i < m => Some(m + i),
            ActiveConstraint::VarLower(j) if j < nv => Some(2 * m + j),
            ActiveConstraint::VarUpper(j) if j < nv => Some(2 * m + nv + j),
            _ => None,
        }
    }

    fn var_bounds(&self, j: usize) -> (f64, f64) {
        if j == self.n {
            (0.0, f64::INFINITY)
        } else {
            (self.qp.var_lower[j], self.qp.var_upper[j])
        }
    }

    fn t(&self) -> f64 {
        if self.elastic {
            self.z[self.n]
        } else {
            0.0
        }
    }

    /// Bound of constraint c, infinite when that side does not exist.
    fn bound_exists(&self, c: usize) -> bool {
        match self.decode(c) {
            ActiveConstraint::RowLower(i) => self.qp.ineq_lower[i].is_finite(),
            ActiveConstraint::RowUpper(i) => self.qp.ineq_upper[i].is_finite(),
            ActiveConstraint::VarLower(j) => self.var_bounds(j).0.is_finite(),
            ActiveConstraint::VarUpper(j) => self.var_bounds(j).1.is_finite(),
        }
    }

    /// nᵀz − b for constraint c written as nᵀz ≥ b.
    fn slack(&self, c: usize) -> f64 {
        let t = self.t();
        match self.decode(c) {
            ActiveConstraint::RowLower(i) => self.az[i] + t - self.qp.ineq_lower[i],
            ActiveConstraint::RowUpper(i) => self.qp.ineq_upper[i] - self.az[i] + t,
            ActiveConstraint::VarLower(j) => self.z[j] - self.var_bounds(j).0,
            ActiveConstraint::VarUpper(j) => self.var_bounds(j).1 - self.z[j],
        }
    }

    fn directional(&self, c: usize, p: &[f64], ap: &[f64]) -> f64 {
        let pt = if self.elastic { p[self.n] } else { 0.0 };
        match self.decode(c) {
            ActiveConstraint::RowLower(i) => ap[i] + pt,
            ActiveConstraint::RowUpper(i) => -ap[i] + pt,
            ActiveConstraint::VarLower(j) => p[j],
            ActiveConstraint::VarUpper(j) => -p[j],
        }
    }

    /// Dense normal of constraint c and the index of its first nonzero.
    fn normal(&self, c: usize) -> (Vec<f64>, usize) {
        let mut v = vec![0.0; self.nv];
        let (sign, row) = match self.decode(c) {
            ActiveConstraint::RowLower(i) => (1.0, i),
            ActiveConstraint::RowUpper(i) => (-1.0, i),
            ActiveConstraint::VarLower(j) => {
                v[j] = 1.0;
                return (v, j);
            }
            ActiveConstraint::VarUpper(j) => {
                v[j] = -1.0;
                return (v, j);
            }
        };
        for j in self.row_first[row]..self.n {
            v[j] = sign * self.qp.ineq_matrix[(row, j)];
        }
        if self.elastic {
            v[self.n] = 1.0;
        }
        let start = if self.row_first[row] < self.n { self.row_first[row] } else { self.n };
        (v, start.min(self.nv - 1))
    }

    fn add(&mut self, c: usize) -> bool {
        let (nrm, start) = self.normal(c);
        let u = self.chol.forward(&nrm, start);
        let b: Vec<f64> = self.u_cols.iter().map(|col| dot(col, &u)).collect();
        let uu = dot(&u, &u);
        if !self.gram.append(&b, uu) {
            return false;
        }
        self.u_cols.push(u);
        self.working.push(c);
        self.in_working[c] = true;
        true
    }

    fn remove(&mut self, k: usize) {
        self.gram.remove(k);
        self.u_cols.remove(k);
        let c = self.working.remove(k);
        self.in_working[c] = false;
    }

    /// Working-set multipliers μ for the current q (seminormal equations with
    /// one refinement step) and v = q − Uμ.
    fn multipliers(&self) -> (Vec<f64>, Vec<f64>) {
        let project = |r: &[f64]| -> Vec<f64> {
            let b: Vec<f64> = self.u_cols.iter().map(|col| dot(col, r)).collect();
            let mut y = self.gram.solve_transpose(&b);
            self.gram.solve(&mut y);
            y
        };
        let subtract = |v: &mut Vec<f64>, mu: &[f64]| {
            for (col, m) in self.u_cols.iter().zip(mu) {
                for (vi, ci) in v.iter_mut().zip(col) {
                    *vi -= m * ci;
                }
            }
        };
        let mut mu = project(&self.q);
        let mut v = self.q.clone();
        subtract(&mut v, &mu);
        if !mu.is_empty() {
            let delta = project(&v);
            subtract(&mut v, &delta);
            for (m, d) in mu.iter_mut().zip(&delta) {
                *m += d;
            }
        }
        (mu, v)
    }

    fn objective(&self) -> f64 {
        // ½‖q‖² differs from the objective by a constant
        0.5 * dot(&self.q, &self.q)
    }

    fn run(&mut self) -> Result<Vec<f64>> {
        let nc = self.n_constraints();
        let bland_after = 3 * (self.m + self.nv).max(1);
        let mut stalled = 0usize;
        let mut best = self.objective();
        loop {
            if self.iterations >= self.settings.max_iter {
                return Err(Error::QpMaxIterations { iterations: self.iterations });
            }
            self.iterations += 1;
            let bland = stalled > bland_after;
            let (mu, v) = self.multipliers();
            let mut p: Vec<f64> = v.iter().map(|x| -x).collect();
            self.chol.backward(&mut p);
            let p_norm = inf_norm(&p);
            let ap: Vec<f64> = if self.m > 0 {
                (self.qp.ineq_matrix.view((0, 0), (self.m, self.n)) * DVector::from_column_slice(&p[..self.n]))
                    .as_slice()
                    .to_vec()
            } else {
                Vec::new()
            };

            let mut alpha = 1.0;
            let mut blocking = None;
            if p_norm > 1e-14 * (1.0 + inf_norm(&self.z)) {
                let thresh = 1e-12 * p_norm;
                for c in 0..nc {
                    if self.in_working[c] || !self.bound_exists(c) {
                        continue;
                    }
                    let d = self.directional(c, &p, &ap);
                    if d < -thresh {
                        let step = self.slack(c).max(0.0) / -d;
                        if step < alpha {
                            alpha = step;
                            blocking = Some(c);
                        }
                    }
                }
            }

            if alpha > 0.0 {
                for (zi, pi) in self.z.iter_mut().zip(&p) {
                    *zi += alpha * pi;
                }
                for (a, d) in self.az.iter_mut().zip(&ap) {
                    *a += alpha * d;
                }
                // q = L⁻¹(Hz + g) and Lᵀp = −v
                for (qi, vi) in self.q.iter_mut().zip(&v) {
                    *qi -= alpha * vi;
                }
            }

            let obj = self.objective();
            if obj < best - 1e-14 * best.abs().max(1.0) {
                best = obj;
                stalled = 0;
            } else {
                stalled += 1;
            }

            if let Some(c) = blocking {
                if self.add(c) {
                    continue;
                }
                // numerically dependent on the working set, so the step is
                // already a subspace minimum
            }

            // subspace minimum reached: μ are the multipliers at the new point
            let tol = self.settings.feas_tol;
            let drop = if bland {
                mu.iter()
                    .enumerate()
                    .filter(|(_, m)| **m < -tol)
                    .min_by_key(|(k, _)| self.working[*k])
                    .map(|(k, _)| k)
            } else {
                mu.iter()
                    .enumerate()
                    .filter(|(_, m)| **m < -tol)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
            };
            match drop {
                Some(k) => self.remove(k),
                None => return Ok(mu),
            }
        }
    }
}

fn seed_point(qp: &QpProblem, z0: Option<&DVector<f64>>) -> Vec<f64> {
    (0..qp.n())
        .map(|j| {
            let v = z0.map_or(0.0, |z| z[j]);
            v.clamp(qp.var_lower[j], qp.var_upper[j])
        })
        .collect()
}

/// Solves from the projection of the origin onto the variable bounds.
pub fn solve_qp(
    qp: &QpProblem,
    warm_active_set: Option<&[ActiveConstraint]>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    solve_qp_from(qp, None, warm_active_set, settings)
}

/// Solves from `start` projected onto the variable bounds. Constraints of the
/// warm active set that hold with equality at the start point enter the
/// working set first, followed by any other constraint active there.
pub fn solve_qp_from(
    qp: &QpProblem,
    start: Option<&DVector<f64>>,
    warm_active_set: Option<&[ActiveConstraint]>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    qp.validate()?;
    let (n, m) = (qp.n(), qp.m());
    if let Some(s) = start {
        if s.len() != n {
            return Err(Error::Dimension(format!("start point has {} entries, expected {n}", s.len())));
        }
    }
    let chol = EnvelopeCholesky::factor(&qp.hessian)
        .ok_or_else(|| Error::invalid("qp.hessian", "not positive definite"))?;
    let z = seed_point(qp, start);
    let az: Vec<f64> = (&qp.ineq_matrix * DVector::from_column_slice(&z)).as_slice().to_vec();
    let violation = (0..m)
        .map(|i| (qp.ineq_lower[i] - az[i]).max(az[i] - qp.ineq_upper[i]))
        .fold(0.0, f64::max);
    let row_first: Vec<usize> = (0..m)
        .map(|i| (0..n).find(|&j| qp.ineq_matrix[(i, j)] != 0.0).unwrap_or(n))
        .collect();

    let elastic = violation > settings.feas_tol;
    let mut solver = ActiveSetSolver {
        qp,
        settings: *settings,
        n,
        nv: n + elastic as usize,
        m,
        elastic,
        chol,
        z,
        az,
        q: Vec::new(),
        working: Vec::new(),
        in_working: Vec::new(),
        u_cols: Vec::new(),
        gram: GramFactor::new(0),
        row_first,
        iterations: 0,
    };
    if elastic {
        solver.chol.push_diagonal(settings.elastic_weight);
        solver.z.push(violation);
    }
    let mu = run_phase(&mut solver, warm_active_set)?;

    if elastic {
        let t = solver.z[n];
        let t_fixed = solver
            .working
            .iter()
            .any(|&c| solver.decode(c) == ActiveConstraint::VarLower(n));
        if t > settings.feas_tol.max(1e-7) {
            if settings.accept_elastic {
                let mut sol = finish(&solver, &mu);
                sol.elastic_violation = t;
                return Ok(sol);
            }
            return Err(Error::InfeasibleQp { violation: t });
        }
        if !t_fixed {
            // polish on the original problem from the (nearly) feasible point
            let warm: Vec<ActiveConstraint> = solver
                .working
                .iter()
                .map(|&c| solver.decode(c))
                .filter(|a| *a != ActiveConstraint::VarLower(n))
                .collect();
            let z = DVector::from_column_slice(&solver.z[..n]);
            let iterations = solver.iterations;
            let mut sol = solve_qp_from(qp, Some(&z), Some(&warm), &QpSettings {
                feas_tol: settings.feas_tol.max(t * 1.01),
                ..*settings
            })?;
            sol.iterations += iterations;
            return Ok(sol);
        }
    }
    Ok(finish(&solver, &mu))
}

fn run_phase(solver: &mut ActiveSetSolver<'_>, warm: Option<&[ActiveConstraint]>) -> Result<Vec<f64>> {
    let nv = solver.nv;
    let nc = solver.n_constraints();
    // q = L⁻¹(H z + g), with the elastic block [ρ t + M]
    let qp = solver.qp;
    let n = solver.n;
    let zv = DVector::from_column_slice(&solver.z[..n]);
    let mut grad = (&qp.hessian * &zv + &qp.gradient).as_slice().to_vec();
    if solver.elastic {
        grad.push(solver.settings.elastic_weight * solver.z[n] + solver.settings.elastic_penalty);
    }
    solver.q = solver.chol.forward(&grad, 0);
    solver.in_working = vec![false; nc];
    solver.gram = GramFactor::new(nv);

    let tol = solver.settings.feas_tol;
    let mut seeds: Vec<usize> = Vec::new();
    if let Some(w) = warm {
        seeds.extend(w.iter().filter_map(|a| solver.encode(*a)));
    }
    seeds.extend(0..nc);
    for c in seeds {
        if solver.working.len() >= nv {
            break;
        }
        if solver.in_working[c] || !solver.bound_exists(c) {
            continue;
        }
        if solver.slack(c).abs() <= tol {
            solver.add(c);
        }
    }
    solver.run()
}

fn finish(solver: &ActiveSetSolver<'_>, mu: &[f64]) -> QpSolution {
    let (n, m) = (solver.n, solver.m);
    let mut row_duals = DVector::zeros(m);
    let mut var_duals = DVector::zeros(n);
    let mut active_set = Vec::with_capacity(solver.working.len());
    for (&c, &mu) in solver.working.iter().zip(mu) {
        let a = solver.decode(c);
        match a {
            ActiveConstraint::RowLower(i) => row_duals[i] -= mu,
            ActiveConstraint::RowUpper(i) => row_duals[i] += mu,
            ActiveConstraint::VarLower(j) if j < n => var_duals[j] -= mu,
            ActiveConstraint::VarUpper(j) if j < n => var_duals[j] += mu,
            _ => continue,
        }
        active_set.push(a);
    }
    let primal = DVector::from_column_slice(&solver.z[..n]);
    let objective = solver.qp.objective(&primal);
    let sol = QpSolution {
        primal,
        row_duals,
        var_duals,
        active_set,
        iterations: solver.iterations,
        objective,
        elastic_violation: 0.0,
    };
    debug_assert!(solver.elastic || {
        let r = sol.kkt(solver.qp);
        let scale = 1.0 + solver.qp.gradient.amax() + solver.qp.hessian.amax() * sol.primal.amax();
        r.stationarity <= 1e-6 * scale
    });
    sol
}

impl QpSolution {
    pub fn kkt(&self, qp: &QpProblem) -> KktReport {
        let z = &self.primal;
        let stat = &qp.hessian * z + &qp.gradient + qp.ineq_matrix.transpose() * &self.row_duals + &self.var_duals;
        let az = &qp.ineq_matrix * z;
        let mut primal: f64 = 0.0;
        let mut dual: f64 = 0.0;
        let mut comp: f64 = 0.0;
        let mut side = |value: f64, lo: f64, hi: f64, dual_value: f64| {
            primal = primal.max(lo - value).max(value - hi);
            if dual_value < 0.0 && lo.is_finite() {
                // lower side active
                comp = comp.max((-dual_value * (value - lo)).abs());
            } else if dual_value > 0.0 && hi.is_finite() {
                comp = comp.max((dual_value * (hi - value)).abs());
            }
            if lo == f64::NEG_INFINITY {
                dual = dual.max(-dual_value);
            }
            if hi == f64::INFINITY {
                dual = dual.max(dual_value);
            }
        };
        for i in 0..qp.m() {
            side(az[i], qp.ineq_lower[i], qp.ineq_upper[i], self.row_duals[i]);
        }
        for j in 0..qp.n() {
            side(z[j], qp.var_lower[j], qp.var_upper[j], self.var_duals[j]);
        }
        KktReport {
            stationarity: stat.amax(),
            primal_violation: primal.max(0.0),
            dual_violation: dual.max(0.0),
            complementarity: comp,
        }
    }
}
