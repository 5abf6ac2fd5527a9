//! Dense active-set QP: a projection onto a polytope, solved cold and then
//! warm-started from the optimal working set.

use fso_nmpc::solver::qp::{solve_qp, QpProblem, QpSettings};
use nalgebra::{dmatrix, dvector, DVector};

fn main() -> fso_nmpc::Result<()> {
    // minimise |z - (2, 2)|^2 / 2 subject to z1 + z2 <= 2, z1 - z2 in [-1, 1], z >= 0
    let qp = QpProblem {
        hessian: dmatrix![1.0, 0.0; 0.0, 1.0],
        gradient: dvector![-2.0, -2.0],
        ineq_matrix: dmatrix![1.0, 1.0; 1.0, -1.0],
        ineq_lower: dvector![f64::NEG_INFINITY, -1.0],
        ineq_upper: dvector![2.0, 1.0],
        var_lower: DVector::zeros(2),
        var_upper: DVector::from_element(2, f64::INFINITY),
    };
    let settings = QpSettings::default();
    let cold = solve_qp(&qp, None, &settings)?;
    println!("z* = {:?}", cold.primal.as_slice());
    println!("row duals = {:?}", cold.row_duals.as_slice());
    println!("working set = {:?}, {} iterations", cold.active_set, cold.iterations);
    println!("KKT residual = {:.2e}", cold.kkt(&qp).max());

    let warm = solve_qp(&qp, Some(&cold.active_set), &settings)?;
    println!("warm start: {} iterations", warm.iterations);
    Ok(())
}
