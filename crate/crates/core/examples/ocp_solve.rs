//! One cold-start solve of the tracking problem at the initial state of the
//! default mission, followed by a few warm-started real-time iterations.

use fso_nmpc::dynamics::GtmrModel;
use fso_nmpc::ocp::OcpProblem;
use fso_nmpc::scenario::Scenario;
use fso_nmpc::solver::rti::{cold_solve, predicted_margins, rti_step, shift_warm_start};

fn main() -> fso_nmpc::Result<()> {
    let s = Scenario::default();
    let n = s.horizon_steps;
    let stages = |t0: f64| (0..=n).map(|k| s.stage_data(t0 + k as f64 * s.horizon_step)).collect();
    let mut problem = OcpProblem {
        horizon_steps: n,
        step: s.horizon_step,
        initial_state: s.mrav_initial(),
        stages: stages(0.0),
        weights: s.weights.clone(),
        model: GtmrModel::new(s.gtmr.clone())?,
        optics: s.optics.clone(),
        safety_margin: s.safety_margin + s.safety_backoff,
    };

    let sol = cold_solve(&problem, &s.cold_start_config())?;
    let (range_margin, cone_margin) = predicted_margins(&problem, &sol)?;
    println!(
        "cold start: {:?} after {} SQP iterations ({} QP iterations), cost {:.4}, KKT {:.2e}",
        sol.status, sol.sqp_iterations, sol.qp_iterations, sol.cost, sol.kkt_residual
    );
    println!("predicted margins: range {range_margin:.3} m, cone {cone_margin:.3}");
    let end = &sol.states[n].body;
    println!(
        "predicted position after {:.2} s: [{:.3}, {:.3}, {:.3}]",
        n as f64 * s.horizon_step,
        end.position.x,
        end.position.y,
        end.position.z
    );

    // receding horizon on the predicted trajectory
    let mut prev = sol;
    for i in 1..=5 {
        let t = i as f64 * s.horizon_step;
        problem.initial_state = prev.states[1].clone();
        problem.stages = stages(t);
        let warm = shift_warm_start(&prev, &problem.initial_state);
        prev = rti_step(&problem, &warm, &s.rti_config())?;
        println!("t = {t:.3} s: cost {:.4}, KKT {:.2e}, {} QP iterations", prev.cost, prev.kkt_residual, prev.qp_iterations);
    }
    Ok(())
}
