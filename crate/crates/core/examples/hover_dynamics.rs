//! Allocation, hover equilibrium and an open-loop rotor-speed step for the
//! tilted hexarotor.

use fso_nmpc::dynamics::{build_allocation, ExtendedState, GtmrModel, GtmrParams};
use nalgebra::Vector3;

fn main() -> fso_nmpc::Result<()> {
    for (name, params) in [
        ("coplanar", GtmrParams::coplanar_hexarotor()),
        ("tilted", GtmrParams::tilted_hexarotor()),
    ] {
        let alloc = build_allocation(&params)?;
        println!(
            "{name:>8}: allocation rank {}, hover speed {:.3} Hz",
            alloc.rank(1e-9),
            params.hover_speed()
        );
    }

    let params = GtmrParams::tilted_hexarotor();
    let model = GtmrModel::new(params.clone())?;
    let hover = ExtendedState::hover(&params, Vector3::new(0.0, 0.0, 1.0));
    let xdot = model.derivative(hover.to_vector().as_slice(), &[0.0; 6])?;
    println!("|x_dot| at hover = {:.2e}", xdot.norm());

    // spin rotors 1 and 4 up and the others down for 0.1 s, then hold; the
    // tilted layout turns this into sideways thrust without tilting the body
    let u = [100.0, -50.0, -50.0, 100.0, -50.0, -50.0];
    let dt = 0.001;
    let mut x = hover.to_vector();
    for k in 1..=500 {
        let input = if k <= 100 { u } else { [0.0; 6] };
        x = model.rk4(x.as_slice(), &input, dt)?;
        if k % 100 == 0 {
            let s = ExtendedState::from_slice(x.as_slice());
            println!(
                "t = {:.1} s  p = [{:+.3}, {:+.3}, {:+.3}]  euler(deg) = [{:+.2}, {:+.2}, {:+.2}]",
                k as f64 * dt,
                s.body.position.x,
                s.body.position.y,
                s.body.position.z,
                s.body.euler.x.to_degrees(),
                s.body.euler.y.to_degrees(),
                s.body.euler.z.to_degrees()
            );
        }
    }
    Ok(())
}
