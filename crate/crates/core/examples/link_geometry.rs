//! Pointing and range metrics of the optical link for a few hover poses
//! above a receiver at the origin.

use fso_nmpc::dynamics::{ExtendedState, GtmrParams};
use fso_nmpc::optics::{self, LinkGeometry, OpticalParams};
use nalgebra::Vector3;

fn main() -> fso_nmpc::Result<()> {
    let params = OpticalParams::default();
    let gtmr = GtmrParams::tilted_hexarotor();
    let rx = Vector3::zeros();
    let rx_axis = Vector3::z();

    println!("{:>28} {:>8} {:>8} {:>5} {:>5} {:>5}", "pose", "range", "c_delta", "I_tx", "I_rx", "I");
    let poses = [
        ("1 m above", Vector3::new(-0.1, 0.0, 1.0), Vector3::zeros()),
        ("1 m above, rolled 5 deg", Vector3::new(-0.1, 0.0, 1.0), Vector3::new(5f64.to_radians(), 0.0, 0.0)),
        ("1 m above, rolled 15 deg", Vector3::new(-0.1, 0.0, 1.0), Vector3::new(15f64.to_radians(), 0.0, 0.0)),
        ("offset 0.5 m sideways", Vector3::new(0.4, 0.0, 1.0), Vector3::zeros()),
        ("2 m above", Vector3::new(-0.1, 0.0, 2.0), Vector3::zeros()),
    ];
    for (name, p, euler) in poses {
        let mut x = ExtendedState::hover(&gtmr, p);
        x.body.euler = euler;
        let geo = LinkGeometry::new(&x.to_vector().as_slice()[..12], &rx, &Vector3::zeros(), &params)?;
        let i_tx = optics::tx_indicator(geo.cos_delta(), &params);
        let i_rx = optics::rx_indicator(&rx_axis, &geo.link_vector(), &params)?;
        let i = optics::link_indicator(i_tx, i_rx, geo.range(), &params);
        println!("{name:>28} {:>8.3} {:>8.4} {i_tx:>5} {i_rx:>5} {i:>5}", geo.range(), geo.cos_delta());
    }
    Ok(())
}
