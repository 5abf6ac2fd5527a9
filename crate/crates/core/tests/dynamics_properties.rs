mod common;

use fso_nmpc::dynamics::{ExtendedState, GtmrModel, GtmrParams};
use nalgebra::Vector3;
use proptest::prelude::*;

#[test]
fn hover_is_an_equilibrium_for_both_airframes() {
    let (coplanar, tilted) = common::hover_derivative_norms();
    assert!(coplanar < 1e-10, "{coplanar:e}");
    assert!(tilted < 1e-10, "{tilted:e}");
}

#[test]
fn rk4_is_fourth_order() {
    let order = common::rk4_observed_order();
    assert!(order >= 3.8, "observed order {order}");
}

#[test]
fn allocation_ranks() {
    assert_eq!(common::allocation_ranks(), (4, 6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotors_stay_within_bounds_under_admissible_inputs(
        u in proptest::collection::vec(-200.0f64..400.0, 6),
        steps in 1usize..40,
    ) {
        let p = GtmrParams::tilted_hexarotor();
        let model = GtmrModel::new(p.clone()).unwrap();
        let x0 = ExtendedState::hover(&p, Vector3::zeros());
        let mut x = x0.to_vector();
        let dt = 0.001;
        for _ in 0..steps {
            x = model.rk4(x.as_slice(), &u, dt).unwrap();
        }
        let t = dt * steps as f64;
        for i in 0..6 {
            let expected = x0.rotor_speeds[i] + u[i] * t;
            prop_assert!((x[12 + i] - expected).abs() < 1e-9);
        }
    }
}
