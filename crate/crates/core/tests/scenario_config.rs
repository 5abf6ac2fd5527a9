use approx::assert_relative_eq;
use fso_nmpc::ocp::OcpWeights;
use fso_nmpc::scenario::{load_scenario, load_scenario_with_overrides, Scenario};
use nalgebra::Vector3;
use proptest::prelude::*;

#[test]
fn default_experiment_values() {
    let s = Scenario::default();
    let text = s.to_config_text();
    for line in [
        "mission.duration = 26\n",
        "horizon.steps = 50\n",
        "horizon.step = 0.015\n",
        "rates.reference_hz = 200\n",
        "rates.control_hz = 500\n",
        "rates.plant_hz = 1000\n",
        "gtmr.speed_min = 16\n",
        "gtmr.speed_max = 100\n",
        "gtmr.accel_min = -200\n",
        "gtmr.accel_max = 400\n",
        "optics.range_min = 0.25\n",
        "optics.range_max = 1.4\n",
        "optics.desired_range = 1\n",
        "optics.cone_cos_threshold = 0.17\n",
        "ugv.initial = -3, -3, 0\n",
        "obstacle.1.start = 1.5, -3, 0.75\n",
        "obstacle.1.end = 1.5, -3, 0.75\n",
        "weights.slack = 10000\n",
    ] {
        assert!(text.contains(line), "missing `{}`", line.trim_end());
    }
}

#[test]
fn table_weights_preset() {
    let w = OcpWeights::inspection(6, 3);
    assert_eq!(&w.output[..], &[0.0, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 10.0, 10.0, 2.0]);
    assert!(w.rate.iter().all(|q| *q == 10.0));
    assert!(w.slack.iter().all(|q| *q == 1e4));
    assert_eq!(w.body_rate, 0.0);
}

#[test]
fn ugv_square_closes_in_mission_time() {
    let s = Scenario::default();
    let (p0, _) = s.ugv_state(0.0).unwrap();
    let (p26, _) = s.ugv_state(26.0).unwrap();
    assert_relative_eq!(p0, Vector3::new(-3.0, -3.0, 0.0), epsilon = 1e-12);
    assert_relative_eq!(p26, p0, epsilon = 1e-12);
    for t in [3.25, 9.75, 16.25, 22.75] {
        let (_, v) = s.ugv_state(t).unwrap();
        assert_relative_eq!(v.norm(), 24.0 / 26.0, epsilon = 1e-12);
    }
    assert!(s.ugv_state(26.5).is_err());
}

#[test]
fn reference_and_obstacles() {
    let s = Scenario::default();
    let r = s.mrav_reference(0.0).unwrap();
    assert_relative_eq!(r.position, Vector3::new(-3.0, -3.0, 1.0), epsilon = 1e-12);
    assert_eq!((r.cos_delta, r.cos_delta_rate, r.range), (1.0, 0.0, 1.0));
    assert_relative_eq!(s.mrav_reference(4.0).unwrap().velocity.norm(), 24.0 / 26.0, epsilon = 1e-12);
    assert_relative_eq!(s.obstacle_position(1, 13.0).unwrap(), Vector3::new(1.5, -3.0, 0.75));
    assert_relative_eq!(s.obstacle_position(2, 8.0).unwrap(), Vector3::new(3.5, 0.0, 1.25), epsilon = 1e-12);
    assert_relative_eq!(s.obstacle_position(3, 5.0).unwrap(), Vector3::new(-2.0, 1.5, 0.5));
}

#[test]
fn config_errors_name_the_problem() {
    let err = load_scenario("obstacle.1.radius = -1").unwrap_err().to_string();
    assert!(err.contains("obstacle radius"), "{err}");
    let err = load_scenario("rates.control_hz = 300\nrates.plant_hz = 1000").unwrap_err().to_string();
    assert!(err.contains("integer multiple"), "{err}");
    let err = load_scenario("\n\nmission.colour = red").unwrap_err().to_string();
    assert!(err.contains("mission.colour") && err.contains('3'), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalized_text_round_trips(
        duration_ms in 0u32..60_000,
        margin in 0.0f64..1.0,
        radius in 0.01f64..2.0,
        window in (0.0f64..20.0, 0.0f64..20.0),
        initial in proptest::array::uniform3(-5.0f64..5.0),
        rate_weight in 1e-9f64..100.0,
        lag in 0.0f64..1.0,
        tilt in -60.0f64..60.0,
    ) {
        let (a, b) = if window.0 <= window.1 { window } else { (window.1, window.0) };
        let overrides = vec![
            format!("mission.duration={}", f64::from(duration_ms) / 1000.0),
            format!("safety.margin={margin}"),
            format!("safety.backoff={}", margin / 10.0),
            format!("obstacle.2.radius={radius}"),
            format!("obstacle.2.window={a},{b}"),
            format!("ugv.initial={},{},{}", initial[0], initial[1], initial[2]),
            format!("weights.rate={rate_weight}"),
            format!("optics.rx_lag={lag}"),
            format!("gtmr.tilt_alpha_deg={tilt},{},{tilt},{},{tilt},{}", -tilt, -tilt, -tilt),
        ];
        let s = load_scenario_with_overrides("", &overrides).unwrap();
        let text = s.to_config_text();
        let back = load_scenario(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_config_text(), text);
    }

    #[test]
    fn obstacle_motion_is_clamped_outside_window(t in -5.0f64..40.0) {
        let s = Scenario::default();
        let p = s.obstacle_position(2, t.clamp(0.0, 26.0)).unwrap();
        let o = &s.obstacles[1];
        if t <= o.motion_window.0 {
            prop_assert!((p - o.start_pos).norm() < 1e-12);
        }
        if t >= o.motion_window.1 && t <= 26.0 {
            prop_assert!((p - o.end_pos).norm() < 1e-12);
        }
    }
}
