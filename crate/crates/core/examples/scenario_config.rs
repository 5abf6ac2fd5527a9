//! Load a scenario from configuration text plus command-line style overrides
//! and print the normalized form.

use fso_nmpc::scenario::load_scenario_with_overrides;

const CONFIG: &str = "\
schema_version = 1
# a shorter mission with a slower receiver gimbal
mission.duration = 10
optics.rx_lag = 0.2
obstacles.count = 1
obstacle.1.start = 0, -3, 1
obstacle.1.end = 0, -3, 1
obstacle.1.window = 0, 0
obstacle.1.radius = 0.3
";

fn main() {
    let overrides = ["weights.slack=100", "safety.margin=0.3"];
    match load_scenario_with_overrides(CONFIG, &overrides) {
        Ok(s) => {
            print!("{}", s.to_config_text());
            let (p, v) = s.ugv_state(5.0).expect("inside the mission");
            eprintln!("ground vehicle at t = 5 s: {p:?}, speed {:.3} m/s", v.norm());
        }
        Err(e) => eprintln!("config error: {e}"),
    }

    // errors name the offending key
    let err = load_scenario_with_overrides(CONFIG, &["optics.rx_fov_dg=80"]).unwrap_err();
    eprintln!("rejected: {err}");
}
