//! Parallel sweep over the pointing weight on a short mission, the library
//! counterpart of `fso-nmpc sweep`.

use fso_nmpc::scenario::load_scenario_with_overrides;
use fso_nmpc::sim::{compute_metrics, run_closed_loop};
use rayon::prelude::*;

fn main() {
    let weights = [10.0, 100.0, 1000.0];
    let rows: Vec<_> = weights
        .par_iter()
        .map(|w| {
            let overrides = ["mission.duration=3".to_string(), format!("weights.cos_delta={w}")];
            let scenario = load_scenario_with_overrides("", &overrides).expect("valid overrides");
            let outcome = run_closed_loop(&scenario)
                .map_err(|a| a.to_string())
                .and_then(|log| compute_metrics(&log, &scenario.optics).map_err(|e| e.to_string()));
            (w, outcome)
        })
        .collect();
    println!("{:>10} {:>12} {:>12}", "cos_delta", "mean link", "rms range");
    for (w, outcome) in rows {
        match outcome {
            Ok(m) => println!("{w:>10} {:>12.4} {:>12.4}", m.mean_link_quality, m.rms_range_error),
            Err(e) => println!("{w:>10} failed: {e}"),
        }
    }
}
