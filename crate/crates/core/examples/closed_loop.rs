//! Closed-loop mission with the NMPC, reporting metrics and writing the CSV log.
//!
//! ```text
//! cargo run --release --example closed_loop -- 6 /tmp/log.csv
//! ```
//! The optional arguments are the duration in seconds and a log path.

use fso_nmpc::scenario::load_scenario_with_overrides;
use fso_nmpc::sim::{compute_metrics, run_closed_loop, write_csv_file, SolverStats};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let duration = args.next().unwrap_or_else(|| "4".into());
    let scenario = load_scenario_with_overrides("", &[format!("mission.duration={duration}")])?;

    let start = std::time::Instant::now();
    let log = run_closed_loop(&scenario)?;
    println!("simulated {} s in {:.1} s", log.duration(), start.elapsed().as_secs_f64());
    print!("{}", compute_metrics(&log, &scenario.optics)?.to_text());
    print!("{}", SolverStats::from_log(&log).to_text());

    for r in log.records.iter().step_by(500) {
        println!(
            "t = {:5.2}  range = {:.3} m  c_delta = {:.4}  link = {}",
            r.time, r.output.range, r.output.cos_delta, r.link.i_link
        );
    }
    if let Some(path) = args.next() {
        write_csv_file(&log, std::path::Path::new(&path))?;
        println!("log written to {path}");
    }
    Ok(())
}
