//! Synchronous vs staggered schedules for the 8-camera desk rig.
//!
//! ```text
//! cargo run --example capture_schedule
//! ```

use num_rational::Ratio;
use stagger4d::capture::{effective_fps, make_schedule, seconds_to_f64};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tau = Ratio::new(1, 25);
    for k in [1, 2, 4, 8] {
        let s = make_schedule(8, k, tau, 25)?;
        let first: Vec<String> = s
            .union_timestamps()
            .iter()
            .take(5)
            .map(|t| format!("{:.3}", seconds_to_f64(*t)))
            .collect();
        println!(
            "K={k}: {:>5.0} FPS effective, {} views per instant, union starts [{}]",
            effective_fps(&s),
            8 / k,
            first.join(", ")
        );
    }

    let s = make_schedule(8, 4, tau, 3)?;
    println!("\ncamera -> group under K=4:");
    for tr in s.tracks() {
        println!("  cam {} -> group {}", tr.camera_id, tr.group);
    }
    println!("\nschedule CSV:");
    s.write_csv(std::io::stdout())?;
    Ok(())
}
