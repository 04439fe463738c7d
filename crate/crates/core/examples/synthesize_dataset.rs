//! Renders the fast-motion scene under a staggered schedule and saves it.
//!
//! ```text
//! cargo run --release --example synthesize_dataset -- /tmp/fast_k4
//! ```

use std::path::PathBuf;

use num_rational::Ratio;
use stagger4d::capture::make_schedule;
use stagger4d::scene::{build_dataset, save_dataset, FastSceneSpec, RigSpec, SceneProgram};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("stagger4d_fast_k4"));
    let scene = SceneProgram::fast_motion(&FastSceneSpec::default());
    let rig = RigSpec::default();
    let schedule = make_schedule(rig.cameras, 4, Ratio::new(1, 25), 25)?;
    let d = build_dataset(&scene, &rig.build(), &schedule, &rig.heldout_ids())?;
    save_dataset(&d, &out)?;
    println!(
        "{} training frames from {} cameras, {} held-out frames ({} intermediate) -> {}",
        d.frames.len(),
        d.training_ids().len(),
        d.heldout.len(),
        d.eval_times.iter().filter(|t| !d.is_on_grid(**t)).count() * d.heldout_ids.len(),
        out.display()
    );
    Ok(())
}
