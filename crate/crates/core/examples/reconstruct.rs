//! Two-stage reconstruction of a small staggered capture with a temporal-median refiner.
//!
//! Uses a reduced rig and iteration count so it finishes in well under a minute;
//! `stagger4d reconstruct` runs the full desk configuration.

use stagger4d::experiment::{synthesize_dataset, ExperimentConfig};
use stagger4d::optimize::{evaluate, stage1_fit, stage2_refine_fit};
use stagger4d::refine::TemporalMedianFixer;
use stagger4d::scene::RigSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig {
        rig: RigSpec {
            width: 32,
            height: 32,
            focal: 35.0,
            ..RigSpec::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.optim.stage1_iters = 800;
    cfg.optim.stage2_iters = 200;
    cfg.optim.prune_until = 700;
    let d = synthesize_dataset(&cfg)?;
    let ocfg = cfg.optim_config();

    let s1 = stage1_fit(&d, &ocfg)?;
    println!(
        "stage 1 ({} primitives)\n{}",
        s1.gaussians.len(),
        evaluate(&s1, &d)?.summary()
    );
    let s2 = stage2_refine_fit(&s1, &d, &TemporalMedianFixer::default(), &ocfg)?;
    println!("stage 2, temporal median\n{}", evaluate(&s2, &d)?.summary());
    Ok(())
}
