//! Sync/async × fix/no-fix table on a reduced rig.
//!
//! `stagger4d ablate` runs the same comparison at full size and also writes
//! CSV, markdown and SVG plots.

use stagger4d::experiment::{run_ablation, synthesize_full_rate, ExperimentConfig, RefinerName};
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
    cfg.optim.stage1_iters = 600;
    cfg.optim.stage2_iters = 150;
    cfg.optim.prune_until = 500;
    cfg.ablate.fix_refiner = RefinerName::Oracle;
    let full = synthesize_full_rate(&cfg)?;
    let table = run_ablation(&cfg, &full)?;
    // 600 iterations under-fit both captures, so the async margin stays small here
    println!("{}", table.to_markdown());
    Ok(())
}
