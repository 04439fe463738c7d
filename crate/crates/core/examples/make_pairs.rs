//! Noisy/clean refiner training pairs, by sub-sampling and by leave-one-out.

use num_rational::Ratio;
use stagger4d::capture::make_schedule;
use stagger4d::experiment::ExperimentConfig;
use stagger4d::metrics::psnr;
use stagger4d::optimize::OptimConfig;
use stagger4d::refine::{build_leave_one_out_pairs, build_subsample_pairs, TrainingPair};
use stagger4d::scene::{build_dataset, subsample_temporal, FastSceneSpec, RigSpec, SceneProgram};

fn mean_psnr(pairs: &[TrainingPair], root: &std::path::Path) -> Result<f64, Box<dyn std::error::Error>> {
    let mut acc = Vec::new();
    for p in pairs {
        let (noisy, clean) = p.load(root)?;
        for (a, b) in noisy.frames.iter().zip(&clean.frames) {
            acc.push(psnr(a, b, 1.0)?);
        }
    }
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rig = RigSpec {
        width: 32,
        height: 32,
        focal: 35.0,
        ..RigSpec::default()
    };
    let scene = SceneProgram::fast_motion(&FastSceneSpec::default());
    // full-rate synchronous capture at 100 FPS
    let full = build_dataset(
        &scene,
        &rig.build(),
        &make_schedule(8, 1, Ratio::new(1, 100), 24)?,
        &rig.heldout_ids(),
    )?;
    // a generous budget: a capacity-bound fit favors fewer views per instant
    let cfg = OptimConfig {
        stage1_iters: 2000,
        budget: 400,
        prune_interval: 100,
        prune_until: 1800,
        ..ExperimentConfig::default().optim
    };
    let out = std::env::temp_dir().join("stagger4d_pairs");
    for factor in [1, 2, 4] {
        let root = out.join(format!("subsample_k{factor}"));
        let pairs = build_subsample_pairs(&full, factor, &cfg, &root)?;
        println!(
            "K={factor}: {} pairs, noisy vs clean {:.2} dB -> {}",
            pairs.len(),
            mean_psnr(&pairs, &root)?,
            root.display()
        );
    }
    let root = out.join("leave_one_out");
    let asy = subsample_temporal(&full, 4, true)?;
    let pairs = build_leave_one_out_pairs(
        &asy,
        &OptimConfig {
            stage1_iters: 100,
            ..cfg
        },
        &root,
    )?;
    for p in &pairs {
        println!("fold cam {}: fitted on {:?}", p.camera_id, p.fit_cameras);
    }
    println!("leave-one-out: {:.2} dB", mean_psnr(&pairs, &root)?);
    Ok(())
}
