mod common;

use nalgebra::Vector3;
use rand::Rng;

use stagger4d::capture::CameraModel;
use stagger4d::frame::VideoClip;
use stagger4d::optimize::checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
use stagger4d::optimize::{
    evaluate, frustum_intersection_box, init_gaussians, init_state, refined_video_loss, render_settings,
    stage1_continue, stage1_fit, stage2_refine_fit, training_psnr, OptimConfig, TrainState,
};
use stagger4d::raster::NEAR_PLANE;
use stagger4d::refine::IdentityFixer;

fn quick(iters: u64) -> OptimConfig {
    OptimConfig {
        stage1_iters: iters,
        stage2_iters: 0,
        budget: 60,
        prune_interval: 20,
        prune_until: iters,
        ..OptimConfig::default()
    }
}

fn visible(cam: &CameraModel, p: &Vector3<f64>, far: f64) -> bool {
    let c = cam.world_to_camera(p);
    if c.z < NEAR_PLANE || c.z > far {
        return false;
    }
    let u = cam.fx * c.x / c.z + cam.cx;
    let v = cam.fy * c.y / c.z + cam.cy;
    (0.0..=cam.width as f64).contains(&u) && (0.0..=cam.height as f64).contains(&v)
}

#[test]
fn init_box_matches_a_monte_carlo_frustum_intersection() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 4);
    let cams = d.training_cameras();
    let far = 12.0;
    let bbox = frustum_intersection_box(&cams, far).unwrap();
    let mut rng = common::rng(99);
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    let mut hits = 0;
    for _ in 0..400_000 {
        let p = Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0));
        if cams.iter().all(|c| visible(c, &p, far)) {
            hits += 1;
            assert!(bbox.contains(&p, 1e-9), "{p:?} visible but outside {bbox:?}");
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    assert!(hits > 1000);
    // the sampled hull should nearly fill the box
    for i in 0..3 {
        assert!((lo[i] - bbox.min[i]).abs() < 0.1 * bbox.size()[i], "axis {i}");
        assert!((hi[i] - bbox.max[i]).abs() < 0.1 * bbox.size()[i], "axis {i}");
    }
}

#[test]
fn init_respects_budget_box_and_seed() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 4);
    assert_eq!(init_gaussians(&d, 1, 0).unwrap().len(), 1);
    let a = init_gaussians(&d, 200, 3).unwrap();
    assert_eq!(a.len(), 200);
    assert_eq!(a, init_gaussians(&d, 200, 3).unwrap());
    assert_ne!(a, init_gaussians(&d, 200, 4).unwrap());
    let bbox = frustum_intersection_box(&d.training_cameras(), OptimConfig::default().init_far).unwrap();
    for g in &a {
        assert!(bbox.contains(&g.mean.xyz(), 1e-9));
        assert!(g.mean[3] >= 0.0 && g.mean[3] <= d.duration);
        assert!(g.is_finite());
    }
    assert!(init_gaussians(&d, 0, 0).is_err());
}

#[test]
fn zero_iterations_leave_the_initialization_untouched() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 4);
    let cfg = quick(0);
    assert_eq!(
        stage1_fit(&d, &cfg).unwrap().gaussians,
        init_state(&d, &cfg).unwrap().gaussians
    );
}

#[test]
fn single_static_blob_is_recovered() {
    let scene = common::single_blob_scene(1.0);
    let d = common::small_dataset(&scene, 24, 1, 4);
    let cfg = OptimConfig {
        stage1_iters: 2000,
        budget: 10,
        prune_interval: 100,
        prune_until: 1500,
        ..OptimConfig::default()
    };
    let state = stage1_fit(&d, &cfg).unwrap();
    let p = training_psnr(&state, &d).unwrap();
    assert!(p >= 30.0, "training PSNR {p:.2} dB");
    assert!(state.gaussians.len() <= cfg.budget);
}

#[test]
fn loss_goes_down_and_budget_holds() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 8);
    let cfg = quick(300);
    let state = stage1_fit(&d, &cfg).unwrap();
    assert_eq!(state.losses.len(), 300);
    assert_eq!(state.iteration, 300);
    let first: f64 = state.losses[..50].iter().sum::<f64>() / 50.0;
    assert!(state.recent_loss(50) < first, "{} !< {first}", state.recent_loss(50));
    assert!(state.gaussians.len() <= cfg.budget);
    assert!(state.gaussians.iter().all(|g| g.is_finite()));
}

#[test]
fn pruning_removes_transparent_primitives() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 4);
    let cfg = quick(20);
    let mut state = init_state(&d, &cfg).unwrap();
    for g in state.gaussians.iter_mut().take(10) {
        g.opacity_logit = -20.0;
    }
    stage1_continue(&mut state, &d, &cfg).unwrap();
    assert!(state.gaussians.iter().all(|g| g.opacity() >= cfg.prune_opacity));
    assert_eq!(state.gaussians.len(), cfg.budget);
}

#[test]
fn fitting_is_deterministic() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 4);
    let cfg = quick(60);
    let a = stage1_fit(&d, &cfg).unwrap();
    let b = stage1_fit(&d, &cfg).unwrap();
    assert_eq!(a, b);
    let c = stage1_fit(&d, &OptimConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.gaussians, c.gaussians);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 4);
    let state = stage1_fit(&d, &quick(30)).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&state, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    // loss history and the access log are not persisted
    let persisted = TrainState {
        losses: Vec::new(),
        accessed_cameras: Default::default(),
        ..state.clone()
    };
    assert_eq!(back, persisted);
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(again, buf);

    let mut bad = buf.clone();
    bad[0] ^= 0xff;
    assert!(matches!(
        read_checkpoint(bad.as_slice()),
        Err(CheckpointError::BadMagic)
    ));
    for cut in [4, 12, buf.len() / 2, buf.len() - 1] {
        assert!(read_checkpoint(&buf[..cut]).is_err(), "truncated at {cut}");
    }
}

#[test]
fn stage2_with_no_iterations_is_a_no_op() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 4);
    let state = stage1_fit(&d, &quick(20)).unwrap();
    let out = stage2_refine_fit(&state, &d, &IdentityFixer, &quick(20)).unwrap();
    assert_eq!(out, state);
}

#[test]
fn refined_loss_of_identical_clips_is_zero() {
    let d = common::small_dataset(&common::small_scene(), 48, 4, 4);
    let frames = d.camera_frames(0).into_iter().map(|f| f.image.clone()).collect();
    let clip = VideoClip::new(0, frames).unwrap();
    assert_eq!(refined_video_loss(&clip, &clip, 1.0, 1.0).unwrap(), 0.0);
    let mut other = clip.clone();
    other.frames[0].pixels[0] = 1.0 - other.frames[0].pixels[0];
    assert!(refined_video_loss(&clip, &other, 1.0, 1.0).unwrap() > 0.0);
}

#[test]
fn identity_refinement_barely_moves_a_converged_fit() {
    let d = common::small_dataset(&common::small_scene(), 16, 4, 8);
    let s1 = stage1_fit(&d, &quick(400)).unwrap();
    let cfg = OptimConfig {
        stage2_iters: 200,
        lambda_p: 0.0,
        ..quick(400)
    };
    let s2 = stage2_refine_fit(&s1, &d, &IdentityFixer, &cfg).unwrap();
    assert_eq!(s2.iteration, s1.iteration + 200);
    assert_eq!(s2.gaussians.len(), s1.gaussians.len());
    let before = evaluate(&s1, &d).unwrap().all().mean_psnr;
    let after = evaluate(&s2, &d).unwrap().all().mean_psnr;
    assert!((after - before).abs() < 0.1, "{before:.3} -> {after:.3}");
}

#[test]
fn ground_truth_primitives_score_perfectly() {
    let mut scene = common::small_scene();
    for p in &mut scene.primitives {
        p.trajectory = stagger4d::scene::Trajectory::Constant;
    }
    let d = common::small_dataset(&scene, 24, 4, 4);
    let bbox = frustum_intersection_box(&d.training_cameras(), 12.0).unwrap();
    let state = TrainState::from_gaussians(scene.to_static_gaussians(), render_settings(&d), bbox);
    let r = evaluate(&state, &d).unwrap();
    assert!(r.all().mean_psnr > 80.0, "{}", r.all().mean_psnr);
    assert!(r.all().mean_ssim > 0.999_999);
}
