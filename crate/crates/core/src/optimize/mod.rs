//! Two-stage reconstruction.
//!
//! Stage 1 fits primitives to the captured frames with `L1 + λ·(1 − SSIM)`.
//! Stage 2 renders every training camera on the capture's union grid, passes
//! those videos through an [`ArtifactFixer`](crate::refine::ArtifactFixer),
//! freezes the result, and keeps optimizing against the refined videos only with
//! `L1 + λ_p·(1 − MS-SSIM)`.

pub mod adam;
pub mod checkpoint;
pub mod init;

use std::collections::BTreeSet;

use log::{debug, info, warn};
use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{seconds_to_f64, CameraId, CameraModel};
use crate::frame::{RenderedFrame, VideoClip};
use crate::geometry::{self, Gaussian4D};
use crate::metrics::{self, FrameMetrics, GridLabel, MetricError, MetricReport};
use crate::raster::{self, GaussianGrad, RenderError, RenderSettings};
use crate::refine::{self, ArtifactFixer, RefineError};
use crate::scene::Dataset;

pub use adam::AdamState;
pub use init::{frustum_intersection_box, Aabb, InitSpec};

/// Learning rates are clamped to keep log-scales in this range.
const LOG_SCALE_RANGE: (f64, f64) = (-9.0, 7.0);
/// Halvings allowed by the divergence guard before giving up.
pub const MAX_RECOVERIES: u32 = 3;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("initialization failed: {0}")]
    Init(String),
    #[error("training diverged at iteration {iteration} after {recoveries} recoveries")]
    Divergence { iteration: u64, recoveries: u32 },
    #[error("dataset has no {0}")]
    EmptyDataset(&'static str),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

/// Per-family Adam step sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    /// Multiplied by the scene extent for spatial means and by the duration for temporal means.
    pub means: f64,
    pub scales: f64,
    pub rotations: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1.6e-4,
            scales: 5e-3,
            rotations: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub stage1_iters: u64,
    pub stage2_iters: u64,
    /// Frames per iteration; gradients are averaged in a fixed order.
    pub batch_size: usize,
    pub lr: LearningRates,
    pub budget: usize,
    pub prune_interval: u64,
    pub prune_opacity: f64,
    /// Pruning and respawning stop after this stage-1 iteration.
    pub prune_until: u64,
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub stage2_lambda_l1: f64,
    /// Weight of the perceptual term `1 − MS-SSIM` in stage 2.
    pub lambda_p: f64,
    pub sh_degree: usize,
    pub fourier_order: usize,
    pub init_opacity: f64,
    /// Initial spatial standard deviation; derived from the box when absent.
    pub init_scale: Option<f64>,
    /// Far cap of the frusta used for the initialization box.
    pub init_far: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 3000,
            stage2_iters: 1500,
            batch_size: 4,
            lr: LearningRates::default(),
            budget: 400,
            prune_interval: 250,
            prune_opacity: 0.01,
            prune_until: 2500,
            lambda_l1: 1.0,
            lambda_ssim: 0.2,
            stage2_lambda_l1: 1.0,
            lambda_p: 1.0,
            sh_degree: 0,
            fourier_order: 0,
            init_opacity: 0.1,
            init_scale: None,
            init_far: 12.0,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let lr = &self.lr;
        let rates = [lr.means, lr.scales, lr.rotations, lr.opacity, lr.color];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(OptimError::Config("learning rates must be positive".into()));
        }
        if self.budget == 0 {
            return Err(OptimError::Config("budget must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(OptimError::Config("batch size must be at least 1".into()));
        }
        if self.prune_interval == 0 {
            return Err(OptimError::Config("prune interval must be at least 1".into()));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(OptimError::Config("initial opacity must lie in (0, 1)".into()));
        }
        if self.sh_degree > geometry::color::MAX_SH_DEGREE {
            return Err(OptimError::Config(format!("sh degree {} above 2", self.sh_degree)));
        }
        let weights = [self.lambda_l1, self.lambda_ssim, self.stage2_lambda_l1, self.lambda_p];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(OptimError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything the optimizer carries between iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub gaussians: Vec<Gaussian4D>,
    pub iteration: u64,
    pub adam: AdamState,
    /// Learning-rate multiplier, halved by each divergence recovery.
    pub lr_scale: f64,
    pub recoveries: u32,
    /// Mean loss of every completed iteration.
    pub losses: Vec<f64>,
    /// Training cameras whose frames were read.
    pub accessed_cameras: BTreeSet<CameraId>,
    /// Spatial extent used to scale mean learning rates.
    pub extent: f64,
    pub bbox: Aabb,
    pub settings: RenderSettings,
}

impl TrainState {
    /// State around fixed primitives, e.g. for evaluating a known scene.
    pub fn from_gaussians(gaussians: Vec<Gaussian4D>, settings: RenderSettings, bbox: Aabb) -> Self {
        let adam = AdamState::new(gaussians.iter().map(|g| g.param_count()));
        Self {
            gaussians,
            iteration: 0,
            adam,
            lr_scale: 1.0,
            recoveries: 0,
            losses: Vec::new(),
            accessed_cameras: BTreeSet::new(),
            extent: bbox.extent(),
            bbox,
            settings,
        }
    }

    pub fn render(&self, cam: &CameraModel, t: f64) -> Result<RenderedFrame, RenderError> {
        raster::render(&self.gaussians, cam, t, &self.settings)
    }

    pub fn render_video(&self, cam: &CameraModel, times: &[f64]) -> Result<VideoClip, RenderError> {
        raster::render_video(&self.gaussians, cam, times, &self.settings)
    }

    /// Mean of the last `window` losses.
    pub fn recent_loss(&self, window: usize) -> f64 {
        let n = self.losses.len().min(window).max(1);
        self.losses.iter().rev().take(n).sum::<f64>() / n as f64
    }
}

pub fn render_settings(d: &Dataset) -> RenderSettings {
    RenderSettings {
        background: d.background,
        t_period: d.duration,
    }
}

/// Initial primitives inside the training cameras' common frustum box.
pub fn init_gaussians(d: &Dataset, budget: usize, seed: u64) -> Result<Vec<Gaussian4D>, OptimError> {
    let cfg = OptimConfig {
        budget,
        seed,
        ..OptimConfig::default()
    };
    Ok(init_state(d, &cfg)?.gaussians)
}

pub fn init_state(d: &Dataset, cfg: &OptimConfig) -> Result<TrainState, OptimError> {
    cfg.validate()?;
    if d.frames.is_empty() {
        return Err(OptimError::EmptyDataset("training frames"));
    }
    let cams = d.training_cameras();
    let bbox = frustum_intersection_box(&cams, cfg.init_far)?;
    let spec = InitSpec {
        budget: cfg.budget,
        duration: d.duration,
        sh_degree: cfg.sh_degree,
        fourier_order: cfg.fourier_order,
        opacity: cfg.init_opacity,
        spatial_scale: cfg.init_scale,
        seed: cfg.seed,
    };
    let gaussians = init::sample_gaussians(&bbox, &spec)?;
    Ok(TrainState::from_gaussians(gaussians, render_settings(d), bbox))
}

/// A frame to fit and the camera that sees it.
struct Target<'a> {
    camera: &'a CameraModel,
    frame: &'a RenderedFrame,
}

#[derive(Clone, Copy)]
enum Objective {
    Stage1 { l1: f64, ssim: f64 },
    Stage2 { l1: f64, perceptual: f64 },
}

/// Loss of one render against its target and the pixel adjoint.
fn frame_loss(render: &RenderedFrame, target: &RenderedFrame, obj: Objective) -> Result<(f64, Vec<f64>), OptimError> {
    let (l1, mut adj) = metrics::l1_with_grad(render, target)?;
    match obj {
        Objective::Stage1 { l1: wl, ssim: ws } => {
            adj.iter_mut().for_each(|a| *a *= wl);
            let mut loss = wl * l1;
            if ws > 0.0 {
                let (s, g) = metrics::ssim_with_grad(render, target)?;
                loss += ws * (1.0 - s);
                adj.iter_mut().zip(&g).for_each(|(a, gs)| *a -= ws * gs);
            }
            Ok((loss, adj))
        }
        Objective::Stage2 { l1: wl, perceptual: wp } => {
            adj.iter_mut().for_each(|a| *a *= wl);
            let mut loss = wl * l1;
            if wp > 0.0 {
                let (m, g) = metrics::ms_ssim_distance_with_grad(render, target)?;
                loss += wp * m.distance;
                adj.iter_mut().zip(&g).for_each(|(a, gd)| *a += wp * gd);
            }
            Ok((loss, adj))
        }
    }
}

/// Stage-2 loss `‖V_render − V̂‖₁ + λ_p·(1 − MS-SSIM)` averaged over the frames of two clips.
pub fn refined_video_loss(
    render: &VideoClip,
    refined: &VideoClip,
    lambda_l1: f64,
    lambda_p: f64,
) -> Result<f64, OptimError> {
    let obj = Objective::Stage2 {
        l1: lambda_l1,
        perceptual: lambda_p,
    };
    let mut total = 0.0;
    for (a, b) in render.frames.iter().zip(&refined.frames) {
        total += frame_loss(a, b, obj)?.0;
    }
    Ok(total / render.frames.len().max(1) as f64)
}

fn lr_for(k: usize, g: &Gaussian4D, state: &TrainState, lr: &LearningRates, duration: f64) -> f64 {
    let base = match k {
        0..=2 => lr.means * state.extent,
        3 => lr.means * duration,
        4..=7 => lr.scales,
        8..=15 => lr.rotations,
        16 => lr.opacity,
        _ => lr.color,
    };
    debug_assert!(k < g.param_count());
    base * state.lr_scale
}

struct Snapshot {
    gaussians: Vec<Gaussian4D>,
    adam: AdamState,
}

/// One optimizer step on `batch`; returns the mean loss.
fn step(
    state: &mut TrainState,
    batch: &[Target<'_>],
    obj: Objective,
    lr: &LearningRates,
    duration: f64,
    grad_norms: &mut [f64],
) -> Result<f64, OptimError> {
    let results: Vec<Result<(f64, Vec<GaussianGrad>), OptimError>> = batch
        .par_iter()
        .map(|tg| {
            let fwd = raster::render_forward(&state.gaussians, tg.camera, tg.frame.timestamp, &state.settings)?;
            let (loss, adj) = frame_loss(&fwd.frame, tg.frame, obj)?;
            let grads = fwd.backward(&state.gaussians, tg.camera, &state.settings, &adj)?;
            Ok((loss, grads))
        })
        .collect();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut flat: Vec<Vec<f64>> = state.gaussians.iter().map(|g| vec![0.0; g.param_count()]).collect();
    let mut buf = Vec::new();
    for r in results {
        let (l, grads) = r?;
        loss += l / n;
        for (i, g) in grads.iter().enumerate() {
            buf.clear();
            g.write_flat(&mut buf);
            for (acc, v) in flat[i].iter_mut().zip(&buf) {
                *acc += v / n;
            }
        }
    }
    if !loss.is_finite() {
        return Ok(loss);
    }
    state.adam.begin_step();
    let mut params = Vec::new();
    for i in 0..state.gaussians.len() {
        grad_norms[i] += (flat[i][0].powi(2) + flat[i][1].powi(2) + flat[i][2].powi(2)).sqrt();
        params.clear();
        state.gaussians[i].write_params(&mut params);
        let g = &state.gaussians[i];
        let rates: Vec<f64> = (0..params.len()).map(|k| lr_for(k, g, state, lr, duration)).collect();
        state.adam.update(i, &mut params, &flat[i], |k| rates[k]);
        let g = &mut state.gaussians[i];
        g.read_params(&params);
        for k in 0..4 {
            g.log_scale[k] = g.log_scale[k].clamp(LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
        }
        for q in [&mut g.rot_left, &mut g.rot_right] {
            let n = q.norm();
            if n > 1e-12 && n.is_finite() {
                *q /= n;
            }
        }
    }
    Ok(loss)
}

/// Drops primitives below the opacity threshold and refills the budget by
/// splitting the primitives with the largest accumulated positional gradient.
fn prune_and_respawn(state: &mut TrainState, cfg: &OptimConfig, grad_norms: &mut Vec<f64>, rng: &mut ChaCha8Rng) {
    let keep: Vec<bool> = state
        .gaussians
        .iter()
        .map(|g| g.opacity() >= cfg.prune_opacity)
        .collect();
    let pruned = keep.iter().filter(|k| !**k).count();
    let mut it = keep.iter();
    state.gaussians.retain(|_| *it.next().expect("mask"));
    let mut it = keep.iter();
    grad_norms.retain(|_| *it.next().expect("mask"));
    state.adam.retain(&keep);
    if state.gaussians.is_empty() {
        warn!("every primitive fell below the opacity threshold; respawning from the box");
        let spec = InitSpec {
            budget: cfg.budget,
            duration: state.settings.t_period,
            sh_degree: cfg.sh_degree,
            fourier_order: cfg.fourier_order,
            opacity: cfg.init_opacity,
            spatial_scale: cfg.init_scale,
            seed: rng.random(),
        };
        state.gaussians = init::sample_gaussians(&state.bbox, &spec).unwrap_or_default();
        *grad_norms = vec![0.0; state.gaussians.len()];
        state.adam = AdamState {
            step: state.adam.step,
            ..AdamState::new(state.gaussians.iter().map(|g| g.param_count()))
        };
        return;
    }
    let free = cfg.budget.saturating_sub(state.gaussians.len());
    let mut order: Vec<usize> = (0..state.gaussians.len()).collect();
    order.sort_by(|a, b| grad_norms[*b].total_cmp(&grad_norms[*a]).then(a.cmp(b)));
    for k in 0..free {
        let parent = order[k % order.len()];
        let mut child = state.gaussians[parent].clone();
        let cov = geometry::assemble_covariance(&child).map(|c| *c.matrix());
        if let Ok(cov) = cov {
            if let Some(l) = cov.cholesky() {
                let z = Vector4::from_fn(|_, _| standard_normal(rng));
                child.mean += l.l() * z;
            }
        }
        let shrink = 1.6f64.ln();
        for j in 0..4 {
            child.log_scale[j] -= shrink;
            state.gaussians[parent].log_scale[j] -= shrink;
        }
        state.adam.push(child.param_count());
        state.gaussians.push(child);
        grad_norms.push(0.0);
    }
    grad_norms.iter_mut().for_each(|g| *g = 0.0);
    debug!("pruned {pruned}, respawned {free}, now {}", state.gaussians.len());
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn params_finite(state: &TrainState) -> bool {
    state.gaussians.iter().all(|g| g.is_finite())
}

/// Shared loop: sample batches from `targets`, step, guard against divergence.
#[allow(clippy::too_many_arguments)]
fn run_loop(
    state: &mut TrainState,
    targets: &[Target<'_>],
    iters: u64,
    obj: Objective,
    cfg: &OptimConfig,
    duration: f64,
    allow_prune: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(), OptimError> {
    let mut grad_norms = vec![0.0; state.gaussians.len()];
    let mut snapshot = Snapshot {
        gaussians: state.gaussians.clone(),
        adam: state.adam.clone(),
    };
    let mut done = 0;
    while done < iters {
        let batch: Vec<Target<'_>> = (0..cfg.batch_size)
            .map(|_| {
                let t = &targets[rng.random_range(0..targets.len())];
                Target {
                    camera: t.camera,
                    frame: t.frame,
                }
            })
            .collect();
        let loss = step(state, &batch, obj, &cfg.lr, duration, &mut grad_norms)?;
        if !loss.is_finite() || !params_finite(state) {
            state.recoveries += 1;
            if state.recoveries > MAX_RECOVERIES {
                return Err(OptimError::Divergence {
                    iteration: state.iteration,
                    recoveries: state.recoveries - 1,
                });
            }
            warn!(
                "non-finite loss at iteration {}; halving learning rates",
                state.iteration
            );
            state.lr_scale *= 0.5;
            state.gaussians = snapshot.gaussians.clone();
            state.adam = snapshot.adam.clone();
            grad_norms = vec![0.0; state.gaussians.len()];
            continue;
        }
        state.iteration += 1;
        done += 1;
        state.losses.push(loss);
        if allow_prune && state.iteration.is_multiple_of(cfg.prune_interval) && state.iteration <= cfg.prune_until {
            prune_and_respawn(state, cfg, &mut grad_norms, rng);
        }
        debug_assert!(state.gaussians.len() <= cfg.budget.max(snapshot.gaussians.len()));
        debug_assert!(params_finite(state));
        if done % 100 == 0 {
            snapshot = Snapshot {
                gaussians: state.gaussians.clone(),
                adam: state.adam.clone(),
            };
            debug!("iteration {} loss {:.5}", state.iteration, state.recent_loss(100));
        }
    }
    Ok(())
}

/// Stage 1: fit to the captured training frames.
pub fn stage1_fit(d: &Dataset, cfg: &OptimConfig) -> Result<TrainState, OptimError> {
    let mut state = init_state(d, cfg)?;
    stage1_continue(&mut state, d, cfg)?;
    Ok(state)
}

/// Runs `cfg.stage1_iters` stage-1 iterations on an existing state.
pub fn stage1_continue(state: &mut TrainState, d: &Dataset, cfg: &OptimConfig) -> Result<(), OptimError> {
    cfg.validate()?;
    let mut targets = Vec::with_capacity(d.frames.len());
    for f in &d.frames {
        let camera = d
            .camera(f.camera_id)
            .ok_or(OptimError::EmptyDataset("camera for a frame"))?;
        targets.push(Target {
            camera,
            frame: &f.image,
        });
    }
    if targets.is_empty() {
        return Err(OptimError::EmptyDataset("training frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let obj = Objective::Stage1 {
        l1: cfg.lambda_l1,
        ssim: cfg.lambda_ssim,
    };
    let before = state.accessed_cameras.len();
    state.accessed_cameras.extend(d.frames.iter().map(|f| f.camera_id));
    run_loop(state, &targets, cfg.stage1_iters, obj, cfg, d.duration, true, &mut rng)?;
    info!(
        "stage 1: {} iterations, {} primitives, loss {:.5} (cameras read: {} new)",
        cfg.stage1_iters,
        state.gaussians.len(),
        state.recent_loss(100),
        state.accessed_cameras.len() - before
    );
    Ok(())
}

/// Union-grid videos of every training camera rendered from `state`.
pub fn render_training_videos(state: &TrainState, d: &Dataset) -> Result<Vec<VideoClip>, OptimError> {
    let times: Vec<f64> = d.schedule.union_timestamps().into_iter().map(seconds_to_f64).collect();
    d.training_ids()
        .par_iter()
        .map(|id| {
            let cam = d.camera(*id).ok_or(OptimError::EmptyDataset("camera"))?;
            Ok(state.render_video(cam, &times)?)
        })
        .collect()
}

/// Stage 2: refine union-grid renders once, then fit to the frozen refined videos.
pub fn stage2_refine_fit(
    state: &TrainState,
    d: &Dataset,
    refiner: &dyn ArtifactFixer,
    cfg: &OptimConfig,
) -> Result<TrainState, OptimError> {
    cfg.validate()?;
    let mut state = state.clone();
    if cfg.stage2_iters == 0 {
        return Ok(state);
    }
    let rendered = render_training_videos(&state, d)?;
    let refined: Vec<VideoClip> = rendered
        .iter()
        .map(|clip| refine::refine(refiner, clip))
        .collect::<Result<_, _>>()?;
    let mut targets = Vec::new();
    for clip in &refined {
        let camera = d.camera(clip.camera_id).ok_or(OptimError::EmptyDataset("camera"))?;
        for frame in &clip.frames {
            targets.push(Target { camera, frame });
        }
    }
    state.adam.reset();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let obj = Objective::Stage2 {
        l1: cfg.stage2_lambda_l1,
        perceptual: cfg.lambda_p,
    };
    run_loop(
        &mut state,
        &targets,
        cfg.stage2_iters,
        obj,
        cfg,
        d.duration,
        false,
        &mut rng,
    )?;
    info!(
        "stage 2 ({}): {} iterations, loss {:.5}",
        refiner.name(),
        cfg.stage2_iters,
        state.recent_loss(100)
    );
    Ok(state)
}

/// Renders every held-out view and scores it against the dataset.
pub fn evaluate(state: &TrainState, d: &Dataset) -> Result<MetricReport, OptimError> {
    if d.heldout.is_empty() {
        return Err(OptimError::EmptyDataset("held-out frames"));
    }
    let frames = d
        .heldout
        .par_iter()
        .map(|h| {
            let cam = d
                .camera(h.camera_id)
                .ok_or(OptimError::EmptyDataset("held-out camera"))?;
            let r = state.render(cam, seconds_to_f64(h.time))?;
            Ok(FrameMetrics {
                camera_id: h.camera_id,
                timestamp: seconds_to_f64(h.time),
                label: if d.is_on_grid(h.time) {
                    GridLabel::OnGrid
                } else {
                    GridLabel::Intermediate
                },
                psnr: metrics::psnr(&r, &h.image, 1.0)?,
                ssim: metrics::ssim(&r, &h.image)?,
                ms_ssim_distance: metrics::ms_ssim_distance(&r, &h.image)?.distance,
            })
        })
        .collect::<Result<Vec<_>, OptimError>>()?;
    Ok(MetricReport { frames })
}

/// Mean PSNR of `state` over the training frames.
pub fn training_psnr(state: &TrainState, d: &Dataset) -> Result<f64, OptimError> {
    let v = d
        .frames
        .par_iter()
        .map(|f| {
            let cam = d.camera(f.camera_id).ok_or(OptimError::EmptyDataset("camera"))?;
            let r = state.render(cam, f.image.timestamp)?;
            Ok(metrics::psnr(&r, &f.image, 1.0)?)
        })
        .collect::<Result<Vec<f64>, OptimError>>()?;
    Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
}
