//! End-to-end experiment commands behind the `stagger4d` binary.
//!
//! Every command writes into its own run directory holding a config snapshot,
//! a log, and whatever the command produces (datasets, checkpoints, renders,
//! reports, plots).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{effective_fps, make_schedule, seconds_to_f64, CaptureError, CaptureSchedule, Seconds};
use crate::metrics::{Aggregate, MetricError, MetricReport};
use crate::optimize::checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
use crate::optimize::{evaluate, stage1_fit, stage2_refine_fit, LearningRates, OptimConfig, OptimError, TrainState};
use crate::refine::{
    build_leave_one_out_pairs, build_subsample_pairs, ArtifactFixer, ExternalProcessFixer, IdentityFixer, OracleFixer,
    PairError, PairMethod, TemporalGaussianFixer, TemporalMedianFixer, TrainingPair,
};
use crate::scene::{
    build_dataset, load_dataset, save_dataset, subsample_temporal, Dataset, FastSceneSpec, RigSpec, SceneError,
    SceneProgram,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("plot: {0}")]
    Plot(String),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerName {
    Identity,
    TemporalMedian,
    TemporalGaussian,
    Oracle,
    External,
}

impl FromStr for RefinerName {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.replace('-', "_").as_str() {
            "identity" => RefinerName::Identity,
            "temporal_median" | "median" => RefinerName::TemporalMedian,
            "temporal_gaussian" | "gaussian" => RefinerName::TemporalGaussian,
            "oracle" => RefinerName::Oracle,
            "external" => RefinerName::External,
            _ => return Err(ExperimentError::Config(format!("unknown refiner {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerConfig {
    pub name: RefinerName,
    /// Temporal median window in frames.
    pub window: usize,
    /// Temporal Gaussian standard deviation in frames.
    pub sigma: f64,
    /// Program and leading arguments of the external refiner.
    pub command: Vec<String>,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            name: RefinerName::Identity,
            window: 3,
            sigma: 1.0,
            command: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsConfig {
    pub method: PairMethod,
    /// Temporal sub-sampling factor of the sub-sample method.
    pub factor: usize,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self {
            method: PairMethod::Subsample,
            factor: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    /// Refiner of the two "fix" cells.
    pub fix_refiner: RefinerName,
    /// Required async minus sync PSNR on intermediate frames, no-fix cells.
    pub threshold_db: f64,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            fix_refiner: RefinerName::Oracle,
            threshold_db: 1.0,
        }
    }
}

/// Everything a run needs; every field has a default and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scene: FastSceneSpec,
    /// JSON scene program used instead of the procedural scene.
    pub scene_file: Option<PathBuf>,
    pub rig: RigSpec,
    /// Number of staggered camera groups `K`.
    pub groups: usize,
    /// Per-camera frame interval `τ` as an exact fraction, e.g. `"1/25"`.
    pub frame_interval: String,
    /// Frames per camera.
    pub frames: usize,
    /// Missing keys fall back to [`experiment_optim`], not to `OptimConfig::default()`.
    #[serde(deserialize_with = "optim_over_experiment_defaults")]
    pub optim: OptimConfig,
    pub refiner: RefinerConfig,
    pub pairs: PairsConfig,
    pub ablate: AblateConfig,
    /// Existing dataset directory; synthesized from the scene when absent.
    pub dataset: Option<PathBuf>,
    /// Checkpoint scored by `evaluate`.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

/// Optimizer settings for the 64×64 desk rig: ten times the reference mean
/// learning rate, faster scale, rotation and color steps, and 6000 stage-1
/// iterations with densification every 100. The reference schedule leaves the
/// fast group under-fit at this resolution.
pub fn experiment_optim() -> OptimConfig {
    OptimConfig {
        stage1_iters: 6000,
        stage2_iters: 1000,
        prune_interval: 100,
        prune_until: 5500,
        lr: LearningRates {
            means: 1.6e-3,
            scales: 1e-2,
            rotations: 3e-3,
            opacity: 5e-2,
            color: 1e-2,
        },
        ..OptimConfig::default()
    }
}

fn optim_over_experiment_defaults<'de, D: serde::Deserializer<'de>>(de: D) -> Result<OptimConfig, D::Error> {
    use serde::de::Error;
    let given = toml::Table::deserialize(de)?;
    let mut merged = toml::Table::try_from(experiment_optim()).map_err(D::Error::custom)?;
    for (k, v) in given {
        match (merged.get_mut(&k), v) {
            (Some(toml::Value::Table(base)), toml::Value::Table(over)) => base.extend(over),
            (_, v) => {
                merged.insert(k, v);
            }
        }
    }
    toml::Value::Table(merged).try_into().map_err(D::Error::custom)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: FastSceneSpec::default(),
            scene_file: None,
            rig: RigSpec::default(),
            groups: 4,
            frame_interval: "1/25".into(),
            frames: 25,
            optim: experiment_optim(),
            refiner: RefinerConfig::default(),
            pairs: PairsConfig::default(),
            ablate: AblateConfig::default(),
            dataset: None,
            checkpoint: None,
            out_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// `τ` parsed from `frame_interval`.
    pub fn tau(&self) -> Result<Seconds, ExperimentError> {
        let t = Seconds::from_str(self.frame_interval.trim())
            .map_err(|e| ExperimentError::Config(format!("frame_interval {:?}: {e}", self.frame_interval)))?;
        if t <= Seconds::from_integer(0) {
            return Err(ExperimentError::Config("frame_interval must be positive".into()));
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let tau = self.tau()?;
        if self.groups == 0 || self.groups > self.rig.cameras {
            return Err(ExperimentError::Config(format!(
                "groups must lie in 1..={} (training cameras), got {}",
                self.rig.cameras, self.groups
            )));
        }
        if self.frames == 0 {
            return Err(ExperimentError::Config("frames must be at least 1".into()));
        }
        let duration = seconds_to_f64(tau) * self.frames as f64;
        if let Some(p) = &self.scene_file {
            if !p.is_file() {
                return Err(ExperimentError::Config(format!("scene file {} not found", p.display())));
            }
        } else if (self.scene.duration - duration).abs() > 1e-9 {
            return Err(ExperimentError::Config(format!(
                "scene duration {} differs from frames·τ = {duration}",
                self.scene.duration
            )));
        }
        for (what, p) in [("dataset", &self.dataset), ("checkpoint", &self.checkpoint)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ExperimentError::Config(format!("{what} {} not found", p.display())));
                }
            }
        }
        if self.refiner.name == RefinerName::External && self.refiner.command.is_empty() {
            return Err(ExperimentError::Config("external refiner needs a command".into()));
        }
        if self.pairs.factor == 0 {
            return Err(ExperimentError::Config("pairs.factor must be at least 1".into()));
        }
        self.optim
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Optimizer settings with the run seed applied.
    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            seed: self.seed,
            ..self.optim.clone()
        }
    }

    pub fn scene_program(&self) -> Result<SceneProgram, ExperimentError> {
        match &self.scene_file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                let s: SceneProgram = serde_json::from_str(&text)
                    .map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))?;
                s.validate()?;
                Ok(s)
            }
            None => Ok(SceneProgram::fast_motion(&FastSceneSpec {
                seed: self.scene.seed,
                ..self.scene.clone()
            })),
        }
    }

    /// The staggered capture schedule `K` groups at interval `τ`.
    pub fn schedule(&self) -> Result<CaptureSchedule, ExperimentError> {
        Ok(make_schedule(self.rig.cameras, self.groups, self.tau()?, self.frames)?)
    }

    /// Synchronous schedule at `τ/K` with `K·frames` frames per camera.
    pub fn full_rate_schedule(&self) -> Result<CaptureSchedule, ExperimentError> {
        let k = self.groups as i64;
        Ok(make_schedule(
            self.rig.cameras,
            1,
            self.tau()? / k,
            self.frames * self.groups,
        )?)
    }
}

/// Dataset captured with the configured staggered schedule.
pub fn synthesize_dataset(cfg: &ExperimentConfig) -> Result<Dataset, ExperimentError> {
    let scene = cfg.scene_program()?;
    Ok(build_dataset(
        &scene,
        &cfg.rig.build(),
        &cfg.schedule()?,
        &cfg.rig.heldout_ids(),
    )?)
}

/// Dataset captured synchronously at `K/τ`; sub-sampling it gives every ablation cell.
pub fn synthesize_full_rate(cfg: &ExperimentConfig) -> Result<Dataset, ExperimentError> {
    let scene = cfg.scene_program()?;
    Ok(build_dataset(
        &scene,
        &cfg.rig.build(),
        &cfg.full_rate_schedule()?,
        &cfg.rig.heldout_ids(),
    )?)
}

/// A run directory plus its log file.
pub struct Run {
    pub dir: PathBuf,
    log: BufWriter<fs::File>,
}

impl Run {
    /// Creates `<out_dir>/<command>-<unix seconds>[-n]` and snapshots the config.
    pub fn create(cfg: &ExperimentConfig, command: &str) -> Result<Self, ExperimentError> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
        let mut n = 0;
        let dir = loop {
            let name = if n == 0 {
                format!("{command}-{stamp}")
            } else {
                format!("{command}-{stamp}-{n}")
            };
            let dir = cfg.out_dir.join(name);
            match fs::create_dir(&dir) {
                Ok(()) => break dir,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(io_err(&dir, e)),
            }
        };
        Self::in_dir(cfg, dir)
    }

    /// Uses `dir` as the run directory, creating it if needed.
    pub fn in_dir(cfg: &ExperimentConfig, dir: PathBuf) -> Result<Self, ExperimentError> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let snap = dir.join("config.toml");
        fs::write(&snap, cfg.to_toml()).map_err(|e| io_err(&snap, e))?;
        let path = dir.join("run.log");
        let log = BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
        Ok(Self { dir, log })
    }

    /// Logs `msg` and appends it to `run.log`.
    pub fn note(&mut self, msg: &str) {
        info!("{msg}");
        let _ = writeln!(self.log, "{msg}");
        let _ = self.log.flush();
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), ExperimentError> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    }

    fn write_report(&self, name: &str, r: &MetricReport) -> Result<(), ExperimentError> {
        let p = self.path(name);
        let f = fs::File::create(&p).map_err(|e| io_err(&p, e))?;
        r.write_csv(BufWriter::new(f))?;
        Ok(())
    }

    fn write_checkpoint(&self, name: &str, s: &TrainState) -> Result<(), ExperimentError> {
        let p = self.path(name);
        let f = fs::File::create(&p).map_err(|e| io_err(&p, e))?;
        let mut w = BufWriter::new(f);
        write_checkpoint(s, &mut w)?;
        w.flush().map_err(|e| io_err(&p, e))
    }
}

pub fn build_refiner(
    name: RefinerName,
    cfg: &RefinerConfig,
    d: &Dataset,
) -> Result<Box<dyn ArtifactFixer>, ExperimentError> {
    Ok(match name {
        RefinerName::Identity => Box::new(IdentityFixer),
        RefinerName::TemporalMedian => Box::new(TemporalMedianFixer {
            window: cfg.window.max(1),
        }),
        RefinerName::TemporalGaussian => Box::new(TemporalGaussianFixer { sigma: cfg.sigma }),
        RefinerName::Oracle => {
            let scene = d
                .scene
                .clone()
                .ok_or_else(|| ExperimentError::Config("the oracle refiner needs a synthetic dataset".into()))?;
            Box::new(OracleFixer {
                scene,
                cameras: d.cameras.clone(),
            })
        }
        RefinerName::External => {
            let (program, args) = cfg
                .command
                .split_first()
                .ok_or_else(|| ExperimentError::Config("external refiner needs a command".into()))?;
            Box::new(ExternalProcessFixer::new(program.clone(), args.to_vec()))
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisSummary {
    pub dataset_dir: PathBuf,
    pub effective_fps: f64,
    pub views_per_instant: f64,
    pub training_frames: usize,
    pub heldout_frames: usize,
}

/// Renders the configured capture and writes it to `<run>/dataset`.
pub fn cmd_synthesize(cfg: &ExperimentConfig, run: &mut Run) -> Result<SynthesisSummary, ExperimentError> {
    cfg.validate()?;
    let d = synthesize_dataset(cfg)?;
    let dir = run.path("dataset");
    save_dataset(&d, &dir)?;
    let cams = d.schedule.tracks().len();
    let s = SynthesisSummary {
        dataset_dir: dir,
        effective_fps: effective_fps(&d.schedule),
        views_per_instant: cams as f64 / d.schedule.group_count() as f64,
        training_frames: d.frames.len(),
        heldout_frames: d.heldout.len(),
    };
    run.note(&format!(
        "schedule: {cams} cameras in {} groups, effective {:.3} FPS, {:.3} views per instant",
        d.schedule.group_count(),
        s.effective_fps,
        s.views_per_instant
    ));
    run.note(&format!(
        "wrote {} training and {} held-out frames to {}",
        s.training_frames,
        s.heldout_frames,
        s.dataset_dir.display()
    ));
    Ok(s)
}

fn dataset_for(cfg: &ExperimentConfig) -> Result<Dataset, ExperimentError> {
    match &cfg.dataset {
        Some(dir) => Ok(load_dataset(dir)?),
        None => synthesize_dataset(cfg),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructOutcome {
    pub stage1: MetricReport,
    /// Present when stage 2 ran.
    pub stage2: Option<MetricReport>,
    pub checkpoint: PathBuf,
}

impl ReconstructOutcome {
    pub fn final_report(&self) -> &MetricReport {
        self.stage2.as_ref().unwrap_or(&self.stage1)
    }
}

/// Stage 1, then stage 2 with the configured refiner when `stage2_iters > 0`.
///
/// Writes `checkpoint_stage1.bin`, `checkpoint.bin`, `report_stage1.csv`,
/// `report_stage2.csv` (stage 2 only), `report.csv` (final) and held-out renders.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, run: &mut Run) -> Result<ReconstructOutcome, ExperimentError> {
    cfg.validate()?;
    let d = dataset_for(cfg)?;
    let ocfg = cfg.optim_config();
    let refiner = build_refiner(cfg.refiner.name, &cfg.refiner, &d)?;
    run.note(&format!(
        "reconstruct: {} training frames, {} held-out, budget {}, seed {}",
        d.frames.len(),
        d.heldout.len(),
        ocfg.budget,
        ocfg.seed
    ));
    let s1 = stage1_fit(&d, &ocfg)?;
    let r1 = evaluate(&s1, &d)?;
    run.write_checkpoint("checkpoint_stage1.bin", &s1)?;
    run.write_report("report_stage1.csv", &r1)?;
    run.note(&format!("stage 1 held-out:\n{}", r1.summary()));
    let (fin, r2) = if ocfg.stage2_iters > 0 {
        let s2 = stage2_refine_fit(&s1, &d, refiner.as_ref(), &ocfg)?;
        let r2 = evaluate(&s2, &d)?;
        run.write_report("report_stage2.csv", &r2)?;
        run.note(&format!("stage 2 ({}) held-out:\n{}", refiner.name(), r2.summary()));
        (s2, Some(r2))
    } else {
        (s1, None)
    };
    run.write_checkpoint("checkpoint.bin", &fin)?;
    let outcome = ReconstructOutcome {
        stage1: r1,
        stage2: r2,
        checkpoint: run.path("checkpoint.bin"),
    };
    run.write_report("report.csv", outcome.final_report())?;
    write_heldout_renders(&fin, &d, &run.path("renders"))?;
    Ok(outcome)
}

/// Held-out renders as `renders/cam{id}_f{index}.png`.
pub fn write_heldout_renders(state: &TrainState, d: &Dataset, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for h in &d.heldout {
        let cam = d.camera(h.camera_id).ok_or(SceneError::UnknownCamera(h.camera_id))?;
        let img = state.render(cam, seconds_to_f64(h.time)).map_err(OptimError::from)?;
        let p = dir.join(format!("cam{:03}_f{:05}.png", h.camera_id, h.frame_index));
        crate::frame::write_png16(&img, &p).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

/// Scores `cfg.checkpoint` on the held-out views; writes `report.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, run: &mut Run) -> Result<MetricReport, ExperimentError> {
    cfg.validate()?;
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("evaluate needs `checkpoint`".into()))?;
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let state = read_checkpoint(std::io::BufReader::new(f))?;
    let d = dataset_for(cfg)?;
    let r = evaluate(&state, &d)?;
    run.write_report("report.csv", &r)?;
    run.note(&format!("{} held-out:\n{}", path.display(), r.summary()));
    Ok(r)
}

/// Builds training pairs under `<run>/pairs` from the configured or a full-rate synthetic dataset.
pub fn cmd_make_pairs(cfg: &ExperimentConfig, run: &mut Run) -> Result<Vec<TrainingPair>, ExperimentError> {
    cfg.validate()?;
    let d = match &cfg.dataset {
        Some(dir) => load_dataset(dir)?,
        None => synthesize_full_rate(cfg)?,
    };
    let dir = run.path("pairs");
    let ocfg = cfg.optim_config();
    let pairs = match cfg.pairs.method {
        PairMethod::Subsample => build_subsample_pairs(&d, cfg.pairs.factor, &ocfg, &dir)?,
        PairMethod::LeaveOneOut => build_leave_one_out_pairs(&d, &ocfg, &dir)?,
    };
    run.note(&format!(
        "{} {} pairs written to {}",
        pairs.len(),
        cfg.pairs.method.tag(),
        dir.display()
    ));
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capture {
    Sync,
    Async,
}

impl Capture {
    pub fn label(self) -> &'static str {
        match self {
            Capture::Sync => "Sync.",
            Capture::Async => "Async.",
        }
    }
}

/// One cell of the {sync, async} × {no fix, fix} grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub capture: Capture,
    pub fixed: bool,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub refiner: String,
    pub threshold_db: f64,
}

impl AblationTable {
    pub fn cell(&self, capture: Capture, fixed: bool) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.capture == capture && c.fixed == fixed)
    }

    /// Async minus sync mean PSNR on intermediate frames, no-fix cells.
    pub fn async_margin_db(&self) -> f64 {
        match (self.cell(Capture::Async, false), self.cell(Capture::Sync, false)) {
            (Some(a), Some(s)) => a.report.intermediate().mean_psnr - s.report.intermediate().mean_psnr,
            _ => f64::NAN,
        }
    }

    pub fn meets_threshold(&self) -> bool {
        self.async_margin_db() >= self.threshold_db
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "capture,artifact_fix,psnr_all,ssim_all,psnr_on_grid,ssim_on_grid,psnr_intermediate,ssim_intermediate,MS-SSIM-distance\n",
        );
        for c in &self.cells {
            let (a, o, i) = (c.report.all(), c.report.on_grid(), c.report.intermediate());
            s += &format!(
                "{},{},{:.4},{:.5},{:.4},{:.5},{:.4},{:.5},{:.5}\n",
                c.capture.label(),
                c.fixed,
                a.mean_psnr,
                a.mean_ssim,
                o.mean_psnr,
                o.mean_ssim,
                i.mean_psnr,
                i.mean_ssim,
                a.mean_ms_ssim_distance
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "| Capture | Artifact-fix ({}) | PSNR | SSIM | PSNR on-grid | PSNR intermediate | MS-SSIM-distance |\n|---|---|---|---|---|---|---|\n",
            self.refiner
        );
        for c in &self.cells {
            let (a, o, i): (Aggregate, Aggregate, Aggregate) =
                (c.report.all(), c.report.on_grid(), c.report.intermediate());
            s += &format!(
                "| {} | {} | {:.2} | {:.4} | {:.2} | {:.2} | {:.4} |\n",
                c.capture.label(),
                if c.fixed { "yes" } else { "no" },
                a.mean_psnr,
                a.mean_ssim,
                o.mean_psnr,
                i.mean_psnr,
                a.mean_ms_ssim_distance
            );
        }
        s += &format!(
            "\nasync - sync (no fix, intermediate): {:+.3} dB, threshold {:.3} dB: {}\n",
            self.async_margin_db(),
            self.threshold_db,
            if self.meets_threshold() { "met" } else { "NOT met" }
        );
        s
    }
}

/// Runs the four ablation cells on sub-samples of one full-rate capture.
///
/// No-fix cells stop after stage 1; fix cells continue with stage 2 using
/// `cfg.ablate.fix_refiner`. All cells are scored on the same held-out frames.
pub fn run_ablation(cfg: &ExperimentConfig, full: &Dataset) -> Result<AblationTable, ExperimentError> {
    let ocfg = cfg.optim_config();
    let refiner = build_refiner(cfg.ablate.fix_refiner, &cfg.refiner, full)?;
    let mut cells = Vec::with_capacity(4);
    for capture in [Capture::Sync, Capture::Async] {
        let d = subsample_temporal(full, cfg.groups, capture == Capture::Async)?;
        let s1 = stage1_fit(&d, &ocfg)?;
        cells.push(AblationCell {
            capture,
            fixed: false,
            report: evaluate(&s1, &d)?,
        });
        let s2 = stage2_refine_fit(&s1, &d, refiner.as_ref(), &ocfg)?;
        cells.push(AblationCell {
            capture,
            fixed: true,
            report: evaluate(&s2, &d)?,
        });
    }
    Ok(AblationTable {
        cells,
        refiner: refiner.name().to_string(),
        threshold_db: cfg.ablate.threshold_db,
    })
}

/// Writes `ablation.csv`, `ablation.md`, `ablation_psnr.svg` and `psnr_over_time.svg`.
pub fn cmd_ablate(cfg: &ExperimentConfig, run: &mut Run) -> Result<AblationTable, ExperimentError> {
    cfg.validate()?;
    let full = synthesize_full_rate(cfg)?;
    run.note(&format!(
        "ablation: {} full-rate frames, K = {}, fix refiner {:?}",
        full.frames.len(),
        cfg.groups,
        cfg.ablate.fix_refiner
    ));
    let table = run_ablation(cfg, &full)?;
    run.write("ablation.csv", table.to_csv().as_bytes())?;
    let md = table.to_markdown();
    run.write("ablation.md", md.as_bytes())?;
    for c in &table.cells {
        let name = format!(
            "report_{}_{}.csv",
            c.capture.label().trim_end_matches('.').to_lowercase(),
            if c.fixed { "fix" } else { "nofix" }
        );
        run.write_report(&name, &c.report)?;
    }
    plot::bars(&table, &run.path("ablation_psnr.svg"))?;
    plot::over_time(&table, &run.path("psnr_over_time.svg"))?;
    run.note(&md);
    Ok(table)
}

mod plot {
    use std::path::Path;

    use plotters::prelude::*;

    use super::{AblationTable, ExperimentError};

    const COLORS: [RGBColor; 4] = [
        RGBColor(120, 120, 200),
        RGBColor(40, 40, 160),
        RGBColor(230, 140, 80),
        RGBColor(190, 60, 20),
    ];

    fn err(e: impl std::fmt::Display) -> ExperimentError {
        ExperimentError::Plot(e.to_string())
    }

    fn cell_name(c: &super::AblationCell) -> String {
        format!("{} {}", c.capture.label(), if c.fixed { "+fix" } else { "no fix" })
    }

    /// Grouped bars: on-grid and intermediate PSNR per cell.
    pub fn bars(t: &AblationTable, path: &Path) -> Result<(), ExperimentError> {
        let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let vals: Vec<(f64, f64)> = t
            .cells
            .iter()
            .map(|c| (c.report.on_grid().mean_psnr, c.report.intermediate().mean_psnr))
            .collect();
        let lo = vals.iter().flat_map(|(a, b)| [*a, *b]).fold(f64::INFINITY, f64::min);
        let hi = vals
            .iter()
            .flat_map(|(a, b)| [*a, *b])
            .fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = ((lo - 1.0).floor(), (hi + 1.0).ceil());
        let mut chart = ChartBuilder::on(&root)
            .caption("held-out PSNR (dB): on-grid | intermediate", ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(30)
            .y_label_area_size(45)
            .build_cartesian_2d(0.0..(2.0 * vals.len() as f64 + 1.0), lo..hi)
            .map_err(err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .disable_x_axis()
            .y_desc("PSNR (dB)")
            .draw()
            .map_err(err)?;
        for (i, (c, (on, inter))) in t.cells.iter().zip(&vals).enumerate() {
            let x = 2.0 * i as f64 + 0.5;
            let color = COLORS[i % COLORS.len()];
            chart
                .draw_series([
                    Rectangle::new([(x, lo), (x + 0.8, *on)], color.mix(0.5).filled()),
                    Rectangle::new([(x + 0.8, lo), (x + 1.6, *inter)], color.filled()),
                ])
                .map_err(err)?
                .label(cell_name(c))
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
        root.present().map_err(err)
    }

    /// Per-timestamp held-out PSNR of every cell.
    pub fn over_time(t: &AblationTable, path: &Path) -> Result<(), ExperimentError> {
        let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let series: Vec<Vec<(f64, f64)>> = t
            .cells
            .iter()
            .map(|c| c.report.frames.iter().map(|f| (f.timestamp, f.psnr)).collect())
            .collect();
        let all = series.iter().flatten();
        let (t0, t1) = all
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (p0, p1) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        if !(t0.is_finite() && p0.is_finite()) {
            return Err(ExperimentError::Plot("no frames to plot".into()));
        }
        let mut chart = ChartBuilder::on(&root)
            .caption("held-out PSNR over time", ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(35)
            .y_label_area_size(45)
            .build_cartesian_2d(t0..t1.max(t0 + 1e-9), (p0 - 0.5).floor()..(p1 + 0.5).ceil())
            .map_err(err)?;
        chart
            .configure_mesh()
            .x_desc("time (s)")
            .y_desc("PSNR (dB)")
            .draw()
            .map_err(err)?;
        for (i, (c, s)) in t.cells.iter().zip(series).enumerate() {
            let color = COLORS[i % COLORS.len()];
            chart
                .draw_series(LineSeries::new(s, color.stroke_width(2)))
                .map_err(err)?
                .label(cell_name(c))
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 14, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
        root.present().map_err(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_optim_table_keeps_experiment_defaults() {
        let cfg = ExperimentConfig::from_toml("[optim]\nstage1_iters = 10\n[optim.lr]\nmeans = 1e-2\n").unwrap();
        let expect = experiment_optim();
        assert_eq!(cfg.optim.stage1_iters, 10);
        assert_eq!(cfg.optim.lr.means, 1e-2);
        assert_eq!(cfg.optim.lr.scales, expect.lr.scales);
        assert_eq!(cfg.optim.prune_interval, expect.prune_interval);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in ["bogus = 1", "[optim]\nbogus = 1", "[optim.lr]\nbogus = 1"] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn refiner_names_parse() {
        assert_eq!("median".parse::<RefinerName>().unwrap(), RefinerName::TemporalMedian);
        assert_eq!("oracle".parse::<RefinerName>().unwrap(), RefinerName::Oracle);
        assert!("bogus".parse::<RefinerName>().is_err());
    }
}
