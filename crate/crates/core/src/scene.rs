//! Analytic dynamic scenes, camera rigs and rendered multi-view datasets.
//!
//! Ground truth is drawn with the same projection and compositing code as the
//! reconstruction, so a reconstruction error is never a renderer mismatch.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{seconds_to_f64, CameraId, CameraModel, CameraTrack, CaptureError, CaptureSchedule, Seconds};
use crate::frame::{read_png16, write_png16, FrameError, RenderedFrame};
use crate::geometry::{quat, ColorCoeffs, ConditionedGaussian3, Gaussian4D, Rgb};
use crate::raster::{project_conditioned, render_splats};

/// Temporal scale given to primitives converted from a static scene.
pub const STATIC_TEMPORAL_SCALE: f64 = 1e6;

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("time {t} s is outside the scene duration [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("every rig camera is held out; nothing left to train on")]
    EmptyTrainingSet,
    #[error("camera {0} is not part of the rig")]
    UnknownCamera(CameraId),
    #[error("sub-sampling leaves camera {0} without frames")]
    EmptySubsample(CameraId),
    #[error("asynchronous sub-sampling needs a synchronous source dataset")]
    AlreadyAsynchronous,
    #[error("sub-sampling factor must be at least 1")]
    ZeroFactor,
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("dataset io at {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SceneError {
    SceneError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Time-dependent offset added to a primitive's base position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Constant,
    Linear {
        velocity: [f64; 3],
    },
    /// `amplitude · sin(2π f t + phase)`.
    Sinusoidal {
        amplitude: [f64; 3],
        frequency: f64,
        phase: f64,
    },
    /// Circle of `radius` in the plane orthogonal to `normal`.
    Circular {
        radius: f64,
        frequency: f64,
        phase: f64,
        normal: [f64; 3],
    },
}

impl Trajectory {
    pub fn offset(&self, t: f64) -> Vector3<f64> {
        match self {
            Trajectory::Constant => Vector3::zeros(),
            Trajectory::Linear { velocity } => Vector3::from(*velocity) * t,
            Trajectory::Sinusoidal {
                amplitude,
                frequency,
                phase,
            } => Vector3::from(*amplitude) * (TAU * frequency * t + phase).sin(),
            Trajectory::Circular {
                radius,
                frequency,
                phase,
                normal,
            } => {
                let (u, v) = plane_basis(&Vector3::from(*normal));
                let a = TAU * frequency * t + phase;
                (u * a.cos() + v * a.sin()) * *radius
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Trajectory::Constant => Ok(()),
            Trajectory::Linear { velocity } if finite(velocity) => Ok(()),
            Trajectory::Sinusoidal {
                amplitude,
                frequency,
                phase,
            } if finite(amplitude) && finite(&[*frequency, *phase]) && *frequency >= 0.0 => Ok(()),
            Trajectory::Circular {
                radius,
                frequency,
                phase,
                normal,
            } if finite(&[*radius, *frequency, *phase])
                && finite(normal)
                && *frequency >= 0.0
                && Vector3::from(*normal).norm() > 1e-12 =>
            {
                Ok(())
            }
            other => Err(format!("bad trajectory {other:?}")),
        }
    }
}

fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    (u, n.cross(&u))
}

/// A colored spatial blob following a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePrimitive {
    pub mean: [f64; 3],
    /// Standard deviations along the rotated axes.
    pub scale: [f64; 3],
    /// Orientation quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub color: Rgb,
    pub opacity: f64,
    pub trajectory: Trajectory,
}

impl ScenePrimitive {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&Vector3::from(self.scale).map(|v| v * v));
        r * s * r.transpose()
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        Vector3::from(self.mean) + self.trajectory.offset(t)
    }
}

/// Ground-truth dynamic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneProgram {
    pub primitives: Vec<ScenePrimitive>,
    pub duration: f64,
    pub background: Rgb,
}

/// Knobs of the procedural fast-motion scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FastSceneSpec {
    pub static_count: usize,
    pub fast_count: usize,
    /// Oscillation frequency of the fast group in Hz.
    pub fast_frequency: f64,
    /// Peak displacement of the fast group in world units.
    pub fast_amplitude: f64,
    pub fast_scale: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Default for FastSceneSpec {
    fn default() -> Self {
        Self {
            static_count: 120,
            fast_count: 6,
            fast_frequency: 3.5,
            fast_amplitude: 0.6,
            fast_scale: 0.16,
            duration: 1.0,
            seed: 7,
        }
    }
}

impl SceneProgram {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SceneError::InvalidScene("duration must be positive".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let ok = p.mean.iter().chain(&p.color).all(|v| v.is_finite())
                && p.scale.iter().all(|s| *s > 0.0 && s.is_finite())
                && p.rotation.iter().map(|v| v * v).sum::<f64>() > 1e-12
                && p.opacity > 0.0
                && p.opacity < 1.0;
            if !ok {
                return Err(SceneError::InvalidScene(format!(
                    "primitive {i} has invalid parameters"
                )));
            }
            p.trajectory
                .validate()
                .map_err(|e| SceneError::InvalidScene(format!("primitive {i}: {e}")))?;
        }
        Ok(())
    }

    /// A static textured cluster with a group of fast oscillating blobs around it.
    pub fn fast_motion(spec: &FastSceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut primitives = Vec::with_capacity(spec.static_count + spec.fast_count);
        for _ in 0..spec.static_count {
            let dir: Vector3<f64> = loop {
                let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                if v.norm() <= 1.0 {
                    break v;
                }
            };
            let p = Vector3::new(dir.x * 0.7, dir.y * 0.9, dir.z * 0.7);
            let color = [
                0.5 + 0.35 * (3.0 * p.y + 1.0).sin(),
                0.5 + 0.35 * (4.0 * p.x - 0.5).sin(),
                0.5 + 0.35 * (3.5 * p.z + 2.0).cos(),
            ];
            primitives.push(ScenePrimitive {
                mean: p.into(),
                scale: [
                    rng.random_range(0.07..0.16),
                    rng.random_range(0.07..0.16),
                    rng.random_range(0.07..0.16),
                ],
                rotation: random_unit_quat(&mut rng),
                color,
                opacity: rng.random_range(0.6..0.9),
                trajectory: Trajectory::Constant,
            });
        }
        let palette = [
            [0.95, 0.15, 0.1],
            [0.1, 0.9, 0.2],
            [0.15, 0.3, 0.95],
            [0.95, 0.9, 0.1],
            [0.9, 0.2, 0.9],
            [0.1, 0.9, 0.9],
        ];
        for k in 0..spec.fast_count {
            let angle = TAU * k as f64 / spec.fast_count.max(1) as f64 + 0.3;
            let height = if k % 2 == 0 { 0.55 } else { -0.45 };
            let base = Vector3::new(1.05 * angle.cos(), height, 1.05 * angle.sin());
            let phase = rng.random_range(0.0..TAU);
            let frequency = spec.fast_frequency * rng.random_range(0.85..1.15);
            let trajectory = if k % 3 == 2 {
                Trajectory::Circular {
                    radius: spec.fast_amplitude * 0.8,
                    frequency,
                    phase,
                    normal: [angle.cos(), 0.0, angle.sin()],
                }
            } else {
                let tangent = Vector3::new(-angle.sin(), 0.0, angle.cos());
                let dir = (tangent + Vector3::y() * rng.random_range(-0.6..0.6)).normalize();
                Trajectory::Sinusoidal {
                    amplitude: (dir * spec.fast_amplitude).into(),
                    frequency,
                    phase,
                }
            };
            primitives.push(ScenePrimitive {
                mean: base.into(),
                scale: [spec.fast_scale; 3],
                rotation: [1.0, 0.0, 0.0, 0.0],
                color: palette[k % palette.len()],
                opacity: 0.95,
                trajectory,
            });
        }
        Self {
            primitives,
            duration: spec.duration,
            background: [0.12, 0.12, 0.12],
        }
    }

    /// The same scene frozen at `t = 0` as 4D primitives with a huge temporal extent.
    pub fn to_static_gaussians(&self) -> Vec<Gaussian4D> {
        self.primitives
            .iter()
            .map(|p| {
                let q = Vector4::from(p.rotation);
                let q = q / q.norm();
                let pos = p.position(0.0);
                let mut g = Gaussian4D::axis_aligned(
                    Vector4::new(pos.x, pos.y, pos.z, 0.5 * self.duration),
                    Vector4::new(p.scale[0], p.scale[1], p.scale[2], STATIC_TEMPORAL_SCALE),
                    p.opacity,
                    ColorCoeffs::constant(p.color),
                );
                // q v q̄ rotates the spatial part and leaves t alone
                g.rot_left = q;
                g.rot_right = quat::conjugate(&q);
                g
            })
            .collect()
    }
}

fn random_unit_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: Vector4<f64> = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return (q / n).into();
        }
    }
}

/// Renders the scene exactly at time `t`.
pub fn render_ground_truth(p: &SceneProgram, cam: &CameraModel, t: f64) -> Result<RenderedFrame, SceneError> {
    // tolerate float noise from rational timestamps at the end point
    if !(t >= -1e-12 && t <= p.duration + 1e-12) {
        return Err(SceneError::TimeOutOfRange {
            t,
            duration: p.duration,
        });
    }
    let splats = p
        .primitives
        .iter()
        .filter_map(|prim| {
            let cond = ConditionedGaussian3 {
                mean: prim.position(t),
                cov: prim.covariance(),
                temporal_weight: 1.0,
            };
            project_conditioned(&cond, prim.color, prim.opacity, cam)
        })
        .collect();
    Ok(render_splats(splats, cam, p.background, t))
}

/// Circular rig looking at the origin plus held-out viewpoints between training cameras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigSpec {
    pub cameras: usize,
    pub radius: f64,
    /// Elevation of every camera above the horizontal plane, degrees.
    pub elevation_deg: f64,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    /// Azimuths of held-out cameras in degrees; they get ids after the training cameras.
    pub heldout_azimuths_deg: Vec<f64>,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            cameras: 8,
            radius: 4.0,
            elevation_deg: 10.0,
            focal: 70.0,
            width: 64,
            height: 64,
            heldout_azimuths_deg: vec![22.5],
        }
    }
}

impl RigSpec {
    fn camera_at(&self, id: CameraId, azimuth_deg: f64) -> CameraModel {
        let az = azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        let eye = Vector3::new(az.cos() * el.cos(), el.sin(), az.sin() * el.cos()) * self.radius;
        CameraModel::look_at(
            id,
            eye,
            Vector3::zeros(),
            Vector3::y(),
            self.focal,
            self.width,
            self.height,
        )
    }

    /// Training cameras first (ids `0..cameras`, evenly spaced azimuths), then held-out ones.
    pub fn build(&self) -> Vec<CameraModel> {
        let mut rig: Vec<CameraModel> = (0..self.cameras)
            .map(|v| self.camera_at(v as CameraId, 360.0 * v as f64 / self.cameras as f64))
            .collect();
        for (k, az) in self.heldout_azimuths_deg.iter().enumerate() {
            rig.push(self.camera_at((self.cameras + k) as CameraId, *az));
        }
        rig
    }

    pub fn heldout_ids(&self) -> Vec<CameraId> {
        (0..self.heldout_azimuths_deg.len())
            .map(|k| (self.cameras + k) as CameraId)
            .collect()
    }
}

/// One captured image and where it sits in the schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct CapturedFrame {
    pub camera_id: CameraId,
    pub frame_index: usize,
    pub time: Seconds,
    pub image: RenderedFrame,
}

/// Training captures plus held-out views rendered on the evaluation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scene_id: String,
    /// Every rig camera, training and held out.
    pub cameras: Vec<CameraModel>,
    /// Schedule of the training cameras only.
    pub schedule: CaptureSchedule,
    /// In `schedule.samples()` order.
    pub frames: Vec<CapturedFrame>,
    pub heldout_ids: Vec<CameraId>,
    /// Held-out evaluation times (the union grid of the capture that produced the data).
    pub eval_times: Vec<Seconds>,
    /// Held-out camera-major, then `eval_times` order.
    pub heldout: Vec<CapturedFrame>,
    /// Synchronous frame interval used to label evaluation times on-grid or intermediate.
    pub sync_interval: Seconds,
    pub background: Rgb,
    pub duration: f64,
    /// Ground-truth program when the data is synthetic.
    pub scene: Option<SceneProgram>,
}

impl Dataset {
    pub fn camera(&self, id: CameraId) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn training_ids(&self) -> Vec<CameraId> {
        self.schedule.camera_ids()
    }

    pub fn training_cameras(&self) -> Vec<&CameraModel> {
        self.training_ids()
            .into_iter()
            .filter_map(|id| self.camera(id))
            .collect()
    }

    /// Whether `t` falls on the synchronous grid `j·τ`, i.e. would be seen under synchronous capture.
    pub fn is_on_grid(&self, t: Seconds) -> bool {
        (t / self.sync_interval).is_integer()
    }

    /// Training frames of one camera in time order.
    pub fn camera_frames(&self, id: CameraId) -> Vec<&CapturedFrame> {
        self.frames.iter().filter(|f| f.camera_id == id).collect()
    }

    pub fn eval_times_f64(&self) -> Vec<f64> {
        self.eval_times.iter().map(|t| seconds_to_f64(*t)).collect()
    }

    /// Copy with the given training cameras removed (held-out views unchanged).
    pub fn without_training_cameras(&self, excluded: &[CameraId]) -> Dataset {
        let mut d = self.clone();
        d.schedule = self.schedule.without_cameras(excluded);
        d.frames.retain(|f| !excluded.contains(&f.camera_id));
        d
    }
}

/// Renders every scheduled training frame and every held-out view on the union grid.
///
/// Cameras listed in `heldout_ids` are dropped from the schedule. Frames are
/// quantized to 16 bits so that saved datasets reload bit-exactly.
pub fn build_dataset(
    p: &SceneProgram,
    rig: &[CameraModel],
    s: &CaptureSchedule,
    heldout_ids: &[CameraId],
) -> Result<Dataset, SceneError> {
    p.validate()?;
    for id in heldout_ids.iter().chain(s.camera_ids().iter()) {
        let cam = rig.iter().find(|c| c.id == *id).ok_or(SceneError::UnknownCamera(*id))?;
        cam.validate()?;
    }
    let schedule = s.without_cameras(heldout_ids);
    if schedule.tracks().is_empty() {
        return Err(SceneError::EmptyTrainingSet);
    }
    let cam = |id: CameraId| rig.iter().find(|c| c.id == id).expect("checked above");
    let render = |id: CameraId, j: usize, t: Seconds| -> Result<CapturedFrame, SceneError> {
        let mut image = render_ground_truth(p, cam(id), seconds_to_f64(t))?;
        image.quantize16();
        image.alpha = None;
        Ok(CapturedFrame {
            camera_id: id,
            frame_index: j,
            time: t,
            image,
        })
    };
    let frames = schedule
        .samples()
        .into_par_iter()
        .map(|(id, j, t)| render(id, j, t))
        .collect::<Result<Vec<_>, _>>()?;
    let eval_times = schedule.union_timestamps();
    let jobs: Vec<(CameraId, usize, Seconds)> = heldout_ids
        .iter()
        .flat_map(|&id| eval_times.iter().enumerate().map(move |(j, &t)| (id, j, t)))
        .collect();
    let heldout = jobs
        .into_par_iter()
        .map(|(id, j, t)| render(id, j, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        scene_id: "synthetic".into(),
        cameras: rig.to_vec(),
        sync_interval: schedule.base_interval(),
        schedule,
        frames,
        heldout_ids: heldout_ids.to_vec(),
        eval_times,
        heldout,
        background: p.background,
        duration: p.duration,
        scene: Some(p.clone()),
    })
}

/// Keeps every `factor`-th frame.
///
/// Synchronous mode keeps frames `0, factor, 2·factor, …` of every camera.
/// Asynchronous mode gives training camera `v` (in schedule order) the phase
/// `v mod factor`, which reproduces a staggered schedule with `K = factor`.
/// Held-out frames and the evaluation grid are left untouched, so the result
/// is always evaluated on the source's full-rate grid.
pub fn subsample_temporal(d: &Dataset, factor: usize, async_pattern: bool) -> Result<Dataset, SceneError> {
    if factor == 0 {
        return Err(SceneError::ZeroFactor);
    }
    if factor == 1 {
        return Ok(d.clone());
    }
    let src = &d.schedule;
    if async_pattern && src.group_count() != 1 {
        return Err(SceneError::AlreadyAsynchronous);
    }
    let tau = src.base_interval();
    let mut tracks = Vec::new();
    let mut keep: Vec<(CameraId, usize, usize)> = Vec::new();
    for (v, tr) in src.tracks().iter().enumerate() {
        let phase = if async_pattern { v % factor } else { 0 };
        if phase >= tr.frame_count {
            return Err(SceneError::EmptySubsample(tr.camera_id));
        }
        let count = (tr.frame_count - phase).div_ceil(factor);
        for k in 0..count {
            keep.push((tr.camera_id, phase + k * factor, k));
        }
        tracks.push(CameraTrack {
            camera_id: tr.camera_id,
            group: if async_pattern { phase } else { tr.group },
            offset: tr.offset + tau * phase as i64,
            frame_count: count,
        });
    }
    let groups = if async_pattern {
        factor.min(tracks.len())
    } else {
        src.group_count()
    };
    let schedule = CaptureSchedule::from_tracks(groups, tau * factor as i64, tracks)?;
    let frames = keep
        .into_iter()
        .map(|(id, old, new)| {
            let f = d
                .frames
                .iter()
                .find(|f| f.camera_id == id && f.frame_index == old)
                .expect("schedule and frames agree");
            CapturedFrame {
                frame_index: new,
                ..f.clone()
            }
        })
        .collect();
    Ok(Dataset {
        sync_interval: if async_pattern {
            tau * factor as i64
        } else {
            d.sync_interval * factor as i64
        },
        schedule,
        frames,
        ..d.clone()
    })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    scene_id: String,
    duration: f64,
    background: Rgb,
    /// `[numerator, denominator]` seconds.
    sync_interval: [i64; 2],
    cameras: Vec<CameraModel>,
    heldout_ids: Vec<CameraId>,
    schedule: CaptureSchedule,
    eval_times: Vec<[i64; 2]>,
    frames: Vec<FrameEntry>,
    scene_file: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct FrameEntry {
    split: String,
    camera_id: CameraId,
    frame_index: usize,
    timestamp_num: i64,
    timestamp_den: i64,
    timestamp_s: f64,
    path: String,
}

fn ratio_pair(t: Seconds) -> [i64; 2] {
    [*t.numer(), *t.denom()]
}

/// Writes `manifest.json`, `schedule.csv`, `scene.json` and one 16-bit PNG per frame.
pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<(), SceneError> {
    for sub in ["train", "heldout"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| io_err(dir, e))?;
    }
    let mut entries = Vec::new();
    for (split, list) in [("train", &d.frames), ("heldout", &d.heldout)] {
        for f in list {
            let rel = format!("{split}/cam{:03}_f{:05}.png", f.camera_id, f.frame_index);
            write_png16(&f.image, &dir.join(&rel))?;
            entries.push(FrameEntry {
                split: split.into(),
                camera_id: f.camera_id,
                frame_index: f.frame_index,
                timestamp_num: *f.time.numer(),
                timestamp_den: *f.time.denom(),
                timestamp_s: seconds_to_f64(f.time),
                path: rel,
            });
        }
    }
    let scene_file = match &d.scene {
        Some(p) => {
            let path = dir.join("scene.json");
            let text = serde_json::to_string_pretty(p).map_err(|e| io_err(&path, e))?;
            fs::write(&path, text).map_err(|e| io_err(&path, e))?;
            Some("scene.json".to_string())
        }
        None => None,
    };
    let sched_path = dir.join("schedule.csv");
    let file = fs::File::create(&sched_path).map_err(|e| io_err(&sched_path, e))?;
    d.schedule.write_csv(file)?;
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        scene_id: d.scene_id.clone(),
        duration: d.duration,
        background: d.background,
        sync_interval: ratio_pair(d.sync_interval),
        cameras: d.cameras.clone(),
        heldout_ids: d.heldout_ids.clone(),
        schedule: d.schedule.clone(),
        eval_times: d.eval_times.iter().map(|t| ratio_pair(*t)).collect(),
        frames: entries,
        scene_file,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SceneError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(io_err(
            &path,
            format!("unsupported format version {}", m.format_version),
        ));
    }
    let scene = match &m.scene_file {
        Some(name) => {
            let p = dir.join(name);
            let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            Some(serde_json::from_str(&text).map_err(|e| io_err(&p, e))?)
        }
        None => None,
    };
    let mut frames = Vec::new();
    let mut heldout = Vec::new();
    for e in &m.frames {
        let time = Seconds::new(e.timestamp_num, e.timestamp_den);
        let image = read_png16(&dir.join(&e.path), seconds_to_f64(time), e.camera_id)?;
        let f = CapturedFrame {
            camera_id: e.camera_id,
            frame_index: e.frame_index,
            time,
            image,
        };
        match e.split.as_str() {
            "train" => frames.push(f),
            "heldout" => heldout.push(f),
            other => return Err(io_err(&path, format!("unknown split {other}"))),
        }
    }
    Ok(Dataset {
        scene_id: m.scene_id,
        cameras: m.cameras,
        schedule: m.schedule,
        frames,
        heldout_ids: m.heldout_ids,
        eval_times: m.eval_times.iter().map(|r| Seconds::new(r[0], r[1])).collect(),
        heldout,
        sync_interval: Seconds::new(m.sync_interval[0], m.sync_interval[1]),
        background: m.background,
        duration: m.duration,
        scene,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::make_schedule;

    fn small_rig() -> Vec<CameraModel> {
        RigSpec {
            width: 24,
            height: 24,
            focal: 26.0,
            ..RigSpec::default()
        }
        .build()
    }

    #[test]
    fn empty_scene_renders_background() {
        let p = SceneProgram {
            primitives: vec![],
            duration: 1.0,
            background: [0.2, 0.3, 0.4],
        };
        let f = render_ground_truth(&p, &small_rig()[0], 0.5).unwrap();
        assert!(f.pixels.chunks(3).all(|c| c == [0.2, 0.3, 0.4]));
        assert!(render_ground_truth(&p, &small_rig()[0], 1.5).is_err());
    }

    #[test]
    fn counts_follow_the_schedule() {
        let p = SceneProgram::fast_motion(&FastSceneSpec {
            static_count: 10,
            fast_count: 2,
            ..FastSceneSpec::default()
        });
        let rig = small_rig();
        let s = make_schedule(8, 4, Seconds::new(1, 25), 25).unwrap();
        let d = build_dataset(&p, &rig, &s, &[8]).unwrap();
        assert_eq!(d.frames.len(), 200);
        assert_eq!(d.heldout.len(), 100);
        let all: Vec<CameraId> = (0..9).collect();
        assert!(matches!(
            build_dataset(&p, &rig, &s, &all),
            Err(SceneError::EmptyTrainingSet)
        ));
    }
}
