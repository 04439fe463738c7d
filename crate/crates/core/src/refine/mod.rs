//! Video refiners that clean up rendered clips, and the noisy/clean training
//! pairs a learned refiner would be trained on.
//!
//! A refiner maps a clip to a clip of identical shape, camera and timestamps.
//! [`refine`] enforces that contract and clamps the output to `[0, 1]`.

mod external;
mod fixers;
mod pairs;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::CameraId;
use crate::frame::{read_png16, write_png16, FrameError, VideoClip};

pub use external::ExternalProcessFixer;
pub use fixers::{IdentityFixer, OracleFixer, TemporalGaussianFixer, TemporalMedianFixer};
pub use pairs::{
    build_leave_one_out_pairs, build_subsample_pairs, read_pair_manifest, write_pair_manifest, PairError, PairMethod,
    TrainingPair, PAIR_MANIFEST,
};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("refiner {name} broke the clip contract: {reason}")]
    Contract { name: String, reason: String },
    #[error("cannot refine an empty clip")]
    EmptyClip,
    #[error("oracle has no camera {0}")]
    UnknownCamera(CameraId),
    #[error("external refiner failed: {0}")]
    External(String),
    #[error("clip io at {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Whether a refiner looks at frames independently or at the whole clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyClass {
    PerFrame,
    WholeClip,
}

/// A video-to-video artifact fixer.
pub trait ArtifactFixer: Send + Sync {
    fn name(&self) -> &str;
    fn latency_class(&self) -> LatencyClass;
    fn fix(&self, clip: &VideoClip) -> Result<VideoClip, RefineError>;
}

/// Runs `f` on `v` and checks the output keeps shape, camera and timestamps.
pub fn refine(f: &dyn ArtifactFixer, v: &VideoClip) -> Result<VideoClip, RefineError> {
    if v.is_empty() {
        return Err(RefineError::EmptyClip);
    }
    let mut out = f.fix(v)?;
    let broken = |reason: &str| RefineError::Contract {
        name: f.name().to_string(),
        reason: reason.to_string(),
    };
    if out.camera_id != v.camera_id {
        return Err(broken("camera id changed"));
    }
    if !out.same_layout(v) {
        return Err(broken("shape or timestamps changed"));
    }
    if out
        .frames
        .iter()
        .zip(&v.frames)
        .any(|(a, b)| a.pixels.len() != b.pixels.len() || a.camera_id != b.camera_id)
    {
        return Err(broken("frame buffers changed size"));
    }
    if !out.frames.iter().all(|fr| fr.is_finite()) {
        return Err(broken("non-finite pixels"));
    }
    for fr in &mut out.frames {
        fr.pixels.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Metadata written next to a clip's frames as `clip.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub camera_id: CameraId,
    pub width: u32,
    pub height: u32,
    pub timestamps: Vec<f64>,
    /// Frame files relative to the clip directory, in time order.
    pub frames: Vec<String>,
}

pub const CLIP_MANIFEST: &str = "clip.json";

fn io_err(path: &Path, e: impl std::fmt::Display) -> RefineError {
    RefineError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Writes `frame_00000.png …` and `clip.json` into `dir`.
pub fn write_clip(clip: &VideoClip, dir: &Path) -> Result<(), RefineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let (width, height, _) = clip.shape();
    let mut names = Vec::with_capacity(clip.len());
    for (i, f) in clip.frames.iter().enumerate() {
        let name = format!("frame_{i:05}.png");
        write_png16(f, &dir.join(&name))?;
        names.push(name);
    }
    let m = ClipManifest {
        camera_id: clip.camera_id,
        width,
        height,
        timestamps: clip.timestamps(),
        frames: names,
    };
    let path = dir.join(CLIP_MANIFEST);
    let text = serde_json::to_string_pretty(&m).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn read_clip_manifest(dir: &Path) -> Result<ClipManifest, RefineError> {
    let path = dir.join(CLIP_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(&path, e))
}

pub fn read_clip(dir: &Path) -> Result<VideoClip, RefineError> {
    let m = read_clip_manifest(dir)?;
    read_clip_frames(dir, &m)
}

/// Loads the frames named in `m` from `dir`.
pub fn read_clip_frames(dir: &Path, m: &ClipManifest) -> Result<VideoClip, RefineError> {
    if m.frames.len() != m.timestamps.len() {
        return Err(io_err(dir, "frame and timestamp counts differ"));
    }
    let frames = m
        .frames
        .iter()
        .zip(&m.timestamps)
        .map(|(name, t)| read_png16(&dir.join(name), *t, m.camera_id))
        .collect::<Result<Vec<_>, _>>()?;
    if frames.iter().any(|f| f.width != m.width || f.height != m.height) {
        return Err(io_err(dir, "frame size differs from the manifest"));
    }
    Ok(VideoClip::new(m.camera_id, frames)?)
}
