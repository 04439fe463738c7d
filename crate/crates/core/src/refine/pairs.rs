//! Noisy/clean clip pairs for training a learned refiner.
//!
//! Sub-sample pairs fit a model to an asynchronously sub-sampled copy of a
//! full-rate dataset and render it back at the full frame rate; leave-one-out
//! pairs fit without one training camera and render that camera.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{seconds_to_f64, CameraId};
use crate::frame::{FrameError, VideoClip};
use crate::optimize::{stage1_fit, OptimConfig, OptimError, TrainState};
use crate::scene::{subsample_temporal, Dataset, SceneError};

use super::{read_clip, write_clip, RefineError};

pub const PAIR_MANIFEST: &str = "pairs.csv";

#[derive(Debug, Error)]
pub enum PairError {
    #[error("leave-one-out needs at least 3 training cameras, got {0}")]
    TooFewCameras(usize),
    #[error("fold for camera {0} read that camera's frames")]
    LeakedCamera(CameraId),
    #[error("pair manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMethod {
    Subsample,
    LeaveOneOut,
}

impl PairMethod {
    pub fn tag(self) -> &'static str {
        match self {
            PairMethod::Subsample => "subsample",
            PairMethod::LeaveOneOut => "leave-one-out",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub scene_id: String,
    pub method: PairMethod,
    pub camera_id: CameraId,
    /// Relative to the manifest directory.
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub width: u32,
    pub height: u32,
    pub timestamps: Vec<f64>,
    /// Cameras whose frames the noisy model was fitted to.
    pub fit_cameras: Vec<CameraId>,
}

impl TrainingPair {
    pub fn load(&self, root: &Path) -> Result<(VideoClip, VideoClip), RefineError> {
        Ok((read_clip(&root.join(&self.noisy))?, read_clip(&root.join(&self.clean))?))
    }
}

fn captured_clip(d: &Dataset, id: CameraId) -> Result<VideoClip, PairError> {
    let frames = d.camera_frames(id).into_iter().map(|f| f.image.clone()).collect();
    Ok(VideoClip::new(id, frames)?)
}

fn make_pair(
    out_dir: &Path,
    d: &Dataset,
    method: PairMethod,
    noisy: &VideoClip,
    clean: &VideoClip,
    state: &TrainState,
) -> Result<TrainingPair, PairError> {
    let base = PathBuf::from(method.tag()).join(format!("cam{:03}", clean.camera_id));
    let noisy_rel = base.join("noisy");
    let clean_rel = base.join("clean");
    write_clip(noisy, &out_dir.join(&noisy_rel))?;
    write_clip(clean, &out_dir.join(&clean_rel))?;
    let (width, height, _) = clean.shape();
    Ok(TrainingPair {
        scene_id: d.scene_id.clone(),
        method,
        camera_id: clean.camera_id,
        noisy: noisy_rel,
        clean: clean_rel,
        width,
        height,
        timestamps: clean.timestamps(),
        fit_cameras: state.accessed_cameras.iter().copied().collect(),
    })
}

/// Fits to an asynchronous `factor`× sub-sample of `d` and pairs full-rate renders
/// of every training camera with that camera's full-rate captured clip.
pub fn build_subsample_pairs(
    d: &Dataset,
    factor: usize,
    cfg: &OptimConfig,
    out_dir: &Path,
) -> Result<Vec<TrainingPair>, PairError> {
    let sub = subsample_temporal(d, factor, true)?;
    let state = stage1_fit(&sub, cfg)?;
    let pairs = d
        .training_ids()
        .par_iter()
        .map(|&id| {
            let clean = captured_clip(d, id)?;
            let cam = d.camera(id).ok_or(SceneError::UnknownCamera(id))?;
            let noisy = state.render_video(cam, &clean.timestamps()).map_err(OptimError::from)?;
            make_pair(out_dir, d, PairMethod::Subsample, &noisy, &clean, &state)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_pair_manifest(&pairs, &out_dir.join(PAIR_MANIFEST))?;
    Ok(pairs)
}

/// One fold per training camera: fit without it, render it, pair with its captured clip.
pub fn build_leave_one_out_pairs(
    d: &Dataset,
    cfg: &OptimConfig,
    out_dir: &Path,
) -> Result<Vec<TrainingPair>, PairError> {
    let ids = d.training_ids();
    if ids.len() < 3 {
        return Err(PairError::TooFewCameras(ids.len()));
    }
    let pairs = ids
        .par_iter()
        .map(|&id| {
            let fold = d.without_training_cameras(&[id]);
            let state = stage1_fit(&fold, cfg)?;
            if state.accessed_cameras.contains(&id) {
                return Err(PairError::LeakedCamera(id));
            }
            let clean = captured_clip(d, id)?;
            let cam = d.camera(id).ok_or(SceneError::UnknownCamera(id))?;
            let times: Vec<f64> = d.schedule.timestamps(id).into_iter().map(seconds_to_f64).collect();
            let noisy = state.render_video(cam, &times).map_err(OptimError::from)?;
            make_pair(out_dir, d, PairMethod::LeaveOneOut, &noisy, &clean, &state)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_pair_manifest(&pairs, &out_dir.join(PAIR_MANIFEST))?;
    Ok(pairs)
}

#[derive(Serialize, Deserialize)]
struct PairRow {
    scene_id: String,
    method: String,
    camera_id: CameraId,
    noisy_path: String,
    clean_path: String,
    width: u32,
    height: u32,
    frames: usize,
    /// Seconds, `;`-separated.
    timestamps: String,
    /// `;`-separated camera ids.
    fit_cameras: String,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// CSV columns: `scene_id, method, camera_id, noisy_path, clean_path, width,
/// height, frames, timestamps, fit_cameras`.
pub fn write_pair_manifest(pairs: &[TrainingPair], path: &Path) -> Result<(), PairError> {
    let err = |e: &dyn std::fmt::Display| PairError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| err(&e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| err(&e))?;
    for p in pairs {
        w.serialize(PairRow {
            scene_id: p.scene_id.clone(),
            method: p.method.tag().to_string(),
            camera_id: p.camera_id,
            noisy_path: p.noisy.to_string_lossy().into_owned(),
            clean_path: p.clean.to_string_lossy().into_owned(),
            width: p.width,
            height: p.height,
            frames: p.timestamps.len(),
            timestamps: join(&p.timestamps),
            fit_cameras: join(&p.fit_cameras),
        })
        .map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))
}

pub fn read_pair_manifest(path: &Path) -> Result<Vec<TrainingPair>, PairError> {
    let err = |reason: String| PairError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for row in r.deserialize::<PairRow>() {
        let row = row.map_err(|e| err(e.to_string()))?;
        let method = match row.method.as_str() {
            "subsample" => PairMethod::Subsample,
            "leave-one-out" => PairMethod::LeaveOneOut,
            other => return Err(err(format!("unknown method {other}"))),
        };
        let split = |s: &str| -> Vec<String> { s.split(';').filter(|x| !x.is_empty()).map(String::from).collect() };
        let timestamps = split(&row.timestamps)
            .iter()
            .map(|x| x.parse::<f64>().map_err(|e| err(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if timestamps.len() != row.frames {
            return Err(err(format!(
                "row for camera {} lists {} timestamps for {} frames",
                row.camera_id,
                timestamps.len(),
                row.frames
            )));
        }
        let fit_cameras = split(&row.fit_cameras)
            .iter()
            .map(|x| x.parse::<CameraId>().map_err(|e| err(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(TrainingPair {
            scene_id: row.scene_id,
            method,
            camera_id: row.camera_id,
            noisy: PathBuf::from(row.noisy_path),
            clean: PathBuf::from(row.clean_path),
            width: row.width,
            height: row.height,
            timestamps,
            fit_cameras,
        });
    }
    Ok(out)
}
