//! Camera rig model and synchronous / staggered capture schedules.
//!
//! Cameras are split into `K` phase groups round-robin in viewpoint order.
//! The camera in group `i` (0-based) captures frame `j` at
//! `t = i·(τ/K) + j·τ`. `K = 1` is ordinary synchronized capture. Every camera
//! still runs at `1/τ`; the union of all timestamps is a grid of spacing `τ/K`.
//!
//! Timestamps are exact rationals; they are converted to `f64` only when a
//! frame is rendered.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact time in seconds.
pub type Seconds = Ratio<i64>;

pub type CameraId = u32;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("group count {groups} must be in 1..={cameras}")]
    InvalidGrouping { groups: usize, cameras: usize },
    #[error("base interval must be positive")]
    NonPositiveInterval,
    #[error("a schedule needs at least one frame per camera")]
    NoFrames,
    #[error("invalid camera {id}: {reason}")]
    InvalidCamera { id: CameraId, reason: String },
    #[error("malformed schedule file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn seconds_to_f64(t: Seconds) -> f64 {
    t.to_f64().unwrap_or(f64::NAN)
}

/// Closest small rational to `t` (e.g. `0.04` → `1/25`).
pub fn seconds_from_f64(t: f64) -> Option<Seconds> {
    Ratio::approximate_float(t)
}

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera space looks down `+z` with `x` right and `y` down; pixel centers sit
/// at half-integer coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub id: CameraId,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation: `x_cam = rotation · x_world + translation`.
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    /// Camera at `eye` looking at `target`, principal point at the image center.
    pub fn look_at(
        id: CameraId,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        world_up: Vector3<f64>,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&world_up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self {
            id,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation: -(rotation * eye),
            width,
            height,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let c = self.world_to_camera(p);
        (c.z > 0.0).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    pub fn validate(&self) -> Result<(), CaptureError> {
        let fail = |reason: &str| {
            Err(CaptureError::InvalidCamera {
                id: self.id,
                reason: reason.to_string(),
            })
        };
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return fail("focal lengths must be positive");
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return fail("principal point outside the image");
        }
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if !(orth < 1e-9) || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return fail("extrinsic rotation is not a proper rotation");
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return fail("non-finite translation");
        }
        Ok(())
    }
}

/// One camera's frames: timestamps `offset + j·τ` for `j < frame_count`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraTrack {
    pub camera_id: CameraId,
    pub group: usize,
    pub offset: Seconds,
    pub frame_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureSchedule {
    group_count: usize,
    base_interval: Seconds,
    tracks: Vec<CameraTrack>,
}

/// Schedule for cameras `0..n_cameras`.
pub fn make_schedule(
    n_cameras: usize,
    group_count: usize,
    base_interval: Seconds,
    n_frames: usize,
) -> Result<CaptureSchedule, CaptureError> {
    let ids: Vec<CameraId> = (0..n_cameras as CameraId).collect();
    CaptureSchedule::for_cameras(&ids, group_count, base_interval, n_frames)
}

/// `K / τ`.
pub fn effective_fps(s: &CaptureSchedule) -> f64 {
    seconds_to_f64(s.effective_rate())
}

/// Cameras with a timestamp within `tol` seconds of `t`.
pub fn views_at_time(s: &CaptureSchedule, t: f64, tol: f64) -> Vec<CameraId> {
    s.tracks
        .iter()
        .filter(|tr| (0..tr.frame_count).any(|j| (seconds_to_f64(s.timestamp_of(tr, j)) - t).abs() <= tol))
        .map(|tr| tr.camera_id)
        .collect()
}

impl CaptureSchedule {
    /// Round-robin grouping over `ids` in the given (viewpoint) order.
    pub fn for_cameras(
        ids: &[CameraId],
        group_count: usize,
        base_interval: Seconds,
        n_frames: usize,
    ) -> Result<Self, CaptureError> {
        if group_count == 0 || group_count > ids.len() {
            return Err(CaptureError::InvalidGrouping {
                groups: group_count,
                cameras: ids.len(),
            });
        }
        if base_interval <= Seconds::zero() {
            return Err(CaptureError::NonPositiveInterval);
        }
        if n_frames == 0 {
            return Err(CaptureError::NoFrames);
        }
        let step = base_interval / group_count as i64;
        let tracks = ids
            .iter()
            .enumerate()
            .map(|(v, &camera_id)| {
                let group = v % group_count;
                CameraTrack {
                    camera_id,
                    group,
                    offset: step * group as i64,
                    frame_count: n_frames,
                }
            })
            .collect();
        Ok(Self {
            group_count,
            base_interval,
            tracks,
        })
    }

    /// Builds a schedule from explicit tracks (used by temporal sub-sampling and file loading).
    pub fn from_tracks(
        group_count: usize,
        base_interval: Seconds,
        tracks: Vec<CameraTrack>,
    ) -> Result<Self, CaptureError> {
        if base_interval <= Seconds::zero() {
            return Err(CaptureError::NonPositiveInterval);
        }
        if group_count == 0 || group_count > tracks.len().max(1) {
            return Err(CaptureError::InvalidGrouping {
                groups: group_count,
                cameras: tracks.len(),
            });
        }
        if tracks.iter().any(|t| t.frame_count == 0) {
            return Err(CaptureError::NoFrames);
        }
        Ok(Self {
            group_count,
            base_interval,
            tracks,
        })
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn base_interval(&self) -> Seconds {
        self.base_interval
    }

    pub fn tracks(&self) -> &[CameraTrack] {
        &self.tracks
    }

    pub fn track(&self, id: CameraId) -> Option<&CameraTrack> {
        self.tracks.iter().find(|t| t.camera_id == id)
    }

    pub fn camera_ids(&self) -> Vec<CameraId> {
        self.tracks.iter().map(|t| t.camera_id).collect()
    }

    pub fn timestamp_of(&self, track: &CameraTrack, frame: usize) -> Seconds {
        track.offset + self.base_interval * frame as i64
    }

    pub fn timestamps(&self, id: CameraId) -> Vec<Seconds> {
        self.track(id)
            .map(|tr| (0..tr.frame_count).map(|j| self.timestamp_of(tr, j)).collect())
            .unwrap_or_default()
    }

    /// All `(camera, frame index, timestamp)` triples in track order.
    pub fn samples(&self) -> Vec<(CameraId, usize, Seconds)> {
        self.tracks
            .iter()
            .flat_map(|tr| (0..tr.frame_count).map(move |j| (tr.camera_id, j, self.timestamp_of(tr, j))))
            .collect()
    }

    pub fn sample_count(&self) -> usize {
        self.tracks.iter().map(|t| t.frame_count).sum()
    }

    /// Sorted, deduplicated union of every camera's timestamps.
    pub fn union_timestamps(&self) -> Vec<Seconds> {
        let set: BTreeSet<Seconds> = self.samples().into_iter().map(|(_, _, t)| t).collect();
        set.into_iter().collect()
    }

    /// `K / τ` as an exact rational.
    pub fn effective_rate(&self) -> Seconds {
        Seconds::from_integer(self.group_count as i64) / self.base_interval
    }

    /// Smallest positive spacing in the union grid (`None` for a single instant).
    pub fn min_union_gap(&self) -> Option<Seconds> {
        let u = self.union_timestamps();
        u.windows(2).map(|w| w[1] - w[0]).min()
    }

    /// Cameras that capture exactly at `t`.
    pub fn views_at(&self, t: Seconds) -> Vec<CameraId> {
        self.tracks
            .iter()
            .filter(|tr| {
                let k = (t - tr.offset) / self.base_interval;
                k.is_integer() && k >= Seconds::zero() && (k.to_integer() as usize) < tr.frame_count
            })
            .map(|tr| tr.camera_id)
            .collect()
    }

    /// Whether `t` lies on the synchronous frame grid `j·τ`.
    pub fn on_sync_grid(&self, t: Seconds) -> bool {
        (t / self.base_interval).is_integer()
    }

    /// Schedule restricted to the given cameras (groups and offsets kept).
    pub fn without_cameras(&self, excluded: &[CameraId]) -> Self {
        Self {
            group_count: self.group_count,
            base_interval: self.base_interval,
            tracks: self
                .tracks
                .iter()
                .filter(|t| !excluded.contains(&t.camera_id))
                .cloned()
                .collect(),
        }
    }

    /// Writes the schedule as CSV, one row per captured frame.
    ///
    /// Columns, in order: `camera_id, group, frame_index, timestamp_num,
    /// timestamp_den, timestamp_s, group_count, interval_num, interval_den`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CaptureError> {
        let mut wtr = csv::Writer::from_writer(w);
        for tr in &self.tracks {
            for j in 0..tr.frame_count {
                let t = self.timestamp_of(tr, j);
                wtr.serialize(ScheduleRow {
                    camera_id: tr.camera_id,
                    group: tr.group,
                    frame_index: j,
                    timestamp_num: *t.numer(),
                    timestamp_den: *t.denom(),
                    timestamp_s: seconds_to_f64(t),
                    group_count: self.group_count,
                    interval_num: *self.base_interval.numer(),
                    interval_den: *self.base_interval.denom(),
                })?;
            }
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, CaptureError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut tracks: Vec<CameraTrack> = Vec::new();
        let mut meta: Option<(usize, Seconds)> = None;
        for row in rdr.deserialize::<ScheduleRow>() {
            let row = row?;
            if row.timestamp_den <= 0 || row.interval_den <= 0 {
                return Err(CaptureError::Malformed("non-positive denominator".into()));
            }
            let t = Seconds::new(row.timestamp_num, row.timestamp_den);
            let interval = Seconds::new(row.interval_num, row.interval_den);
            match meta {
                None => meta = Some((row.group_count, interval)),
                Some(m) if m != (row.group_count, interval) => {
                    return Err(CaptureError::Malformed("inconsistent group count or interval".into()))
                }
                _ => {}
            }
            match tracks.last_mut() {
                Some(tr) if tr.camera_id == row.camera_id => {
                    if row.frame_index != tr.frame_count || t != tr.offset + interval * tr.frame_count as i64 {
                        return Err(CaptureError::Malformed(format!(
                            "camera {} frame {} breaks the τ spacing",
                            row.camera_id, row.frame_index
                        )));
                    }
                    tr.frame_count += 1;
                }
                _ => {
                    if row.frame_index != 0 {
                        return Err(CaptureError::Malformed("track must start at frame 0".into()));
                    }
                    tracks.push(CameraTrack {
                        camera_id: row.camera_id,
                        group: row.group,
                        offset: t,
                        frame_count: 1,
                    });
                }
            }
        }
        let (k, tau) = meta.ok_or_else(|| CaptureError::Malformed("empty schedule".into()))?;
        Self::from_tracks(k, tau, tracks)
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleRow {
    camera_id: CameraId,
    group: usize,
    frame_index: usize,
    timestamp_num: i64,
    timestamp_den: i64,
    timestamp_s: f64,
    group_count: usize,
    interval_num: i64,
    interval_den: i64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau() -> Seconds {
        Seconds::new(1, 25)
    }

    #[test]
    fn two_groups_stagger_by_half_interval() {
        let s = make_schedule(2, 2, tau(), 3).unwrap();
        assert_eq!(s.timestamps(1)[0], Seconds::new(1, 50));
        assert_eq!(seconds_to_f64(s.timestamps(1)[0]), 0.02);
        assert_eq!(effective_fps(&s), 50.0);
    }

    #[test]
    fn one_group_is_synchronous() {
        let s = make_schedule(8, 1, tau(), 5).unwrap();
        let first = s.timestamps(0);
        for id in 0..8 {
            assert_eq!(s.timestamps(id), first);
        }
        assert_eq!(first[3], tau() * 3);
        assert_eq!(effective_fps(&s), 25.0);
    }

    #[test]
    fn four_groups_give_a_100_fps_union_grid() {
        let s = make_schedule(8, 4, tau(), 25).unwrap();
        let u = s.union_timestamps();
        assert_eq!(u.len(), 100);
        for w in u.windows(2) {
            assert_eq!(w[1] - w[0], Seconds::new(1, 100));
        }
        assert_eq!(effective_fps(&s), 100.0);
        let s8 = make_schedule(8, 8, tau(), 25).unwrap();
        assert_eq!(effective_fps(&s8), 200.0);
    }

    #[test]
    fn grouping_errors() {
        assert!(matches!(
            make_schedule(3, 4, tau(), 1),
            Err(CaptureError::InvalidGrouping { .. })
        ));
        assert!(make_schedule(3, 0, tau(), 1).is_err());
        assert!(make_schedule(3, 1, Seconds::zero(), 1).is_err());
        assert!(make_schedule(3, 1, tau(), 0).is_err());
    }

    #[test]
    fn views_per_instant() {
        let s = make_schedule(8, 4, tau(), 25).unwrap();
        assert_eq!(views_at_time(&s, 0.03, 1e-9).len(), 2);
        assert!(views_at_time(&s, 0.035, 0.0).is_empty());
        let sync = make_schedule(8, 1, tau(), 25).unwrap();
        assert_eq!(views_at_time(&sync, 0.4, 1e-9).len(), 8);
        assert_eq!(s.views_at(Seconds::new(3, 100)), vec![3, 7]);
    }

    #[test]
    fn csv_roundtrip() {
        let s = make_schedule(5, 2, Seconds::new(1, 30), 4).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("camera_id,group,frame_index,timestamp_num,timestamp_den,timestamp_s"));
        let back = CaptureSchedule::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn look_at_camera_is_valid_and_centers_target() {
        let cam = CameraModel::look_at(
            0,
            Vector3::new(4.0, 0.5, 0.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            70.0,
            64,
            64,
        );
        cam.validate().unwrap();
        let (u, v) = cam.project(&Vector3::zeros()).unwrap();
        assert!((u - 32.0).abs() < 1e-12 && (v - 32.0).abs() < 1e-12);
        assert!((cam.center() - Vector3::new(4.0, 0.5, 0.0)).norm() < 1e-12);
        // world up projects upward in the image
        let (_, v_up) = cam.project(&Vector3::new(0.0, 0.5, 0.0)).unwrap();
        assert!(v_up < 32.0);
    }
}
