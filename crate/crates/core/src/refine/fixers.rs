//! Reference refiners.

use crate::capture::CameraModel;
use crate::frame::VideoClip;
use crate::scene::{render_ground_truth, SceneProgram};

use super::{ArtifactFixer, LatencyClass, RefineError};

/// Returns its input.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFixer;

impl ArtifactFixer for IdentityFixer {
    fn name(&self) -> &str {
        "identity"
    }

    fn latency_class(&self) -> LatencyClass {
        LatencyClass::PerFrame
    }

    fn fix(&self, clip: &VideoClip) -> Result<VideoClip, RefineError> {
        Ok(clip.clone())
    }
}

/// Per-pixel median over a centered temporal window, truncated at the clip ends.
#[derive(Clone, Copy, Debug)]
pub struct TemporalMedianFixer {
    pub window: usize,
}

impl Default for TemporalMedianFixer {
    fn default() -> Self {
        Self { window: 3 }
    }
}

impl ArtifactFixer for TemporalMedianFixer {
    fn name(&self) -> &str {
        "temporal_median"
    }

    fn latency_class(&self) -> LatencyClass {
        LatencyClass::WholeClip
    }

    fn fix(&self, clip: &VideoClip) -> Result<VideoClip, RefineError> {
        let half = self.window / 2;
        let n = clip.len();
        let mut out = clip.clone();
        let mut vals = Vec::with_capacity(self.window);
        for (i, frame) in out.frames.iter_mut().enumerate() {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            for (k, p) in frame.pixels.iter_mut().enumerate() {
                vals.clear();
                vals.extend((lo..=hi).map(|j| clip.frames[j].pixels[k]));
                vals.sort_by(f64::total_cmp);
                let m = vals.len();
                *p = if m % 2 == 1 {
                    vals[m / 2]
                } else {
                    0.5 * (vals[m / 2 - 1] + vals[m / 2])
                };
            }
        }
        Ok(out)
    }
}

/// Normalized Gaussian blur along time with standard deviation `sigma` frames.
#[derive(Clone, Copy, Debug)]
pub struct TemporalGaussianFixer {
    pub sigma: f64,
}

impl Default for TemporalGaussianFixer {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

impl ArtifactFixer for TemporalGaussianFixer {
    fn name(&self) -> &str {
        "temporal_gaussian"
    }

    fn latency_class(&self) -> LatencyClass {
        LatencyClass::WholeClip
    }

    fn fix(&self, clip: &VideoClip) -> Result<VideoClip, RefineError> {
        if !(self.sigma > 0.0) {
            return Ok(clip.clone());
        }
        let radius = (3.0 * self.sigma).ceil() as isize;
        let n = clip.len() as isize;
        let mut out = clip.clone();
        for (i, frame) in out.frames.iter_mut().enumerate() {
            let taps: Vec<(usize, f64)> = (-radius..=radius)
                .filter_map(|o| {
                    let j = i as isize + o;
                    (0..n)
                        .contains(&j)
                        .then(|| (j as usize, (-(o * o) as f64 / (2.0 * self.sigma * self.sigma)).exp()))
                })
                .collect();
            let norm: f64 = taps.iter().map(|(_, w)| w).sum();
            for (k, p) in frame.pixels.iter_mut().enumerate() {
                *p = taps.iter().map(|(j, w)| w * clip.frames[*j].pixels[k]).sum::<f64>() / norm;
            }
        }
        Ok(out)
    }
}

/// Ignores its input and renders the ground truth at the clip's camera and times.
///
/// Only meaningful for synthetic data; used as an upper bound on refinement.
#[derive(Clone, Debug)]
pub struct OracleFixer {
    pub scene: SceneProgram,
    pub cameras: Vec<CameraModel>,
}

impl ArtifactFixer for OracleFixer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn latency_class(&self) -> LatencyClass {
        LatencyClass::PerFrame
    }

    fn fix(&self, clip: &VideoClip) -> Result<VideoClip, RefineError> {
        let cam = self
            .cameras
            .iter()
            .find(|c| c.id == clip.camera_id)
            .ok_or(RefineError::UnknownCamera(clip.camera_id))?;
        let frames = clip
            .frames
            .iter()
            .map(|f| {
                let mut g = render_ground_truth(&self.scene, cam, f.timestamp).map_err(|e| RefineError::Contract {
                    name: "oracle".into(),
                    reason: e.to_string(),
                })?;
                g.quantize16();
                g.alpha = None;
                g.timestamp = f.timestamp;
                Ok(g)
            })
            .collect::<Result<Vec<_>, RefineError>>()?;
        Ok(VideoClip {
            camera_id: clip.camera_id,
            frames,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::RenderedFrame;

    fn clip(values: &[f64]) -> VideoClip {
        let frames = values
            .iter()
            .enumerate()
            .map(|(i, v)| RenderedFrame::filled(2, 2, [*v; 3], i as f64 * 0.1, 0))
            .collect();
        VideoClip::new(0, frames).unwrap()
    }

    #[test]
    fn median_removes_a_single_impulse() {
        let c = clip(&[0.2, 0.2, 1.0, 0.2, 0.2]);
        let out = TemporalMedianFixer::default().fix(&c).unwrap();
        assert!(out.frames.iter().all(|f| f.pixels.iter().all(|p| *p == 0.2)));
    }

    #[test]
    fn gaussian_preserves_constants() {
        let c = clip(&[0.4; 6]);
        let out = TemporalGaussianFixer::default().fix(&c).unwrap();
        for f in &out.frames {
            assert!(f.pixels.iter().all(|p| (p - 0.4).abs() < 1e-15));
        }
    }
}
