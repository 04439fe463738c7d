//! CPU splatting rasterizer for time-conditioned 4D Gaussians.
//!
//! Each primitive is conditioned on the render time, projected with the
//! first-order (EWA) perspective Jacobian, depth sorted globally and alpha
//! composited front to back:
//!
//! ```text
//! C = Σ_i c_i a_i Π_{j<i} (1 − a_j) + T_final · background,   a_i = α_i · w_i · g(q_i)
//! ```
//!
//! where `w_i` is the temporal weight and `q_i` the screen-space Mahalanobis
//! distance at the pixel center. `g` is the Gaussian `exp(−q/2)` with a
//! C¹ taper to exactly zero at the 3σ footprint boundary (`q = 9`) so that
//! culling is exact while pixel values stay differentiable in the parameters.

mod backward;

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::capture::CameraModel;
use crate::frame::{RenderedFrame, VideoClip};
use crate::geometry::{self, color, ConditionedGaussian3, Gaussian4D, GeometryError, Rgb};

pub use backward::{render_forward, render_with_gradients, ForwardPass, GaussianGrad};

/// Temporal weight below which a primitive is culled.
pub const MIN_TEMPORAL_WEIGHT: f64 = 1.0 / 255.0;
/// Screen-covariance diagonal floor in px².
pub const LOW_PASS_FLOOR: f64 = 0.3;
pub const NEAR_PLANE: f64 = 0.01;
/// Footprint cutoff in screen standard deviations.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;
/// Blending stops once transmittance drops below this value.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

const CUTOFF_Q: f64 = FOOTPRINT_SIGMAS * FOOTPRINT_SIGMAS;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("gaussian {index} has non-finite parameters")]
    NonFinite { index: usize },
    #[error("gaussian {index}: {source}")]
    Geometry {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("adjoint has {got} values, image needs {expected}")]
    AdjointShape { expected: usize, got: usize },
    #[error("timestamps must be sorted")]
    UnsortedTimestamps,
}

/// Scene-level render inputs that are not per-primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub background: Rgb,
    /// Period of the temporal color basis (usually the scene duration).
    pub t_period: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            t_period: 1.0,
        }
    }
}

/// A primitive as seen by one camera at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatProjection {
    pub mean: Vector2<f64>,
    /// Screen covariance including the low-pass floor.
    pub cov: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub temporal_weight: f64,
    pub color: Rgb,
    pub opacity: f64,
    /// Footprint radius in pixels (3σ along the major axis).
    pub radius: f64,
}

impl SplatProjection {
    /// Inclusive pixel range `(x0, x1, y0, y1)` whose centers fall in the footprint box.
    fn pixel_bounds(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let x0 = (self.mean.x - self.radius - 0.5).ceil().max(0.0);
        let x1 = (self.mean.x + self.radius - 0.5).floor().min(width as f64 - 1.0);
        let y0 = (self.mean.y - self.radius - 0.5).ceil().max(0.0);
        let y1 = (self.mean.y + self.radius - 0.5).floor().min(height as f64 - 1.0);
        (x0 <= x1 && y0 <= y1).then_some((x0 as u32, x1 as u32, y0 as u32, y1 as u32))
    }
}

/// Footprint kernel `g(q)` and its derivative; `g(0) = 1`, `g = g' = 0` for `q ≥ 9`.
pub fn footprint_kernel(q: f64) -> (f64, f64) {
    if !(q < CUTOFF_Q) {
        return (0.0, 0.0);
    }
    let edge = (-0.5 * CUTOFF_Q).exp();
    let norm = 1.0 - edge * (1.0 + 0.5 * CUTOFF_Q);
    let e = (-0.5 * q).exp();
    let g = (e - edge * (1.0 + 0.5 * (CUTOFF_Q - q))) / norm;
    let dg = 0.5 * (edge - e) / norm;
    (g, dg)
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ProjectionCache {
    pub cond: ConditionedGaussian3,
    pub cam_point: Vector3<f64>,
    /// `J·W`, the world-to-screen Jacobian.
    pub jw: Matrix2x3<f64>,
    /// Conditioned mean minus camera center (unnormalized view direction).
    pub view: Vector3<f64>,
}

/// Projects a spatial Gaussian that already carries its color and temporal weight.
///
/// This is the path shared by reconstruction and the ground-truth renderer.
pub fn project_conditioned(
    cond: &ConditionedGaussian3,
    color: Rgb,
    opacity: f64,
    cam: &CameraModel,
) -> Option<SplatProjection> {
    project_conditioned_cached(cond, color, opacity, cam).map(|(p, _)| p)
}

fn project_conditioned_cached(
    cond: &ConditionedGaussian3,
    color: Rgb,
    opacity: f64,
    cam: &CameraModel,
) -> Option<(SplatProjection, ProjectionCache)> {
    if !(cond.temporal_weight >= MIN_TEMPORAL_WEIGHT) {
        return None;
    }
    let p = cam.world_to_camera(&cond.mean);
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let iz = 1.0 / p.z;
    let j = Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    );
    let jw = j * cam.rotation;
    let mut cov = jw * cond.cov * jw.transpose();
    cov = (cov + cov.transpose()) * 0.5;
    cov[(0, 0)] += LOW_PASS_FLOOR;
    cov[(1, 1)] += LOW_PASS_FLOOR;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let proj = SplatProjection {
        mean: Vector2::new(cam.fx * p.x * iz + cam.cx, cam.fy * p.y * iz + cam.cy),
        cov,
        conic,
        depth: p.z,
        temporal_weight: cond.temporal_weight,
        color,
        opacity,
        radius: FOOTPRINT_SIGMAS * lambda_max.sqrt(),
    };
    proj.pixel_bounds(cam.width, cam.height)?;
    let cache = ProjectionCache {
        cond: *cond,
        cam_point: p,
        jw,
        view: cond.mean - cam.center(),
    };
    Some((proj, cache))
}

fn check_finite(gaussians: &[Gaussian4D]) -> Result<(), RenderError> {
    match gaussians.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(RenderError::NonFinite { index }),
        None => Ok(()),
    }
}

fn project_cached(
    g: &Gaussian4D,
    index: usize,
    cam: &CameraModel,
    t: f64,
    settings: &RenderSettings,
) -> Result<Option<(SplatProjection, ProjectionCache)>, RenderError> {
    let cond = geometry::condition_at_time(g, t).map_err(|source| RenderError::Geometry { index, source })?;
    if !(cond.temporal_weight >= MIN_TEMPORAL_WEIGHT) {
        return Ok(None);
    }
    let view = cond.mean - cam.center();
    let norm = view.norm();
    let dir = if norm > 0.0 { view / norm } else { Vector3::z() };
    let rgb = color::eval_color(&g.color, &dir, t, settings.t_period);
    Ok(project_conditioned_cached(&cond, rgb, g.opacity(), cam))
}

/// Projects one primitive; `Ok(None)` means culled.
pub fn project_gaussian(
    g: &Gaussian4D,
    cam: &CameraModel,
    t: f64,
    settings: &RenderSettings,
) -> Result<Option<SplatProjection>, RenderError> {
    check_finite(std::slice::from_ref(g))?;
    Ok(project_cached(g, 0, cam, t, settings)?.map(|(p, _)| p))
}

/// Total order used for depth sorting; ties are broken on every rendered
/// attribute so that input order never matters.
fn splat_order(a: &SplatProjection, b: &SplatProjection) -> Ordering {
    let key = |s: &SplatProjection| {
        [
            s.depth,
            s.mean.x,
            s.mean.y,
            s.cov[(0, 0)],
            s.cov[(0, 1)],
            s.cov[(1, 1)],
            s.color[0],
            s.color[1],
            s.color[2],
            s.opacity,
            s.temporal_weight,
        ]
    };
    let (ka, kb) = (key(a), key(b));
    ka.iter()
        .zip(kb.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// One recorded blending step, kept for the backward pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    pub pixel: u32,
    pub splat: u32,
    pub alpha: f64,
    pub transmittance: f64,
    pub kernel: f64,
    pub kernel_slope: f64,
}

pub(crate) struct Composite {
    pub frame: RenderedFrame,
    pub contributions: Vec<Contribution>,
}

/// Front-to-back compositing of depth-sorted splats.
pub(crate) fn composite(
    splats: &[SplatProjection],
    cam: &CameraModel,
    background: Rgb,
    timestamp: f64,
    record: bool,
) -> Composite {
    let (w, h) = (cam.width, cam.height);
    let n = (w * h) as usize;
    let mut color = vec![0.0; 3 * n];
    let mut trans = vec![1.0; n];
    let mut contributions = Vec::new();
    for (si, s) in splats.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = s.pixel_bounds(w, h) else {
            continue;
        };
        let strength = s.opacity * s.temporal_weight;
        for y in y0..=y1 {
            let dy = y as f64 + 0.5 - s.mean.y;
            for x in x0..=x1 {
                let pix = (y * w + x) as usize;
                let t_before = trans[pix];
                if t_before < MIN_TRANSMITTANCE {
                    continue;
                }
                let dx = x as f64 + 0.5 - s.mean.x;
                let q = s.conic[(0, 0)] * dx * dx + 2.0 * s.conic[(0, 1)] * dx * dy + s.conic[(1, 1)] * dy * dy;
                let (k, dk) = footprint_kernel(q);
                if k <= 0.0 {
                    continue;
                }
                let a = strength * k;
                let wgt = a * t_before;
                for ch in 0..3 {
                    color[3 * pix + ch] += s.color[ch] * wgt;
                }
                trans[pix] = t_before * (1.0 - a);
                if record {
                    contributions.push(Contribution {
                        pixel: pix as u32,
                        splat: si as u32,
                        alpha: a,
                        transmittance: t_before,
                        kernel: k,
                        kernel_slope: dk,
                    });
                }
            }
        }
    }
    for pix in 0..n {
        for ch in 0..3 {
            color[3 * pix + ch] += trans[pix] * background[ch];
        }
    }
    Composite {
        frame: RenderedFrame {
            width: w,
            height: h,
            pixels: color,
            timestamp,
            camera_id: cam.id,
            alpha: Some(trans.iter().map(|t| 1.0 - t).collect()),
        },
        contributions,
    }
}

/// Sorts splats (with an attached payload) into compositing order.
pub(crate) fn sort_splats<T>(items: &mut [(SplatProjection, T)]) {
    items.sort_by(|a, b| splat_order(&a.0, &b.0));
}

/// Composites already-projected splats; shared with the ground-truth renderer.
pub fn render_splats(
    mut splats: Vec<SplatProjection>,
    cam: &CameraModel,
    background: Rgb,
    timestamp: f64,
) -> RenderedFrame {
    splats.sort_by(splat_order);
    composite(&splats, cam, background, timestamp, false).frame
}

pub(crate) struct Projected {
    pub splats: Vec<SplatProjection>,
    pub sources: Vec<usize>,
    pub caches: Vec<ProjectionCache>,
}

pub(crate) fn project_all(
    gaussians: &[Gaussian4D],
    cam: &CameraModel,
    t: f64,
    settings: &RenderSettings,
) -> Result<Projected, RenderError> {
    check_finite(gaussians)?;
    let mut items = Vec::new();
    for (i, g) in gaussians.iter().enumerate() {
        if let Some((p, cache)) = project_cached(g, i, cam, t, settings)? {
            items.push((p, (i, cache)));
        }
    }
    sort_splats(&mut items);
    let mut out = Projected {
        splats: Vec::with_capacity(items.len()),
        sources: Vec::with_capacity(items.len()),
        caches: Vec::with_capacity(items.len()),
    };
    for (p, (i, c)) in items {
        out.splats.push(p);
        out.sources.push(i);
        out.caches.push(c);
    }
    Ok(out)
}

/// Renders the primitives seen by `cam` at time `t`.
pub fn render(
    gaussians: &[Gaussian4D],
    cam: &CameraModel,
    t: f64,
    settings: &RenderSettings,
) -> Result<RenderedFrame, RenderError> {
    let projected = project_all(gaussians, cam, t, settings)?;
    Ok(composite(&projected.splats, cam, settings.background, t, false).frame)
}

/// One render per timestamp, in order.
pub fn render_video(
    gaussians: &[Gaussian4D],
    cam: &CameraModel,
    timestamps: &[f64],
    settings: &RenderSettings,
) -> Result<VideoClip, RenderError> {
    if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(RenderError::UnsortedTimestamps);
    }
    let frames = timestamps
        .iter()
        .map(|&t| render(gaussians, cam, t, settings))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VideoClip {
        camera_id: cam.id,
        frames,
    })
}

/// `J` for a camera-space point, exposed for tests of the projection Jacobian.
pub fn perspective_jacobian(cam: &CameraModel, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    )
}

/// Screen covariance of a world-space covariance at a world point, without the floor.
pub fn screen_covariance(cam: &CameraModel, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> Matrix2<f64> {
    let jw = perspective_jacobian(cam, &cam.world_to_camera(mean)) * cam.rotation;
    jw * cov * jw.transpose()
}

#[cfg(test)]
mod tests {
    use nalgebra::{Vector3, Vector4};

    use super::*;
    use crate::geometry::ColorCoeffs;

    fn camera(size: u32) -> CameraModel {
        CameraModel::look_at(
            0,
            Vector3::new(0.0, 0.0, -4.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            20.0,
            size,
            size,
        )
    }

    fn splat(mean: (f64, f64), depth: f64, a: f64, color: Rgb) -> SplatProjection {
        let cov = Matrix2::identity() * 4.0;
        SplatProjection {
            mean: Vector2::new(mean.0, mean.1),
            cov,
            conic: cov.try_inverse().unwrap(),
            depth,
            temporal_weight: 1.0,
            color,
            opacity: a,
            radius: 6.0,
        }
    }

    #[test]
    fn kernel_is_c1_at_the_cutoff() {
        let (g0, _) = footprint_kernel(0.0);
        assert!((g0 - 1.0).abs() < 1e-15);
        let (g, dg) = footprint_kernel(9.0 - 1e-9);
        assert!(g.abs() < 1e-10 && dg.abs() < 1e-9);
        assert_eq!(footprint_kernel(9.0), (0.0, 0.0));
        let (ga, _) = footprint_kernel(2.0);
        let (gb, _) = footprint_kernel(3.0);
        assert!(ga > gb);
    }

    #[test]
    fn empty_scene_renders_background() {
        let cam = camera(8);
        let settings = RenderSettings {
            background: [0.1, 0.2, 0.3],
            t_period: 1.0,
        };
        let f = render(&[], &cam, 0.0, &settings).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(f.pixel(x, y), [0.1, 0.2, 0.3]);
            }
        }
    }

    #[test]
    fn two_splat_blend() {
        let cam = camera(9);
        // pixel (4,4) has center (4.5, 4.5)
        let front = splat((4.5, 4.5), 1.0, 0.5, [1.0, 0.0, 0.0]);
        let back = splat((4.5, 4.5), 2.0, 0.5, [0.0, 1.0, 0.0]);
        let f = render_splats(vec![back, front], &cam, [0.0; 3], 0.0);
        assert_eq!(f.pixel(4, 4), [0.5, 0.25, 0.0]);
    }

    #[test]
    fn full_opacity_center_shows_splat_color() {
        let cam = camera(9);
        let s = splat((4.5, 4.5), 1.0, 1.0, [0.2, 0.4, 0.6]);
        let f = render_splats(vec![s], &cam, [1.0; 3], 0.0);
        assert_eq!(f.pixel(4, 4), [0.2, 0.4, 0.6]);
    }

    #[test]
    fn on_axis_gaussian_projects_to_principal_point() {
        let cam = camera(16);
        let g = Gaussian4D::axis_aligned(
            Vector4::new(0.0, 0.0, 0.0, 0.0),
            Vector4::new(0.1, 0.1, 0.1, 1.0),
            0.5,
            ColorCoeffs::constant([0.5; 3]),
        );
        let p = project_gaussian(&g, &cam, 0.0, &RenderSettings::default())
            .unwrap()
            .unwrap();
        assert!((p.mean - Vector2::new(cam.cx, cam.cy)).norm() < 1e-12);
        assert!((p.depth - 4.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = camera(16);
        let g = Gaussian4D::axis_aligned(
            Vector4::new(0.0, 0.0, -6.0, 0.0),
            Vector4::new(0.1, 0.1, 0.1, 1.0),
            0.5,
            ColorCoeffs::constant([0.5; 3]),
        );
        assert!(project_gaussian(&g, &cam, 0.0, &RenderSettings::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn temporally_distant_gaussian_is_culled() {
        let cam = camera(16);
        let g = Gaussian4D::axis_aligned(
            Vector4::new(0.0, 0.0, 0.0, 0.0),
            Vector4::new(0.3, 0.3, 0.3, 0.1),
            0.9,
            ColorCoeffs::constant([1.0; 3]),
        );
        let settings = RenderSettings::default();
        // weight exp(-0.5 (t/0.1)^2) < 1/255 for t > ~0.333
        assert!(project_gaussian(&g, &cam, 0.34, &settings).unwrap().is_none());
        assert!(project_gaussian(&g, &cam, 0.33, &settings).unwrap().is_some());
        let f = render(std::slice::from_ref(&g), &cam, 0.34, &settings).unwrap();
        assert!(f.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let cam = camera(8);
        let mut g = Gaussian4D::axis_aligned(
            Vector4::zeros(),
            Vector4::repeat(0.2),
            0.5,
            ColorCoeffs::constant([0.5; 3]),
        );
        let ok = g.clone();
        g.mean[1] = f64::NAN;
        let err = render(&[ok, g], &cam, 0.0, &RenderSettings::default()).unwrap_err();
        assert!(matches!(err, RenderError::NonFinite { index: 1 }));
    }
}
