//! Initial primitives inside the region every training camera can see.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::OptimError;
use crate::capture::CameraModel;
use crate::geometry::{ColorCoeffs, Gaussian4D};
use crate::raster::NEAR_PLANE;

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn size(&self) -> Vector3<f64> {
        self.max - self.min
    }

    /// Half the diagonal, used as the scene extent.
    pub fn extent(&self) -> f64 {
        0.5 * self.size().norm()
    }
}

/// Half-space `n·x ≤ d`.
#[derive(Clone, Copy, Debug)]
struct HalfSpace {
    n: Vector3<f64>,
    d: f64,
}

/// World-space half-spaces of one camera's frustum, capped at depth `far`.
fn frustum_planes(cam: &CameraModel, far: f64) -> Vec<HalfSpace> {
    let r = cam.rotation;
    let t = cam.translation;
    // camera-space constraints a·p ≤ b with p = R x + t  ⇒  (Rᵀa)·x ≤ b − a·t
    let x_lo = -cam.cx / cam.fx;
    let x_hi = (cam.width as f64 - cam.cx) / cam.fx;
    let y_lo = -cam.cy / cam.fy;
    let y_hi = (cam.height as f64 - cam.cy) / cam.fy;
    let cam_space = [
        (Vector3::new(1.0, 0.0, -x_hi), 0.0),
        (Vector3::new(-1.0, 0.0, x_lo), 0.0),
        (Vector3::new(0.0, 1.0, -y_hi), 0.0),
        (Vector3::new(0.0, -1.0, y_lo), 0.0),
        (Vector3::new(0.0, 0.0, -1.0), -NEAR_PLANE),
        (Vector3::new(0.0, 0.0, 1.0), far),
    ];
    cam_space
        .iter()
        .map(|(a, b)| HalfSpace {
            n: r.transpose() * a,
            d: b - a.dot(&t),
        })
        .collect()
}

/// Bounding box of the intersection of all camera frusta, by vertex enumeration.
pub fn frustum_intersection_box(cameras: &[&CameraModel], far: f64) -> Result<Aabb, OptimError> {
    if cameras.is_empty() {
        return Err(OptimError::Init("no cameras".into()));
    }
    let planes: Vec<HalfSpace> = cameras.iter().flat_map(|c| frustum_planes(c, far)).collect();
    let scale = far.max(1.0);
    let tol = 1e-9 * scale;
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    let mut found = false;
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            for k in j + 1..planes.len() {
                let m = Matrix3::from_rows(&[
                    planes[i].n.transpose(),
                    planes[j].n.transpose(),
                    planes[k].n.transpose(),
                ]);
                if m.determinant().abs() < 1e-12 {
                    continue;
                }
                let Some(inv) = m.try_inverse() else { continue };
                let p = inv * Vector3::new(planes[i].d, planes[j].d, planes[k].d);
                if planes.iter().all(|h| h.n.dot(&p) <= h.d + tol) {
                    found = true;
                    min = min.inf(&p);
                    max = max.sup(&p);
                }
            }
        }
    }
    if !found || (max - min).iter().any(|v| !(*v > 0.0)) {
        return Err(OptimError::Init("camera frusta have no common volume".into()));
    }
    Ok(Aabb { min, max })
}

/// Parameters of the initial primitive cloud.
#[derive(Clone, Debug)]
pub struct InitSpec {
    pub budget: usize,
    pub duration: f64,
    pub sh_degree: usize,
    pub fourier_order: usize,
    pub opacity: f64,
    /// Spatial standard deviation; `None` picks one from the box volume and budget.
    pub spatial_scale: Option<f64>,
    pub seed: u64,
}

/// Uniform samples in `bbox`, uniform temporal means, temporal scale of half the
/// duration, mid-gray color.
pub fn sample_gaussians(bbox: &Aabb, spec: &InitSpec) -> Result<Vec<Gaussian4D>, OptimError> {
    if spec.budget == 0 {
        return Err(OptimError::Config("budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = bbox.size();
    let scale = spec
        .spatial_scale
        .unwrap_or_else(|| 0.5 * (size.x * size.y * size.z / spec.budget as f64).cbrt());
    let color =
        ColorCoeffs::zeros(spec.sh_degree, spec.fourier_order).map_err(|e| OptimError::Config(e.to_string()))?;
    Ok((0..spec.budget)
        .map(|_| {
            let p = Vector3::from_fn(|i, _| bbox.min[i] + rng.random::<f64>() * size[i]);
            let t = rng.random::<f64>() * spec.duration;
            Gaussian4D::axis_aligned(
                Vector4::new(p.x, p.y, p.z, t),
                Vector4::new(scale, scale, scale, 0.5 * spec.duration),
                spec.opacity,
                color.clone(),
            )
        })
        .collect())
}
