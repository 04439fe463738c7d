//! Analytic gradients of a rendered image with respect to every primitive parameter.
//!
//! Compositing is differentiated back to front with the "color behind"
//! recurrence `B_i = c_{i+1} a_{i+1} + (1 − a_{i+1}) B_{i+1}`, `B_last = background`,
//! which gives `∂C/∂a_i = T_i (c_i − B_i)` without dividing by `1 − a_i`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

use super::{composite, project_all, RenderError, RenderSettings};
use crate::capture::CameraModel;
use crate::frame::RenderedFrame;
use crate::geometry::{self, color, ConditionedGrad, Gaussian4D, Rgb};

/// Gradient for one primitive, laid out like [`Gaussian4D::write_params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vector4<f64>,
    pub log_scale: Vector4<f64>,
    pub rot_left: Vector4<f64>,
    pub rot_right: Vector4<f64>,
    pub opacity_logit: f64,
    pub color: Vec<Rgb>,
}

impl GaussianGrad {
    pub fn zeros_like(g: &Gaussian4D) -> Self {
        Self {
            mean: Vector4::zeros(),
            log_scale: Vector4::zeros(),
            rot_left: Vector4::zeros(),
            rot_right: Vector4::zeros(),
            opacity_logit: 0.0,
            color: vec![[0.0; 3]; g.color.len()],
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.mean.as_slice());
        out.extend_from_slice(self.log_scale.as_slice());
        out.extend_from_slice(self.rot_left.as_slice());
        out.extend_from_slice(self.rot_right.as_slice());
        out.push(self.opacity_logit);
        for c in &self.color {
            out.extend_from_slice(c);
        }
    }

    pub fn is_zero(&self) -> bool {
        let mut v = Vec::new();
        self.write_flat(&mut v);
        v.iter().all(|x| *x == 0.0)
    }
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    color: [f64; 3],
    opacity: f64,
    weight: f64,
}

/// Renders and back-propagates `adjoint` (∂L/∂pixel, RGB interleaved).
pub fn render_with_gradients(
    gaussians: &[Gaussian4D],
    cam: &CameraModel,
    t: f64,
    settings: &RenderSettings,
    adjoint: &[f64],
) -> Result<(RenderedFrame, Vec<GaussianGrad>), RenderError> {
    let frame = render_forward(gaussians, cam, t, settings)?;
    let grads = frame.backward(gaussians, cam, settings, adjoint)?;
    Ok((frame.frame, grads))
}

/// A forward render that remembers what it needs for [`ForwardPass::backward`].
pub struct ForwardPass {
    pub frame: RenderedFrame,
    projected: super::Projected,
    contributions: Vec<super::Contribution>,
    t: f64,
}

pub fn render_forward(
    gaussians: &[Gaussian4D],
    cam: &CameraModel,
    t: f64,
    settings: &RenderSettings,
) -> Result<ForwardPass, RenderError> {
    let projected = project_all(gaussians, cam, t, settings)?;
    let comp = composite(&projected.splats, cam, settings.background, t, true);
    Ok(ForwardPass {
        frame: comp.frame,
        projected,
        contributions: comp.contributions,
        t,
    })
}

impl ForwardPass {
    pub fn backward(
        &self,
        gaussians: &[Gaussian4D],
        cam: &CameraModel,
        settings: &RenderSettings,
        adjoint: &[f64],
    ) -> Result<Vec<GaussianGrad>, RenderError> {
        let n_pix = self.frame.pixel_count();
        if adjoint.len() != 3 * n_pix {
            return Err(RenderError::AdjointShape {
                expected: 3 * n_pix,
                got: adjoint.len(),
            });
        }
        let splats = &self.projected.splats;
        let mut screen = vec![ScreenGrad::default(); splats.len()];

        let mut behind: Vec<[f64; 3]> = vec![settings.background; n_pix];
        let w = self.frame.width;
        for c in self.contributions.iter().rev() {
            let pix = c.pixel as usize;
            let s = &splats[c.splat as usize];
            let adj = [adjoint[3 * pix], adjoint[3 * pix + 1], adjoint[3 * pix + 2]];
            let b = behind[pix];
            let sg = &mut screen[c.splat as usize];
            let mut d_a = 0.0;
            for ch in 0..3 {
                sg.color[ch] += adj[ch] * c.alpha * c.transmittance;
                d_a += adj[ch] * c.transmittance * (s.color[ch] - b[ch]);
            }
            for ch in 0..3 {
                behind[pix][ch] = s.color[ch] * c.alpha + (1.0 - c.alpha) * b[ch];
            }
            if d_a == 0.0 {
                continue;
            }
            sg.opacity += d_a * s.temporal_weight * c.kernel;
            sg.weight += d_a * s.opacity * c.kernel;
            let d_q = d_a * s.opacity * s.temporal_weight * c.kernel_slope;
            let x = (c.pixel % w) as f64 + 0.5;
            let y = (c.pixel / w) as f64 + 0.5;
            let d = Vector2::new(x - s.mean.x, y - s.mean.y);
            sg.mean -= 2.0 * d_q * (s.conic * d);
            sg.conic += d_q * d * d.transpose();
        }

        let mut grads: Vec<GaussianGrad> = gaussians.iter().map(GaussianGrad::zeros_like).collect();
        for (k, sg) in screen.iter().enumerate() {
            let src = self.projected.sources[k];
            let g = &gaussians[src];
            let cache = &self.projected.caches[k];
            let s = &splats[k];
            let out = &mut grads[src];

            // conic = cov⁻¹
            let d_cov2 = -(s.conic * sg.conic * s.conic);
            let d_cov2 = (d_cov2 + d_cov2.transpose()) * 0.5;
            // cov2 = JW Σ (JW)ᵀ + floor
            let jw = &cache.jw;
            let d_cov3: Matrix3<f64> = jw.transpose() * d_cov2 * jw;
            let d_jw = 2.0 * d_cov2 * jw * cache.cond.cov;
            let d_j = d_jw * cam.rotation.transpose();

            let p = cache.cam_point;
            let iz = 1.0 / p.z;
            let iz2 = iz * iz;
            let iz3 = iz2 * iz;
            let mut d_p = Vector3::zeros();
            d_p.x += d_j[(0, 2)] * (-cam.fx * iz2);
            d_p.y += d_j[(1, 2)] * (-cam.fy * iz2);
            d_p.z += d_j[(0, 0)] * (-cam.fx * iz2)
                + d_j[(1, 1)] * (-cam.fy * iz2)
                + d_j[(0, 2)] * (2.0 * cam.fx * p.x * iz3)
                + d_j[(1, 2)] * (2.0 * cam.fy * p.y * iz3);
            d_p.x += sg.mean.x * cam.fx * iz;
            d_p.y += sg.mean.y * cam.fy * iz;
            d_p.z -= sg.mean.x * cam.fx * p.x * iz2 + sg.mean.y * cam.fy * p.y * iz2;
            let mut d_mean3 = cam.rotation.transpose() * d_p;

            let view_norm = cache.view.norm();
            if view_norm > 0.0 {
                let dir = cache.view / view_norm;
                let (d_coeffs, d_dir) =
                    color::eval_color_backward(&g.color, &dir, self.t, settings.t_period, &sg.color);
                d_mean3 += (d_dir - dir * dir.dot(&d_dir)) / view_norm;
                out.color = d_coeffs;
            }

            let cov4 =
                geometry::assemble_covariance(g).map_err(|source| RenderError::Geometry { index: src, source })?;
            let (d_mean4, d_sigma) = geometry::condition_backward(
                &g.mean,
                &cov4,
                self.t,
                &ConditionedGrad {
                    mean: d_mean3,
                    cov: d_cov3,
                    temporal_weight: sg.weight,
                },
            );
            let cp = geometry::covariance_backward(g, &d_sigma)
                .map_err(|source| RenderError::Geometry { index: src, source })?;
            out.mean = d_mean4;
            out.log_scale = cp.log_scale;
            out.rot_left = cp.rot_left;
            out.rot_right = cp.rot_right;
            let alpha = s.opacity;
            out.opacity_logit = sg.opacity * alpha * (1.0 - alpha);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector4;

    use super::*;
    use crate::geometry::ColorCoeffs;

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let cam = CameraModel::look_at(
            0,
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            16.0,
            16,
            16,
        );
        let g = Gaussian4D::axis_aligned(
            Vector4::new(0.1, 0.0, 0.0, 0.2),
            Vector4::new(0.3, 0.2, 0.25, 0.4),
            0.6,
            ColorCoeffs::constant([0.3, 0.6, 0.9]),
        );
        let adj = vec![0.0; 3 * 256];
        let (_, grads) = render_with_gradients(&[g], &cam, 0.0, &RenderSettings::default(), &adj).unwrap();
        assert!(grads[0].is_zero());
    }
}
