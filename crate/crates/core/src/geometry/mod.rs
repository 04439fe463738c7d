//! The 4D Gaussian primitive, covariance assembly from scale and rotation,
//! and conditioning on time.
//!
//! A primitive is an unnormalized Gaussian over `(x, y, z, t)`:
//! `p(x) = exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))` with `Σ = R S Sᵀ Rᵀ` and
//! `R = L(q_l)·R(q_r)`. Rendering at a fixed time `t` uses the Gaussian
//! conditional in space together with the temporal marginal weight.

pub mod color;
pub mod quat;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use color::{eval_color, ColorCoeffs, Rgb};
pub use quat::rotation4_from_quaternions;

/// Temporal variance below which conditioning is refused.
pub const MIN_TEMPORAL_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quaternion has zero (or non-finite) norm")]
    ZeroQuaternion,
    #[error("temporal variance {0:e} is below the conditioning floor")]
    DegenerateTemporalExtent(f64),
    #[error("spherical harmonic degree {0} is not supported (max 2)")]
    UnsupportedShDegree(usize),
    #[error("expected {expected} color coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
}

/// One splat primitive in unconstrained parameterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian4D {
    /// `(x, y, z, t)`; time in seconds.
    pub mean: Vector4<f64>,
    /// Natural log of `(s_x, s_y, s_z, s_t)`.
    pub log_scale: Vector4<f64>,
    /// Left quaternion `(w, x, y, z)`, renormalized on read.
    pub rot_left: Vector4<f64>,
    /// Right quaternion `(w, x, y, z)`, renormalized on read.
    pub rot_right: Vector4<f64>,
    /// Pre-sigmoid opacity.
    pub opacity_logit: f64,
    pub color: ColorCoeffs,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub const IDENTITY_QUAT: Vector4<f64> = Vector4::new(1.0, 0.0, 0.0, 0.0);

impl Gaussian4D {
    /// Axis-aligned primitive with identity rotations.
    pub fn axis_aligned(mean: Vector4<f64>, scale: Vector4<f64>, opacity: f64, color: ColorCoeffs) -> Self {
        Self {
            mean,
            log_scale: scale.map(f64::ln),
            rot_left: IDENTITY_QUAT,
            rot_right: IDENTITY_QUAT,
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn scale(&self) -> Vector4<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation(&self) -> Result<Matrix4<f64>, GeometryError> {
        rotation4_from_quaternions(&self.rot_left, &self.rot_right)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rot_left.iter().all(|v| v.is_finite())
            && self.rot_right.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.coeffs().iter().flatten().all(|v| v.is_finite())
    }

    /// Number of scalar parameters: 4 mean + 4 log-scale + 8 quaternion + 1 opacity + 3·colors.
    pub fn param_count(&self) -> usize {
        17 + 3 * self.color.len()
    }

    /// Flattens parameters in the order mean, log-scale, q_l, q_r, opacity, color.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.mean.as_slice());
        out.extend_from_slice(self.log_scale.as_slice());
        out.extend_from_slice(self.rot_left.as_slice());
        out.extend_from_slice(self.rot_right.as_slice());
        out.push(self.opacity_logit);
        for c in self.color.coeffs() {
            out.extend_from_slice(c);
        }
    }

    /// Inverse of [`Gaussian4D::write_params`]; `params` must hold exactly `param_count` values.
    pub fn read_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        self.mean.copy_from_slice(&params[0..4]);
        self.log_scale.copy_from_slice(&params[4..8]);
        self.rot_left.copy_from_slice(&params[8..12]);
        self.rot_right.copy_from_slice(&params[12..16]);
        self.opacity_logit = params[16];
        for (i, c) in self.color.coeffs_mut().iter_mut().enumerate() {
            c.copy_from_slice(&params[17 + 3 * i..20 + 3 * i]);
        }
    }
}

/// Symmetric positive-definite 4×4 covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance4(Matrix4<f64>);

impl Covariance4 {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn temporal_variance(&self) -> f64 {
        self.0[(3, 3)]
    }
}

/// `Σ = R S Sᵀ Rᵀ`.
pub fn assemble_covariance(g: &Gaussian4D) -> Result<Covariance4, GeometryError> {
    let m = g.rotation()? * Matrix4::from_diagonal(&g.scale());
    let sigma = m * m.transpose();
    // exact symmetry
    Ok(Covariance4((sigma + sigma.transpose()) * 0.5))
}

/// The spatial Gaussian seen at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionedGaussian3 {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    /// Unnormalized temporal marginal, `1` at `t = μ_t`.
    pub temporal_weight: f64,
}

/// Conditions a 4D Gaussian on time `t`.
///
/// ```text
/// mean   = μ_s + Σ_st Σ_tt⁻¹ (t − μ_t)
/// cov    = Σ_ss − Σ_st Σ_tt⁻¹ Σ_ts
/// weight = exp(−(t − μ_t)² / (2 Σ_tt))
/// ```
pub fn condition_at_time(g: &Gaussian4D, t: f64) -> Result<ConditionedGaussian3, GeometryError> {
    let cov = assemble_covariance(g)?;
    condition_covariance(&g.mean, &cov, t)
}

pub fn condition_covariance(
    mean: &Vector4<f64>,
    cov: &Covariance4,
    t: f64,
) -> Result<ConditionedGaussian3, GeometryError> {
    let s = cov.matrix();
    let c = s[(3, 3)];
    if !(c >= MIN_TEMPORAL_VARIANCE) {
        return Err(GeometryError::DegenerateTemporalExtent(c));
    }
    let b = Vector3::new(s[(0, 3)], s[(1, 3)], s[(2, 3)]);
    let a = s.fixed_view::<3, 3>(0, 0).into_owned();
    let dt = t - mean[3];
    let mean3 = Vector3::new(mean[0], mean[1], mean[2]) + b * (dt / c);
    let cov3 = a - b * b.transpose() / c;
    Ok(ConditionedGaussian3 {
        mean: mean3,
        cov: (cov3 + cov3.transpose()) * 0.5,
        temporal_weight: (-dt * dt / (2.0 * c)).exp(),
    })
}

/// Unnormalized 4D density at `x`.
pub fn density4(g: &Gaussian4D, x: &Vector4<f64>) -> Result<f64, GeometryError> {
    let cov = assemble_covariance(g)?;
    let inv = cov
        .matrix()
        .try_inverse()
        .ok_or(GeometryError::DegenerateTemporalExtent(0.0))?;
    let d = x - g.mean;
    Ok((-0.5 * d.dot(&(inv * d))).exp())
}

/// Upstream gradient on a [`ConditionedGaussian3`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConditionedGrad {
    pub mean: Vector3<f64>,
    /// Gradient on the symmetric covariance (`dL = Σ G_ij dC_ij`).
    pub cov: Matrix3<f64>,
    pub temporal_weight: f64,
}

/// Backward of [`condition_covariance`]: gradients on the 4D mean and on Σ.
///
/// The Σ gradient is symmetric and satisfies `dL = Σ_ij G_ij dΣ_ij` for symmetric perturbations.
pub fn condition_backward(
    mean: &Vector4<f64>,
    cov: &Covariance4,
    t: f64,
    grad: &ConditionedGrad,
) -> (Vector4<f64>, Matrix4<f64>) {
    let s = cov.matrix();
    let c = s[(3, 3)];
    let b = Vector3::new(s[(0, 3)], s[(1, 3)], s[(2, 3)]);
    let dt = t - mean[3];
    let w = (-dt * dt / (2.0 * c)).exp();
    let g_sym = (grad.cov + grad.cov.transpose()) * 0.5;

    // mean3 = μ_s + b·dt/c
    let mut d_b = grad.mean * (dt / c);
    let mut d_c = -grad.mean.dot(&b) * dt / (c * c);
    let mut d_dt = grad.mean.dot(&b) / c;
    // cov3 = A − b bᵀ / c
    d_b -= 2.0 * g_sym * b / c;
    d_c += b.dot(&(g_sym * b)) / (c * c);
    // w = exp(−dt²/(2c))
    d_dt += grad.temporal_weight * (-w * dt / c);
    d_c += grad.temporal_weight * w * dt * dt / (2.0 * c * c);

    let d_mean = Vector4::new(grad.mean.x, grad.mean.y, grad.mean.z, -d_dt);
    let mut d_sigma = Matrix4::zeros();
    d_sigma.fixed_view_mut::<3, 3>(0, 0).copy_from(&g_sym);
    for i in 0..3 {
        d_sigma[(i, 3)] = 0.5 * d_b[i];
        d_sigma[(3, i)] = 0.5 * d_b[i];
    }
    d_sigma[(3, 3)] = d_c;
    (d_mean, d_sigma)
}

/// Gradients on the factored covariance parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CovarianceParamGrad {
    pub log_scale: Vector4<f64>,
    pub rot_left: Vector4<f64>,
    pub rot_right: Vector4<f64>,
}

/// Backward of [`assemble_covariance`] given a symmetric gradient on Σ.
pub fn covariance_backward(g: &Gaussian4D, d_sigma: &Matrix4<f64>) -> Result<CovarianceParamGrad, GeometryError> {
    let ql = quat::normalize(&g.rot_left)?;
    let qr = quat::normalize(&g.rot_right)?;
    let lm = quat::left_matrix(&ql);
    let rm = quat::right_matrix(&qr);
    let rot = lm * rm;
    let scale = g.scale();
    let m = rot * Matrix4::from_diagonal(&scale);
    let g_sym = (d_sigma + d_sigma.transpose()) * 0.5;
    // Σ = M Mᵀ
    let d_m = 2.0 * g_sym * m;
    // M = R diag(s)
    let d_rot = d_m * Matrix4::from_diagonal(&scale);
    let mut d_log_scale = Vector4::zeros();
    for k in 0..4 {
        let d_s: f64 = (0..4).map(|i| d_m[(i, k)] * rot[(i, k)]).sum();
        d_log_scale[k] = d_s * scale[k];
    }
    let d_l = d_rot * rm.transpose();
    let d_r = lm.transpose() * d_rot;
    let d_ql = quat::linear_matrix_backward(quat::left_matrix, &d_l);
    let d_qr = quat::linear_matrix_backward(quat::right_matrix, &d_r);
    Ok(CovarianceParamGrad {
        log_scale: d_log_scale,
        rot_left: quat::normalize_backward(&g.rot_left, &d_ql),
        rot_right: quat::normalize_backward(&g.rot_right, &d_qr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray() -> ColorCoeffs {
        ColorCoeffs::constant([0.5; 3])
    }

    #[test]
    fn identity_rotation_unit_scale_gives_identity() {
        let g = Gaussian4D::axis_aligned(Vector4::zeros(), Vector4::repeat(1.0), 0.5, gray());
        let s = assemble_covariance(&g).unwrap();
        assert!((s.matrix() - Matrix4::identity()).norm() < 1e-15);
    }

    #[test]
    fn diagonal_scales_square_onto_diagonal() {
        let g = Gaussian4D::axis_aligned(Vector4::zeros(), Vector4::new(2.0, 1.0, 1.0, 0.5), 0.5, gray());
        let s = assemble_covariance(&g).unwrap();
        let want = Matrix4::from_diagonal(&Vector4::new(4.0, 1.0, 1.0, 0.25));
        assert!((s.matrix() - want).norm() < 1e-14);
    }

    #[test]
    fn diagonal_conditioning_is_independent() {
        let sigma_t: f64 = 0.3;
        let g = Gaussian4D::axis_aligned(Vector4::zeros(), Vector4::new(1.0, 1.0, 1.0, sigma_t), 0.5, gray());
        let c = condition_at_time(&g, sigma_t).unwrap();
        assert!(c.mean.norm() < 1e-15);
        assert!((c.cov - Matrix3::identity()).norm() < 1e-14);
        assert!((c.temporal_weight - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn weight_is_one_at_temporal_mean() {
        let mut g = Gaussian4D::axis_aligned(
            Vector4::new(0.1, -0.2, 0.3, 0.42),
            Vector4::new(0.5, 0.7, 0.2, 0.1),
            0.5,
            gray(),
        );
        g.rot_left = Vector4::new(0.3, 0.5, -0.2, 0.7);
        g.rot_right = Vector4::new(-0.1, 0.4, 0.8, 0.2);
        let c = condition_at_time(&g, 0.42).unwrap();
        assert_eq!(c.temporal_weight, 1.0);
    }

    #[test]
    fn degenerate_temporal_extent_is_an_error() {
        let g = Gaussian4D::axis_aligned(Vector4::zeros(), Vector4::new(1.0, 1.0, 1.0, 1e-7), 0.5, gray());
        assert!(matches!(
            condition_at_time(&g, 0.0),
            Err(GeometryError::DegenerateTemporalExtent(_))
        ));
    }

    #[test]
    fn params_roundtrip() {
        let mut g = Gaussian4D::axis_aligned(
            Vector4::new(1.0, 2.0, 3.0, 0.5),
            Vector4::new(0.1, 0.2, 0.3, 0.4),
            0.3,
            ColorCoeffs::zeros(1, 1).unwrap(),
        );
        g.color.coeffs_mut()[5] = [0.1, 0.2, 0.3];
        let mut p = Vec::new();
        g.write_params(&mut p);
        assert_eq!(p.len(), g.param_count());
        let mut h = g.clone();
        h.mean = Vector4::zeros();
        h.color.coeffs_mut()[5] = [0.0; 3];
        h.read_params(&p);
        assert_eq!(g, h);
    }
}
