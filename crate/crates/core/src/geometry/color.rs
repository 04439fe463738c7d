//! Time-dependent view-dependent color: real spherical harmonics in the view
//! direction crossed with a Fourier series in time.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeometryError;

pub const MAX_SH_DEGREE: usize = 2;

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

/// Offset added to the basis expansion so that all-zero coefficients give mid-gray.
pub const COLOR_DC_OFFSET: f64 = 0.5;

pub type Rgb = [f64; 3];

/// Color coefficients indexed by (SH basis index, Fourier index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorCoeffs {
    sh_degree: usize,
    fourier_order: usize,
    coeffs: Vec<Rgb>,
}

impl ColorCoeffs {
    pub fn zeros(sh_degree: usize, fourier_order: usize) -> Result<Self, GeometryError> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(GeometryError::UnsupportedShDegree(sh_degree));
        }
        Ok(Self {
            sh_degree,
            fourier_order,
            coeffs: vec![[0.0; 3]; Self::count_for(sh_degree, fourier_order)],
        })
    }

    /// Degree-0, order-0 coefficients that evaluate to `rgb` everywhere.
    pub fn constant(rgb: Rgb) -> Self {
        let c = rgb.map(|v| (v - COLOR_DC_OFFSET) / SH_C0);
        Self {
            sh_degree: 0,
            fourier_order: 0,
            coeffs: vec![c],
        }
    }

    pub fn from_coeffs(sh_degree: usize, fourier_order: usize, coeffs: Vec<Rgb>) -> Result<Self, GeometryError> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(GeometryError::UnsupportedShDegree(sh_degree));
        }
        let expected = Self::count_for(sh_degree, fourier_order);
        if coeffs.len() != expected {
            return Err(GeometryError::CoefficientCount {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(Self {
            sh_degree,
            fourier_order,
            coeffs,
        })
    }

    pub fn count_for(sh_degree: usize, fourier_order: usize) -> usize {
        (sh_degree + 1) * (sh_degree + 1) * (2 * fourier_order + 1)
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn fourier_order(&self) -> usize {
        self.fourier_order
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[Rgb] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Rgb] {
        &mut self.coeffs
    }

    pub fn index(&self, sh_index: usize, fourier_index: usize) -> usize {
        sh_index * (2 * self.fourier_order + 1) + fourier_index
    }
}

/// Real SH basis (with Condon-Shortley phase), ordered `m = -l..=l` per band.
pub fn sh_basis(degree: usize, dir: &Vector3<f64>) -> [f64; 9] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut out = [0.0; 9];
    out[0] = SH_C0;
    if degree >= 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * z * z - x * x - y * y);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (x * x - y * y);
    }
    out
}

/// Partial derivatives of [`sh_basis`] with respect to the (unnormalized) direction components.
pub fn sh_basis_grad(degree: usize, dir: &Vector3<f64>) -> [Vector3<f64>; 9] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut out = [Vector3::zeros(); 9];
    if degree >= 1 {
        out[1] = Vector3::new(0.0, -SH_C1, 0.0);
        out[2] = Vector3::new(0.0, 0.0, SH_C1);
        out[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    }
    if degree >= 2 {
        out[4] = SH_C2[0] * Vector3::new(y, x, 0.0);
        out[5] = SH_C2[1] * Vector3::new(0.0, z, y);
        out[6] = SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        out[7] = SH_C2[3] * Vector3::new(z, 0.0, x);
        out[8] = SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
    }
    out
}

/// `[1, cos(θ), sin(θ), cos(2θ), sin(2θ), ...]` up to `order`.
pub fn fourier_basis(order: usize, theta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * order + 1);
    out.push(1.0);
    for k in 1..=order {
        let (s, c) = (k as f64 * theta).sin_cos();
        out.push(c);
        out.push(s);
    }
    out
}

/// Unclamped basis expansion (including the DC offset).
pub fn eval_color_raw(c: &ColorCoeffs, view_dir: &Vector3<f64>, t: f64, t_period: f64) -> Rgb {
    let sh = sh_basis(c.sh_degree, view_dir);
    let fb = fourier_basis(c.fourier_order, 2.0 * PI * t / t_period);
    let n_sh = (c.sh_degree + 1) * (c.sh_degree + 1);
    let mut rgb = [COLOR_DC_OFFSET; 3];
    for (s, y) in sh.iter().enumerate().take(n_sh) {
        for (f, b) in fb.iter().enumerate() {
            let coeff = &c.coeffs[c.index(s, f)];
            let w = y * b;
            for ch in 0..3 {
                rgb[ch] += coeff[ch] * w;
            }
        }
    }
    rgb
}

/// Color at `view_dir` and time `t`, clamped below at zero.
pub fn eval_color(c: &ColorCoeffs, view_dir: &Vector3<f64>, t: f64, t_period: f64) -> Rgb {
    eval_color_raw(c, view_dir, t, t_period).map(|v| v.max(0.0))
}

/// Backward of [`eval_color`]: returns coefficient gradients and the gradient
/// with respect to the unit view direction.
pub fn eval_color_backward(
    c: &ColorCoeffs,
    view_dir: &Vector3<f64>,
    t: f64,
    t_period: f64,
    d_rgb: &Rgb,
) -> (Vec<Rgb>, Vector3<f64>) {
    let raw = eval_color_raw(c, view_dir, t, t_period);
    let mut d_raw = *d_rgb;
    for ch in 0..3 {
        if raw[ch] < 0.0 {
            d_raw[ch] = 0.0;
        }
    }
    let sh = sh_basis(c.sh_degree, view_dir);
    let sh_grad = sh_basis_grad(c.sh_degree, view_dir);
    let fb = fourier_basis(c.fourier_order, 2.0 * PI * t / t_period);
    let n_sh = (c.sh_degree + 1) * (c.sh_degree + 1);
    let mut d_coeffs = vec![[0.0; 3]; c.coeffs.len()];
    let mut d_dir = Vector3::zeros();
    for s in 0..n_sh {
        for (f, b) in fb.iter().enumerate() {
            let idx = c.index(s, f);
            let coeff = &c.coeffs[idx];
            let mut along = 0.0;
            for ch in 0..3 {
                d_coeffs[idx][ch] = d_raw[ch] * sh[s] * b;
                along += d_raw[ch] * coeff[ch];
            }
            d_dir += sh_grad[s] * (along * b);
        }
    }
    (d_coeffs, d_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_count() {
        assert_eq!(ColorCoeffs::count_for(0, 0), 1);
        assert_eq!(ColorCoeffs::count_for(1, 0), 4);
        assert_eq!(ColorCoeffs::count_for(2, 1), 27);
        assert_eq!(ColorCoeffs::zeros(1, 2).unwrap().len(), 20);
        assert!(ColorCoeffs::zeros(3, 0).is_err());
    }

    #[test]
    fn constant_color_is_view_and_time_independent() {
        let c = ColorCoeffs::constant([0.2, 0.7, 0.9]);
        for (d, t) in [(Vector3::new(1.0, 0.0, 0.0), 0.0), (Vector3::new(0.0, 0.6, 0.8), 0.37)] {
            let rgb = eval_color(&c, &d, t, 1.0);
            for (got, want) in rgb.iter().zip([0.2, 0.7, 0.9]) {
                assert!((got - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_fourier_order_is_a_sinusoid_of_the_period() {
        let mut c = ColorCoeffs::zeros(0, 1).unwrap();
        // cos term on red
        c.coeffs_mut()[1] = [0.4 / SH_C0, 0.0, 0.0];
        let d = Vector3::new(0.0, 0.0, 1.0);
        let period = 0.8;
        for i in 0..16 {
            let t = i as f64 * 0.05;
            let r = eval_color(&c, &d, t, period)[0];
            let want = 0.5 + 0.4 * (2.0 * PI * t / period).cos();
            assert!((r - want).abs() < 1e-12);
            let r_next = eval_color(&c, &d, t + period, period)[0];
            assert!((r - r_next).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_at_zero() {
        let c = ColorCoeffs::constant([-0.3, 0.1, 0.0]);
        let rgb = eval_color(&c, &Vector3::z(), 0.0, 1.0);
        assert_eq!(rgb[0], 0.0);
        let (d_coeffs, _) = eval_color_backward(&c, &Vector3::z(), 0.0, 1.0, &[1.0, 1.0, 1.0]);
        assert_eq!(d_coeffs[0][0], 0.0);
        assert!(d_coeffs[0][1] > 0.0);
    }
}
