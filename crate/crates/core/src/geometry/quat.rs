//! Left/right quaternion multiplication matrices for 4D rotations.
//!
//! A 4D point `(x, y, z, t)` is identified with the quaternion
//! `t + x·i + y·j + z·k`, so the spatial axes are the imaginary units and the
//! temporal axis is the real part. Quaternions are stored as `(w, x, y, z)`.
//!
//! With that embedding, for `q = (a, b, c, d)`:
//!
//! ```text
//!          | a  -d   c   b |            | a   d  -c   b |
//!   L(q) = | d   a  -b   c |     R(q) = |-d   a   b   c |
//!          |-c   b   a   d |            | c  -b   a   d |
//!          |-b  -c  -d   a |            |-b  -c  -d   a |
//! ```
//!
//! `L(q)·p` is the coordinate vector of `q * p` and `R(q)·p` that of `p * q`.
//! `L(q_l)·R(q_r)` is a rotation of R⁴ for unit inputs, and every rotation
//! arises this way. `L(q)·R(conj(q))` rotates space and leaves time fixed.

use nalgebra::{Matrix4, Vector4};

use super::GeometryError;

/// Smallest quaternion norm accepted before normalization.
pub const MIN_QUAT_NORM: f64 = 1e-12;

pub fn left_matrix(q: &Vector4<f64>) -> Matrix4<f64> {
    let (a, b, c, d) = (q[0], q[1], q[2], q[3]);
    Matrix4::new(
        a, -d, c, b, //
        d, a, -b, c, //
        -c, b, a, d, //
        -b, -c, -d, a,
    )
}

pub fn right_matrix(q: &Vector4<f64>) -> Matrix4<f64> {
    let (a, b, c, d) = (q[0], q[1], q[2], q[3]);
    Matrix4::new(
        a, d, -c, b, //
        -d, a, b, c, //
        c, -b, a, d, //
        -b, -c, -d, a,
    )
}

pub fn normalize(q: &Vector4<f64>) -> Result<Vector4<f64>, GeometryError> {
    let n = q.norm();
    if !n.is_finite() || n < MIN_QUAT_NORM {
        return Err(GeometryError::ZeroQuaternion);
    }
    Ok(q / n)
}

pub fn conjugate(q: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(q[0], -q[1], -q[2], -q[3])
}

/// 4D rotation `L(q_l)·R(q_r)`; both inputs are normalized first.
pub fn rotation4_from_quaternions(
    q_left: &Vector4<f64>,
    q_right: &Vector4<f64>,
) -> Result<Matrix4<f64>, GeometryError> {
    let ql = normalize(q_left)?;
    let qr = normalize(q_right)?;
    Ok(left_matrix(&ql) * right_matrix(&qr))
}

/// Quaternion `(w, x, y, z)` of a 3×3 rotation matrix (Shepperd's method).
pub fn quat_from_rotation3(m: &nalgebra::Matrix3<f64>) -> Vector4<f64> {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Vector4::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Vector4::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    q / q.norm()
}

/// Pulls a gradient on a matrix built linearly from `q` (`L` or `R`) back to `q`.
pub(crate) fn linear_matrix_backward(
    build: fn(&Vector4<f64>) -> Matrix4<f64>,
    d_matrix: &Matrix4<f64>,
) -> Vector4<f64> {
    let mut out = Vector4::zeros();
    for k in 0..4 {
        let basis = build(&Vector4::ith(k, 1.0));
        out[k] = d_matrix.component_mul(&basis).sum();
    }
    out
}

/// Backward of `q / |q|`.
pub(crate) fn normalize_backward(q: &Vector4<f64>, d_unit: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    let u = q / n;
    (d_unit - u * u.dot(d_unit)) / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quat_mul(p: &Vector4<f64>, q: &Vector4<f64>) -> Vector4<f64> {
        let (a, b, c, d) = (p[0], p[1], p[2], p[3]);
        let (e, f, g, h) = (q[0], q[1], q[2], q[3]);
        Vector4::new(
            a * e - b * f - c * g - d * h,
            a * f + b * e + c * h - d * g,
            a * g - b * h + c * e + d * f,
            a * h + b * g - c * f + d * e,
        )
    }

    // (w,x,y,z) storage -> (x,y,z,t) coordinates
    fn to_coords(q: &Vector4<f64>) -> Vector4<f64> {
        Vector4::new(q[1], q[2], q[3], q[0])
    }

    #[test]
    fn matrices_match_hamilton_product() {
        let q = Vector4::new(0.3, -0.5, 0.7, 0.2);
        let p = Vector4::new(-1.1, 0.4, 0.9, -0.25);
        let lhs = left_matrix(&q) * to_coords(&p);
        assert!((lhs - to_coords(&quat_mul(&q, &p))).norm() < 1e-14);
        let rhs = right_matrix(&q) * to_coords(&p);
        assert!((rhs - to_coords(&quat_mul(&p, &q))).norm() < 1e-14);
    }

    #[test]
    fn conjugate_pair_fixes_time_axis() {
        let q = normalize(&Vector4::new(0.8, 0.1, -0.4, 0.3)).unwrap();
        let m = left_matrix(&q) * right_matrix(&conjugate(&q));
        let t_axis = Vector4::new(0.0, 0.0, 0.0, 1.0);
        assert!((m * t_axis - t_axis).norm() < 1e-14);
    }

    #[test]
    fn zero_quaternion_rejected() {
        let err = rotation4_from_quaternions(&Vector4::zeros(), &Vector4::new(1.0, 0.0, 0.0, 0.0));
        assert!(matches!(err, Err(GeometryError::ZeroQuaternion)));
    }

    #[test]
    fn rotation3_roundtrip() {
        let q = normalize(&Vector4::new(0.2, 0.9, -0.3, 0.1)).unwrap();
        let m4 = left_matrix(&q) * right_matrix(&conjugate(&q));
        let m3 = m4.fixed_view::<3, 3>(0, 0).into_owned();
        let back = quat_from_rotation3(&m3);
        assert!((back - q).norm() < 1e-12 || (back + q).norm() < 1e-12);
    }
}
