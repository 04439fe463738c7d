mod common;

use nalgebra::{Matrix4, SymmetricEigen, Vector3, Vector4};
use proptest::prelude::*;
use rand::Rng;

use stagger4d::geometry::color::{eval_color, eval_color_raw, ColorCoeffs};
use stagger4d::geometry::quat::{left_matrix, normalize, right_matrix};
use stagger4d::geometry::{assemble_covariance, condition_at_time, density4, rotation4_from_quaternions, Gaussian4D};

use common::*;

fn quat_strategy() -> impl Strategy<Value = Vector4<f64>> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |a| a.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|a| Vector4::new(a[0], a[1], a[2], a[3]))
}

proptest! {
    #[test]
    fn rotation_is_orthogonal_with_unit_determinant(ql in quat_strategy(), qr in quat_strategy()) {
        let m = rotation4_from_quaternions(&ql, &qr).unwrap();
        prop_assert!((m.transpose() * m - Matrix4::identity()).abs().max() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_matches_quaternion_products(ql in quat_strategy(), qr in quat_strategy()) {
        let m = rotation4_from_quaternions(&ql, &qr).unwrap();
        let oracle = rotation_by_quaternion_products(&ql, &qr);
        prop_assert!((m - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn joint_quaternion_sign_flip_is_irrelevant(ql in quat_strategy(), qr in quat_strategy()) {
        let m = rotation4_from_quaternions(&ql, &qr).unwrap();
        prop_assert!((rotation4_from_quaternions(&-ql, &-qr).unwrap() - m).abs().max() < 1e-15);
        // a single flip negates the matrix, which leaves R S Sᵀ Rᵀ unchanged
        prop_assert!((rotation4_from_quaternions(&-ql, &qr).unwrap() + m).abs().max() < 1e-15);
    }

    #[test]
    fn covariance_is_symmetric_positive_definite(
        ql in quat_strategy(), qr in quat_strategy(),
        ls in prop::array::uniform4(-3.0f64..1.0),
    ) {
        let mut g = Gaussian4D::axis_aligned(Vector4::zeros(), Vector4::repeat(1.0), 0.5, ColorCoeffs::constant([0.5; 3]));
        g.rot_left = ql;
        g.rot_right = qr;
        g.log_scale = Vector4::from(ls);
        let s = *assemble_covariance(&g).unwrap().matrix();
        prop_assert!((s - s.transpose()).abs().max() <= 1e-12);
        let eig = SymmetricEigen::new(s);
        prop_assert!(eig.eigenvalues.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn temporal_weight_decreases_away_from_the_mean(
        st in 0.05f64..2.0, a in 0.0f64..3.0, b in 0.0f64..3.0,
    ) {
        let g = Gaussian4D::axis_aligned(
            Vector4::new(0.0, 0.0, 0.0, 0.5),
            Vector4::new(0.3, 0.4, 0.5, st),
            0.5,
            ColorCoeffs::constant([0.5; 3]),
        );
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        let wn = condition_at_time(&g, 0.5 + near).unwrap().temporal_weight;
        let wf = condition_at_time(&g, 0.5 - far).unwrap().temporal_weight;
        prop_assert!(wn >= wf);
    }
}

#[test]
fn identity_quaternions_give_identity() {
    let id = Vector4::new(1.0, 0.0, 0.0, 0.0);
    assert_eq!(rotation4_from_quaternions(&id, &id).unwrap(), Matrix4::identity());
}

#[test]
fn hundred_random_rotations_are_orthogonal() {
    let mut rng = rng(7);
    for _ in 0..100 {
        let m = rotation4_from_quaternions(&random_quat(&mut rng), &random_quat(&mut rng)).unwrap();
        // explicit multiply
        let mut max_err: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..4).map(|k| m[(k, i)] * m[(k, j)]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                max_err = max_err.max((dot - want).abs());
            }
        }
        assert!(max_err < 1e-12, "orthogonality error {max_err}");
    }
}

#[test]
fn equal_quaternions_fix_a_two_plane() {
    let mut rng = rng(11);
    for _ in 0..50 {
        let q = random_quat(&mut rng);
        let m = left_matrix(&q) * right_matrix(&q);
        let svd = (m - Matrix4::identity()).svd(true, true);
        let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().cloned().zip(0..).collect();
        sv.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!(sv[0].0 < 1e-12 && sv[1].0 < 1e-12, "needs a 2D fixed space: {:?}", sv);
        assert!(sv[2].0 > 1e-6, "rotation should not be the identity");
        // fixed plane is orthogonal to the time axis and to the axis of q
        let axis = Vector4::new(q[1], q[2], q[3], 0.0).normalize();
        let v_t = svd.v_t.unwrap();
        for &(_, idx) in &sv[..2] {
            let v = v_t.row(idx).transpose();
            assert!(v[3].abs() < 1e-9);
            assert!(v.dot(&axis).abs() < 1e-9);
        }
    }
}

#[test]
fn covariance_eigenvalues_are_squared_scales() {
    let mut rng = rng(3);
    for _ in 0..50 {
        let g = random_gaussian(&mut rng, (0.1, 2.0));
        let s = *assemble_covariance(&g).unwrap().matrix();
        assert!((s - covariance_by_definition(&g)).abs().max() < 1e-12);
        let mut eig: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().cloned().collect();
        let mut want: Vec<f64> = g.scale().iter().map(|v| v * v).collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, w) in eig.iter().zip(&want) {
            assert!((e - w).abs() < 1e-9, "{e} vs {w}");
        }
    }
}

#[test]
fn conditioning_matches_grid_marginalization() {
    let mut rng = rng(5);
    for _ in 0..10 {
        let g = random_gaussian(&mut rng, (0.5, 1.0));
        let t = g.mean[3] + rng.random_range(-1.0..1.0);
        let c = condition_at_time(&g, t).unwrap();
        let sigma = covariance_by_definition(&g);
        let (mass, mean, cov) = grid_marginal(&g.mean, &sigma, t, 9.0, 0.5 / 1.5);
        let (mass0, _, _) = grid_marginal(&g.mean, &sigma, g.mean[3], 9.0, 0.5 / 1.5);
        assert!((c.mean - mean).abs().max() < 1e-6);
        assert!((c.cov - cov).abs().max() < 1e-6);
        assert!((c.temporal_weight - mass / mass0).abs() < 1e-6);
    }
}

#[test]
fn density_factors_into_spatial_conditional_and_temporal_weight() {
    let mut rng = rng(9);
    for _ in 0..200 {
        let g = random_gaussian(&mut rng, (0.2, 1.5));
        let x = Vector4::from_fn(|_, _| rng.random_range(-1.5..1.5));
        let c = condition_at_time(&g, x[3]).unwrap();
        let d = Vector3::new(x[0], x[1], x[2]) - c.mean;
        let spatial = (-0.5 * d.dot(&(c.cov.try_inverse().unwrap() * d))).exp();
        let joint = density4(&g, &x).unwrap();
        assert!((joint - spatial * c.temporal_weight).abs() < 1e-9);
    }
}

#[test]
fn degree_one_and_two_color_matches_legendre_sh() {
    let mut rng = rng(13);
    for degree in 1..=2usize {
        for _ in 0..20 {
            let mut c = ColorCoeffs::zeros(degree, 1).unwrap();
            for v in c.coeffs_mut() {
                *v = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
            }
            let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let t = rng.random_range(0.0..2.0);
            let period = 1.3;
            let theta = 2.0 * std::f64::consts::PI * t / period;
            let fourier = [1.0, theta.cos(), theta.sin()];
            let mut want = [0.5; 3];
            let mut idx = 0;
            for l in 0..=degree as i32 {
                for m in -l..=l {
                    let y = real_sh(l, m, &dir);
                    for (f, b) in fourier.iter().enumerate() {
                        let coeff = c.coeffs()[idx * 3 + f];
                        for ch in 0..3 {
                            want[ch] += coeff[ch] * y * b;
                        }
                    }
                    idx += 1;
                }
            }
            let got = eval_color_raw(&c, &dir, t, period);
            for ch in 0..3 {
                assert!((got[ch] - want[ch]).abs() < 1e-12, "{got:?} vs {want:?}");
            }
            let clamped = eval_color(&c, &dir, t, period);
            for ch in 0..3 {
                assert!((clamped[ch] - want[ch].max(0.0)).abs() < 1e-12);
                assert!(clamped[ch] >= 0.0);
            }
        }
    }
}

#[test]
fn normalize_rejects_zero() {
    assert!(normalize(&Vector4::zeros()).is_err());
}
