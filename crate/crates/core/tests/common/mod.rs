//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stagger4d::capture::CameraModel;
use stagger4d::geometry::{ColorCoeffs, Gaussian4D};
use stagger4d::raster::{self, RenderSettings};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_quat(rng: &mut impl Rng) -> Vector4<f64> {
    loop {
        let q = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n: f64 = q.norm();
        if n > 0.2 && n <= 1.0 {
            return q / n;
        }
    }
}

/// Random Gaussian with scales in `scale_range` and random rotations.
pub fn random_gaussian(rng: &mut impl Rng, scale_range: (f64, f64)) -> Gaussian4D {
    let mut g = Gaussian4D::axis_aligned(
        Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        Vector4::from_fn(|_, _| rng.random_range(scale_range.0..scale_range.1)),
        rng.random_range(0.1..0.9),
        ColorCoeffs::constant([0.5; 3]),
    );
    g.rot_left = random_quat(rng);
    g.rot_right = random_quat(rng);
    g
}

/// 4×4 covariance straight from the definition, with explicit quaternion products.
pub fn covariance_by_definition(g: &Gaussian4D) -> Matrix4<f64> {
    let r = rotation_by_quaternion_products(&g.rot_left, &g.rot_right);
    let s = Matrix4::from_diagonal(&g.log_scale.map(f64::exp));
    r * s * s.transpose() * r.transpose()
}

fn hamilton(p: &Vector4<f64>, q: &Vector4<f64>) -> Vector4<f64> {
    let (a, b, c, d) = (p[0], p[1], p[2], p[3]);
    let (e, f, g, h) = (q[0], q[1], q[2], q[3]);
    Vector4::new(
        a * e - b * f - c * g - d * h,
        a * f + b * e + c * h - d * g,
        a * g - b * h + c * e + d * f,
        a * h + b * g - c * f + d * e,
    )
}

/// Columns are images of the basis vectors of `(x, y, z, t) ↔ t + xi + yj + zk` under `p ↦ q_l p q_r`.
pub fn rotation_by_quaternion_products(ql: &Vector4<f64>, qr: &Vector4<f64>) -> Matrix4<f64> {
    let ql = ql / ql.norm();
    let qr = qr / qr.norm();
    let mut m = Matrix4::zeros();
    for col in 0..4 {
        // coordinate col -> quaternion (w,x,y,z)
        let mut p = Vector4::zeros();
        if col == 3 {
            p[0] = 1.0;
        } else {
            p[col + 1] = 1.0;
        }
        let out = hamilton(&hamilton(&ql, &p), &qr);
        m[(0, col)] = out[1];
        m[(1, col)] = out[2];
        m[(2, col)] = out[3];
        m[(3, col)] = out[0];
    }
    m
}

/// Spatial moments of `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))` at fixed `t`, by brute-force grid summation.
///
/// Returns `(mass, mean, covariance)`.
pub fn grid_marginal(
    mean: &Vector4<f64>,
    sigma: &Matrix4<f64>,
    t: f64,
    half_width: f64,
    step: f64,
) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let inv = sigma.try_inverse().expect("invertible");
    let n = (half_width / step).ceil() as i64;
    let mut mass = 0.0;
    let mut first = Vector3::zeros();
    let mut second = Matrix3::zeros();
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                let x = Vector4::new(
                    mean[0] + i as f64 * step,
                    mean[1] + j as f64 * step,
                    mean[2] + k as f64 * step,
                    t,
                );
                let d = x - mean;
                let p = (-0.5 * d.dot(&(inv * d))).exp();
                let s = Vector3::new(x[0], x[1], x[2]);
                mass += p;
                first += s * p;
                second += s * s.transpose() * p;
            }
        }
    }
    let m = first / mass;
    let cov = second / mass - m * m.transpose();
    (mass, m, cov)
}

/// Associated Legendre `P_l^m(x)` with the Condon-Shortley phase, by the standard recurrences.
pub fn assoc_legendre(l: i32, m: i32, x: f64) -> f64 {
    let mut pmm = 1.0;
    if m > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

fn factorial(n: i32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Real spherical harmonic `Y_l^m` from polar angles.
pub fn real_sh(l: i32, m: i32, dir: &Vector3<f64>) -> f64 {
    let theta = dir.z.clamp(-1.0, 1.0).acos();
    let phi = dir.y.atan2(dir.x);
    let k = |m: i32| (((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)) * factorial(l - m) / factorial(l + m)).sqrt();
    let am = m.abs();
    let p = assoc_legendre(l, am, theta.cos());
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => k(0) * p,
        std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * k(am) * p * (am as f64 * phi).cos(),
        std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * k(am) * p * (am as f64 * phi).sin(),
    }
}

/// Small random rendering configuration for gradient checks.
pub struct GradConfig {
    pub gaussians: Vec<Gaussian4D>,
    pub camera: CameraModel,
    pub t: f64,
    pub settings: RenderSettings,
    pub adjoint: Vec<f64>,
}

pub fn random_grad_config(seed: u64, size: u32) -> GradConfig {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=5);
    let sh_degree = rng.random_range(0..=2usize);
    let fourier = rng.random_range(0..=1usize);
    let gaussians: Vec<Gaussian4D> = (0..n)
        .map(|_| {
            let mut color = ColorCoeffs::zeros(sh_degree, fourier).unwrap();
            let base: [f64; 3] = [
                rng.random_range(0.25..0.75),
                rng.random_range(0.25..0.75),
                rng.random_range(0.25..0.75),
            ];
            for (i, c) in color.coeffs_mut().iter_mut().enumerate() {
                if i == 0 {
                    *c = base.map(|v| (v - 0.5) / 0.282_094_791_773_878_14);
                } else {
                    *c = [
                        rng.random_range(-0.08..0.08),
                        rng.random_range(-0.08..0.08),
                        rng.random_range(-0.08..0.08),
                    ];
                }
            }
            let mut g = Gaussian4D::axis_aligned(
                Vector4::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.0..1.0),
                ),
                Vector4::new(
                    rng.random_range(0.12..0.35),
                    rng.random_range(0.12..0.35),
                    rng.random_range(0.12..0.35),
                    rng.random_range(0.25..0.8),
                ),
                rng.random_range(0.05..0.8),
                color,
            );
            g.rot_left = random_quat(&mut rng) * rng.random_range(0.5..2.0);
            g.rot_right = random_quat(&mut rng) * rng.random_range(0.5..2.0);
            g
        })
        .collect();
    let az = rng.random_range(0.0..std::f64::consts::TAU);
    let el = rng.random_range(-0.5..0.5f64);
    let dist = rng.random_range(3.0..4.5);
    let eye = Vector3::new(dist * el.cos() * az.cos(), dist * el.sin(), dist * el.cos() * az.sin());
    let camera = CameraModel::look_at(
        0,
        eye,
        Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        rng.random_range(14.0..22.0),
        size,
        size,
    );
    let adjoint = (0..3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    GradConfig {
        gaussians,
        camera,
        t: rng.random_range(0.0..1.0),
        settings: RenderSettings {
            background: [
                rng.random_range(0.0..0.5),
                rng.random_range(0.0..0.5),
                rng.random_range(0.0..0.5),
            ],
            t_period: 1.0,
        },
        adjoint,
    }
}

pub fn scalar_loss(cfg: &GradConfig, gaussians: &[Gaussian4D]) -> f64 {
    let f = raster::render(gaussians, &cfg.camera, cfg.t, &cfg.settings).unwrap();
    f.pixels.iter().zip(&cfg.adjoint).map(|(p, a)| p * a).sum()
}

/// Central finite difference of `scalar_loss` for parameter `k` of gaussian `i`.
pub fn central_difference(cfg: &GradConfig, i: usize, k: usize, h: f64) -> f64 {
    let mut plus = cfg.gaussians.clone();
    let mut minus = cfg.gaussians.clone();
    let mut p = Vec::new();
    cfg.gaussians[i].write_params(&mut p);
    let mut pp = p.clone();
    pp[k] += h;
    plus[i].read_params(&pp);
    let mut pm = p;
    pm[k] -= h;
    minus[i].read_params(&pm);
    (scalar_loss(cfg, &plus) - scalar_loss(cfg, &minus)) / (2.0 * h)
}

pub fn grad_matches(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

/// Whether any primitive sits so close to the temporal culling threshold that
/// a finite-difference step could cross it (the image is discontinuous there).
pub fn near_temporal_cull(cfg: &GradConfig) -> bool {
    cfg.gaussians.iter().any(|g| {
        stagger4d::geometry::condition_at_time(g, cfg.t)
            .map(|c| {
                let ratio = c.temporal_weight / raster::MIN_TEMPORAL_WEIGHT;
                (ratio - 1.0).abs() < 1e-2
            })
            .unwrap_or(true)
    })
}

/// Scaled-down desk rig: same geometry, `size`² pixels.
pub fn small_rig(size: u32) -> stagger4d::scene::RigSpec {
    stagger4d::scene::RigSpec {
        width: size,
        height: size,
        focal: 70.0 * size as f64 / 64.0,
        ..stagger4d::scene::RigSpec::default()
    }
}

pub fn small_scene() -> stagger4d::scene::SceneProgram {
    stagger4d::scene::SceneProgram::fast_motion(&stagger4d::scene::FastSceneSpec {
        static_count: 30,
        fast_count: 3,
        ..stagger4d::scene::FastSceneSpec::default()
    })
}

/// Eight-camera rig captured in `groups` staggered groups at 25 FPS per camera.
pub fn small_dataset(
    scene: &stagger4d::scene::SceneProgram,
    size: u32,
    groups: usize,
    frames: usize,
) -> stagger4d::scene::Dataset {
    let rig = small_rig(size);
    let s = stagger4d::capture::make_schedule(rig.cameras, groups, num_rational::Ratio::new(1, 25), frames).unwrap();
    stagger4d::scene::build_dataset(scene, &rig.build(), &s, &rig.heldout_ids()).unwrap()
}

/// A scene holding one motionless blob.
pub fn single_blob_scene(duration: f64) -> stagger4d::scene::SceneProgram {
    stagger4d::scene::SceneProgram {
        primitives: vec![stagger4d::scene::ScenePrimitive {
            mean: [0.0, 0.0, 0.0],
            scale: [0.3, 0.2, 0.25],
            rotation: [1.0, 0.0, 0.0, 0.0],
            color: [0.9, 0.4, 0.2],
            opacity: 0.9,
            trajectory: stagger4d::scene::Trajectory::Constant,
        }],
        duration,
        background: [0.0; 3],
    }
}
