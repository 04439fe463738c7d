//! Compares analytic render gradients with central differences for one random scene.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagger4d::capture::CameraModel;
use stagger4d::geometry::{ColorCoeffs, Gaussian4D};
use stagger4d::raster::{render, render_with_gradients, RenderSettings};

fn loss(gs: &[Gaussian4D], cam: &CameraModel, t: f64, s: &RenderSettings, w: &[f64]) -> f64 {
    let f = render(gs, cam, t, s).expect("render");
    f.pixels.iter().zip(w).map(|(p, w)| p * w).sum()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cam = CameraModel::look_at(
        0,
        Vector3::new(0.4, 0.2, -3.5),
        Vector3::zeros(),
        Vector3::y(),
        18.0,
        16,
        16,
    );
    let settings = RenderSettings::default();
    let gs: Vec<Gaussian4D> = (0..3)
        .map(|_| {
            let mut g = Gaussian4D::axis_aligned(
                Vector4::from_fn(|_, _| rng.random_range(-0.5..0.5)),
                Vector4::from_fn(|_, _| rng.random_range(0.3..0.7)),
                rng.random_range(0.3..0.8),
                ColorCoeffs::constant([rng.random(), rng.random(), rng.random()]),
            );
            g.rot_left = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            g.rot_right = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            g
        })
        .collect();
    let t = 0.1;
    let weights: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grads) = render_with_gradients(&gs, &cam, t, &settings, &weights)?;

    let names = ["mx", "my", "mz", "mt", "sx", "sy", "sz", "st"];
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (i, g) in grads.iter().enumerate() {
        let mut analytic = Vec::new();
        g.write_flat(&mut analytic);
        let mut base = Vec::new();
        gs[i].write_params(&mut base);
        for k in 0..analytic.len() {
            let eval = |d: f64| {
                let mut p = base.clone();
                p[k] += d;
                let mut moved = gs.clone();
                moved[i].read_params(&p);
                loss(&moved, &cam, t, &settings, &weights)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            if k < names.len() {
                println!(
                    "g{i} {:>3}: analytic {:+.6e}  numeric {:+.6e}",
                    names[k], analytic[k], numeric
                );
            }
        }
    }
    println!("worst relative error over all parameters: {worst:.2e}");
    Ok(())
}
