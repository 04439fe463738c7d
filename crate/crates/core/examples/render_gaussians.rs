//! Renders a handful of 4D Gaussians at several times and writes PNGs.
//!
//! A primitive tilted in (x, t) drifts sideways as time advances; one with a
//! short temporal scale flashes in and out.

use nalgebra::{Vector3, Vector4};
use stagger4d::capture::CameraModel;
use stagger4d::frame::write_png16;
use stagger4d::geometry::{ColorCoeffs, Gaussian4D};
use stagger4d::raster::{render, RenderSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cam = CameraModel::look_at(
        0,
        Vector3::new(0.0, 0.3, -4.0),
        Vector3::zeros(),
        Vector3::y(),
        90.0,
        96,
        96,
    );
    let mut drifting = Gaussian4D::axis_aligned(
        Vector4::new(0.0, 0.0, 0.0, 0.5),
        Vector4::new(0.9, 0.25, 0.25, 0.06),
        0.9,
        ColorCoeffs::constant([0.9, 0.3, 0.1]),
    );
    // equal left and right quaternions about i rotate the (t, x) plane by twice the half-angle
    let a = 0.6f64;
    drifting.rot_left = Vector4::new(a.cos(), a.sin(), 0.0, 0.0);
    drifting.rot_right = drifting.rot_left;
    let flash = Gaussian4D::axis_aligned(
        Vector4::new(0.0, 0.8, 0.5, 0.5),
        Vector4::new(0.3, 0.3, 0.3, 0.08),
        0.95,
        ColorCoeffs::constant([0.2, 0.6, 1.0]),
    );
    let floor = Gaussian4D::axis_aligned(
        Vector4::new(0.0, -0.8, 0.0, 0.5),
        Vector4::new(1.5, 0.05, 1.5, 10.0),
        0.8,
        ColorCoeffs::constant([0.4, 0.4, 0.4]),
    );
    let scene = [drifting, flash, floor];
    let settings = RenderSettings {
        background: [0.05; 3],
        t_period: 1.0,
    };
    let dir = std::env::temp_dir().join("stagger4d_render");
    std::fs::create_dir_all(&dir)?;
    for k in 0..5 {
        let t = 0.3 + 0.1 * k as f64;
        let f = render(&scene, &cam, t, &settings)?;
        let coverage = f
            .alpha
            .as_ref()
            .map(|a| a.iter().sum::<f64>() / a.len() as f64)
            .unwrap_or(0.0);
        let path = dir.join(format!("t{k}.png"));
        write_png16(&f, &path)?;
        println!("t={t:.2}: mean coverage {coverage:.3} -> {}", path.display());
    }
    Ok(())
}
