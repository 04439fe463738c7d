//! Degree-1 spherical harmonics crossed with a first-order temporal Fourier basis.

use nalgebra::Vector3;
use stagger4d::geometry::color::{eval_color, ColorCoeffs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 4 SH coefficients × 3 Fourier terms (1, cos, sin), SH-major
    let mut c = ColorCoeffs::zeros(1, 1)?;
    let k = |sh: usize, f: usize| c.index(sh, f);
    let (dc, red_x, blue_sin) = (k(0, 0), k(3, 0), k(0, 2));
    c.coeffs_mut()[dc] = [0.4, 0.4, 0.4];
    c.coeffs_mut()[red_x] = [0.6, 0.0, 0.0];
    c.coeffs_mut()[blue_sin] = [0.0, 0.0, 0.5];

    for (name, dir) in [("+x", Vector3::x()), ("-x", -Vector3::x()), ("+z", Vector3::z())] {
        let rgb: Vec<String> = [0.0, 0.25, 0.5]
            .iter()
            .map(|t| {
                let v = eval_color(&c, &dir, *t, 1.0);
                format!("({:.2}, {:.2}, {:.2})", v[0], v[1], v[2])
            })
            .collect();
        println!("view {name}: t=0 {} | t=0.25 {} | t=0.5 {}", rgb[0], rgb[1], rgb[2]);
    }
    Ok(())
}
