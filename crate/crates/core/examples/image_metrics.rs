//! PSNR, SSIM and the MS-SSIM distance of a rendered view under growing noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagger4d::metrics::{ms_ssim_distance, psnr, ssim};
use stagger4d::scene::{render_ground_truth, FastSceneSpec, RigSpec, SceneProgram};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneProgram::fast_motion(&FastSceneSpec::default());
    let cam = &RigSpec::default().build()[0];
    let clean = render_ground_truth(&scene, cam, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("{:>6}  {:>8}  {:>6}  {:>9}", "noise", "PSNR", "SSIM", "MS-SSIM-d");
    for amp in [0.0, 0.01, 0.03, 0.1, 0.3] {
        let mut noisy = clean.clone();
        if amp > 0.0 {
            noisy
                .pixels
                .iter_mut()
                .for_each(|p| *p = (*p + rng.random_range(-amp..amp)).clamp(0.0, 1.0));
        }
        let d = ms_ssim_distance(&clean, &noisy)?;
        println!(
            "{amp:>6.2}  {:>8.3}  {:>6.4}  {:>9.5}",
            psnr(&clean, &noisy, 1.0)?,
            ssim(&clean, &noisy)?,
            d.distance
        );
    }
    Ok(())
}
