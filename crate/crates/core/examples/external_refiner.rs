//! Plugging an outside program in as the refiner.
//!
//! The program receives the input and output clip directories as its last two
//! arguments (and as `STAGGER4D_INPUT` / `STAGGER4D_OUTPUT`). Here a shell
//! one-liner copies the frames through unchanged; a real refiner would write
//! cleaned 16-bit PNGs with the same names.

use stagger4d::frame::VideoClip;
use stagger4d::metrics::psnr;
use stagger4d::refine::{refine, ExternalProcessFixer};
use stagger4d::scene::{render_ground_truth, FastSceneSpec, RigSpec, SceneProgram};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneProgram::fast_motion(&FastSceneSpec::default());
    let cam = &RigSpec::default().build()[2];
    let frames = (0..5)
        .map(|k| {
            let mut f = render_ground_truth(&scene, cam, 0.04 * k as f64)?;
            f.quantize16();
            f.alpha = None;
            Ok(f)
        })
        .collect::<Result<Vec<_>, stagger4d::scene::SceneError>>()?;
    let clip = VideoClip::new(cam.id, frames)?;

    let passthrough = ExternalProcessFixer::new(
        "sh",
        vec![
            "-c".into(),
            r#"echo "refining $STAGGER4D_INPUT" >&2; cp "$0"/*.png "$1"/"#.into(),
        ],
    );
    let out = refine(&passthrough, &clip)?;
    for (a, b) in out.frames.iter().zip(&clip.frames) {
        println!("t={:.2}: {:.1} dB", a.timestamp, psnr(a, b, 1.0)?);
    }

    let broken = ExternalProcessFixer::new("false", Vec::new());
    match refine(&broken, &clip) {
        Ok(_) => println!("unexpected success"),
        Err(e) => println!("failing refiner reported: {e}"),
    }
    Ok(())
}
