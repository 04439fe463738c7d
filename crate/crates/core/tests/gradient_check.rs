mod common;

use stagger4d::raster::render_with_gradients;

use common::*;

fn check_config(seed: u64) -> (usize, Vec<String>) {
    let cfg = random_grad_config(seed, 16);
    if near_temporal_cull(&cfg) {
        return (0, Vec::new());
    }
    let (_, grads) = render_with_gradients(&cfg.gaussians, &cfg.camera, cfg.t, &cfg.settings, &cfg.adjoint).unwrap();
    let mut checked = 0;
    let mut failures = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        let mut analytic = Vec::new();
        g.write_flat(&mut analytic);
        for (k, a) in analytic.iter().enumerate() {
            let n = central_difference(&cfg, i, k, 1e-4);
            checked += 1;
            if !grad_matches(*a, n, 1e-3, 1e-6) {
                failures.push(format!(
                    "seed {seed} gaussian {i} param {k}: analytic {a:.9e} numeric {n:.9e}"
                ));
            }
        }
    }
    (checked, failures)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut total = 0;
    let mut failures = Vec::new();
    for seed in 0..40 {
        let (n, f) = check_config(seed);
        total += n;
        failures.extend(f);
    }
    assert!(total > 500, "too few parameters checked: {total}");
    assert!(
        failures.is_empty(),
        "{} of {total} mismatched:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

#[test]
fn gradients_are_finite() {
    for seed in 100..120 {
        let cfg = random_grad_config(seed, 16);
        let (frame, grads) =
            render_with_gradients(&cfg.gaussians, &cfg.camera, cfg.t, &cfg.settings, &cfg.adjoint).unwrap();
        assert!(frame.is_finite());
        for g in grads {
            let mut v = Vec::new();
            g.write_flat(&mut v);
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }
}
