//! Independent validation of the dispersion mapping: a 3D random walk in a
//! straight pipe with parabolic laminar flow must show axial variance
//! growing at `2 * d_eff * t`, with `d_eff` from [`taylor_aris`].
//!
//! The walker here is deliberately separate from the production particle
//! simulator: it lives in ordinary 3D geometry with wall reflection, and
//! knows nothing about the 1D loop model it validates.

use loopchan_core::channel::{taylor_aris, PhysicalChannel};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

struct PipeWalker {
    x: f64,
    y: f64,
    z: f64,
}

#[test]
fn axial_variance_growth_matches_the_dispersion_formula() {
    // Strongly dispersive setup so the enhancement dominates the molecular
    // term by two orders of magnitude: any error in the formula's structure
    // would be unmistakable.
    let pc = PhysicalChannel::new(1e-9, 1e-4, 1e-3).unwrap();
    let d_eff = taylor_aris(&pc);

    let n = 10_000usize;
    let dt = 0.02;
    let n_steps = 3000; // 60 s, six radial mixing times
    let half_steps = n_steps / 2;
    let sigma_step = (2.0 * pc.d_molecular * dt).sqrt();

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(7_777);
    // Start radially equilibrated (uniform over the cross-section) at x = 0.
    let mut walkers: Vec<PipeWalker> = (0..n)
        .map(|_| {
            let r = pc.r0 * rng.random_range(0.0f64..1.0).sqrt();
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            PipeWalker { x: 0.0, y: r * angle.cos(), z: r * angle.sin() }
        })
        .collect();

    let variance = |walkers: &[PipeWalker]| {
        let mean = walkers.iter().map(|w| w.x).sum::<f64>() / n as f64;
        walkers.iter().map(|w| (w.x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    };

    let mut var_half = 0.0;
    for step in 1..=n_steps {
        for w in walkers.iter_mut() {
            let r2 = w.y * w.y + w.z * w.z;
            let u = 2.0 * pc.v_mean * (1.0 - r2 / (pc.r0 * pc.r0));
            w.x += u * dt + sigma_step * rng.sample::<f64, _>(StandardNormal);
            w.y += sigma_step * rng.sample::<f64, _>(StandardNormal);
            w.z += sigma_step * rng.sample::<f64, _>(StandardNormal);
            // Radial reflection at the wall.
            let r = (w.y * w.y + w.z * w.z).sqrt();
            if r > pc.r0 {
                let reflected = 2.0 * pc.r0 - r;
                let ratio = reflected.max(0.0) / r;
                w.y *= ratio;
                w.z *= ratio;
            }
        }
        if step == half_steps {
            var_half = variance(&walkers);
        }
    }
    let var_full = variance(&walkers);

    // Slope of Var(x) over the second half of the run, where the transverse
    // profile has long equilibrated.
    let elapsed = (n_steps - half_steps) as f64 * dt;
    let measured_slope = (var_full - var_half) / elapsed;
    let expected_slope = 2.0 * d_eff;
    let rel = (measured_slope - expected_slope).abs() / expected_slope;
    assert!(
        rel < 0.15,
        "measured 2*d_eff {measured_slope:.4e} vs formula {expected_slope:.4e} ({:.1}% off)",
        rel * 100.0
    );
    // And the molecular coefficient alone would be two orders of magnitude
    // smaller, so the test discriminates sharply.
    assert!(measured_slope > 50.0 * 2.0 * pc.d_molecular);
}
