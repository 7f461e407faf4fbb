//! Property checks of the closed-loop channel analytics: normalization,
//! the image-source identity, the governing PDE, periodicity, and the peak
//! ordering.

use loopchan_core::channel::{
    equilibrium_density, gaussian_response, peak_times, taylor_aris, wrapped_response,
    ChannelParams, PhysicalChannel,
};
use proptest::prelude::*;

/// Periodic trapezoid integral of the wrapped density over one loop.
fn loop_integral(p: &ChannelParams, t: f64, n: usize) -> f64 {
    let h = p.l_eff / n as f64;
    let sum: f64 = (0..n)
        .map(|i| wrapped_response(p, i as f64 * h, t, 1e-9).unwrap())
        .sum();
    sum * h
}

#[test]
fn normalization_on_the_reference_grid() {
    // 3x3x3 grid spanning the micro-loop study ranges.
    let d_effs = [1.6666666666666667e-9, 3e-9, 5.104166666666667e-9];
    let v_effs = [2.5e-5, 5e-5, 1e-4];
    let times = [0.1, 1.0, 10.0];
    for d_eff in d_effs {
        for v_eff in v_effs {
            for t in times {
                let p = ChannelParams::new(d_eff, v_eff, 1e-3, 0.0).unwrap();
                let integral = loop_integral(&p, t, 8192);
                assert!(
                    (integral - 1.0).abs() < 1e-8,
                    "integral {integral} at d={d_eff:.2e} v={v_eff:.2e} t={t}"
                );
            }
        }
    }
}

#[test]
fn pde_residual_halves_under_grid_refinement() {
    // Finite-difference residual of dp/dt - d_eff p_xx + v_eff p_x on a
    // periodic space grid, interior time slices. Central differences are
    // second order, so each refinement level should at least halve the
    // relative residual.
    let d_eff = taylor_aris(&PhysicalChannel::new(5e-9, 1e-4, 5e-5).unwrap());
    let p = ChannelParams::new(d_eff, 5e-5, 1e-3, 0.0).unwrap();

    let residual = |nx: usize, nt: usize| -> f64 {
        let (t_lo, t_hi) = (5.0, 10.0);
        let hx = p.l_eff / nx as f64;
        let ht = (t_hi - t_lo) / nt as f64;
        let value = |ix: usize, it: usize| {
            let x = (ix % nx) as f64 * hx;
            wrapped_response(&p, x, t_lo + it as f64 * ht, 1e-12).unwrap()
        };
        let mut worst_residual = 0.0_f64;
        let mut worst_pt = 0.0_f64;
        for it in 1..nt {
            for ix in 0..nx {
                let pt = (value(ix, it + 1) - value(ix, it - 1)) / (2.0 * ht);
                let pxx = (value(ix + 1, it) - 2.0 * value(ix, it) + value(ix + nx - 1, it))
                    / (hx * hx);
                let px = (value(ix + 1, it) - value(ix + nx - 1, it)) / (2.0 * hx);
                let r = pt - p.d_eff * pxx + p.v_eff * px;
                worst_residual = worst_residual.max(r.abs());
                worst_pt = worst_pt.max(pt.abs());
            }
        }
        worst_residual / worst_pt
    };

    let r0 = residual(128, 64);
    let r1 = residual(256, 128);
    let r2 = residual(512, 256);
    assert!(r0 < 1e-3, "base-level residual {r0:.3e} exceeds 1e-3");
    assert!(r1 / r0 < 0.55, "refinement 1 ratio {:.3}", r1 / r0);
    assert!(r2 / r1 < 0.55, "refinement 2 ratio {:.3}", r2 / r1);
}

#[test]
fn periodic_boundary_values_and_slopes_agree() {
    let d_eff = taylor_aris(&PhysicalChannel::new(1.25e-9, 1e-4, 5e-5).unwrap());
    let p = ChannelParams::new(d_eff, 5e-5, 1e-3, 0.0).unwrap();
    let l = p.l_eff;
    let h = l / 2000.0;
    for t in [0.5, 2.0, 8.0, 30.0] {
        let at = |x: f64| wrapped_response(&p, x, t, 1e-12).unwrap();
        assert!(
            (at(0.0) - at(l)).abs() <= 1e-12 * at(0.0).abs().max(1.0 / l),
            "seam value mismatch at t = {t}"
        );
        // One-sided slopes across the seam differ by O(h * p_xx).
        let fwd = (at(h) - at(0.0)) / h;
        let bwd = (at(l) - at(l - h)) / h;
        let pxx = (at(h) - 2.0 * at(0.0) + at(l - h)) / (h * h);
        let allow = 2.0 * h * pxx.abs() + 1e-9 * fwd.abs().max(1.0 / l);
        assert!(
            (fwd - bwd).abs() <= allow,
            "seam slope mismatch at t = {t}: {fwd} vs {bwd} (allow {allow})"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrapped_density_is_normalized_and_nonnegative(
        d_eff in 1e-10f64..1e-6,
        v_eff in 0.0f64..1e-3,
        l_exp in -4.0f64..-2.0,
        t in 0.1f64..100.0,
    ) {
        let l_eff = 10f64.powf(l_exp);
        let p = ChannelParams::new(d_eff, v_eff, l_eff, 0.0).unwrap();
        let integral = loop_integral(&p, t, 8192);
        prop_assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
        for frac in [0.0, 0.31, 0.77] {
            prop_assert!(wrapped_response(&p, frac * l_eff, t, 1e-9).unwrap() >= 0.0);
        }
    }

    #[test]
    fn wrapped_equals_the_image_source_sum(
        d_eff in 1e-10f64..1e-6,
        v_eff in 0.0f64..1e-3,
        l_exp in -4.0f64..-2.0,
        x_frac in 0.0f64..1.0,
        t in 0.1f64..50.0,
    ) {
        let l_eff = 10f64.powf(l_exp);
        let p = ChannelParams::new(d_eff, v_eff, l_eff, 0.0).unwrap();
        let x = x_frac * l_eff;
        let wrapped = wrapped_response(&p, x, t, 1e-12).unwrap();

        // Independent summation order: shift the evaluation point through
        // every image of the loop and sum the open-tube response.
        let sigma = (2.0 * d_eff * t).sqrt();
        let half_width = (8.0 * sigma).max(l_eff);
        let center = v_eff * t;
        let k_lo = ((center - half_width - x) / l_eff).floor() as i64;
        let k_hi = ((center + half_width - x) / l_eff).ceil() as i64;
        let mut image_sum = 0.0;
        for k in k_lo..=k_hi {
            image_sum += gaussian_response(&p, x + k as f64 * l_eff, t).unwrap();
        }
        let scale = wrapped.abs().max(1.0 / l_eff);
        prop_assert!(
            (wrapped - image_sum).abs() <= 1e-9 * scale,
            "wrapped {wrapped} vs images {image_sum}"
        );
    }

    #[test]
    fn peak_times_increase_and_lead_advection(
        d_eff in 1e-10f64..1e-6,
        v_eff in 1e-6f64..1e-2,
        l_exp in -4.0f64..-1.0,
        rx_frac in 0.0f64..0.999,
    ) {
        let l_eff = 10f64.powf(l_exp);
        let p = ChannelParams::new(d_eff, v_eff, l_eff, rx_frac * l_eff).unwrap();
        let times = peak_times(&p, 5).unwrap();
        for w in times.windows(2) {
            prop_assert!(w[1].1 > w[0].1, "not strictly increasing: {times:?}");
        }
        for &(k, t_max) in &times {
            let dist = p.d_rx + f64::from(k) * l_eff;
            if dist > 0.0 {
                prop_assert!(t_max < dist / v_eff, "diffusion must advance the peak");
            } else {
                prop_assert!(t_max == 0.0);
            }
        }
    }

    #[test]
    fn dispersion_never_reduces_diffusion(
        d in 1e-11f64..1e-8,
        r0 in 1e-5f64..1e-3,
        v in 1e-7f64..1e-2,
    ) {
        let pc = PhysicalChannel::new(d, r0, v).unwrap();
        prop_assert!(taylor_aris(&pc) > d);
    }

    #[test]
    fn late_time_density_approaches_equilibrium(
        d_eff in 1e-9f64..1e-6,
        v_eff in 0.0f64..1e-3,
        x_frac in 0.0f64..1.0,
    ) {
        let p = ChannelParams::new(d_eff, v_eff, 1e-3, 0.0).unwrap();
        // Mixing time scale l^2 / d_eff, evaluated well past it.
        let t = 50.0 * p.l_eff * p.l_eff / d_eff;
        let v = wrapped_response(&p, x_frac * p.l_eff, t, 1e-9).unwrap();
        let eq = equilibrium_density(&p);
        prop_assert!((v - eq).abs() < 1e-6 * eq);
    }
}
