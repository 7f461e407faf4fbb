//! Fit behavior on synthetic traces: round trips, equivariance,
//! determinism, bound handling, and the residual report.

use loopchan_core::channel::{taylor_aris, ChannelParams, PhysicalChannel};
use loopchan_core::error::Error;
use loopchan_core::estimation::{
    fit_channel, residual_report, BoundStatus, FitParams, FitProblem,
};
use loopchan_core::injection::InjectionProfile;
use loopchan_core::response::{predict, ForwardModel};
use loopchan_core::trace::{TimeGrid, Trace};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

fn truth() -> FitParams {
    let d_eff = taylor_aris(&PhysicalChannel::new(5e-9, 1e-4, 5e-5).unwrap());
    FitParams {
        channel: ChannelParams::new(d_eff, 5e-5, 1e-3, 0.39e-3).unwrap(),
        scale: 2.0,
    }
}

fn synthetic_trace(params: &FitParams, injection: &InjectionProfile, dt: f64, t_end: f64) -> Trace {
    let model = ForwardModel {
        channel: params.channel,
        injection: *injection,
        scale: params.scale,
    };
    let grid = TimeGrid::from_span(dt, t_end).unwrap();
    predict(&model, &grid).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn noiseless_truth_init_recovers_all_parameters() {
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let measured = synthetic_trace(&truth, &injection, 0.05, 60.0);
    let mut prob = FitProblem::new(measured, injection);
    prob.init = Some(truth);
    prob.n_starts = 1;
    let res = fit_channel(&prob).unwrap();
    assert!(res.converged);
    assert!(rel_err(res.params.channel.d_eff, truth.channel.d_eff) < 0.01);
    assert!(rel_err(res.params.channel.v_eff, truth.channel.v_eff) < 0.01);
    assert!(rel_err(res.params.channel.l_eff, truth.channel.l_eff) < 0.01);
    assert!(rel_err(res.params.channel.d_rx, truth.channel.d_rx) < 0.01);
    assert!(rel_err(res.params.scale, truth.scale) < 0.01);
    assert!(res.residual_rms < 1e-9);
}

#[test]
fn multi_start_recovers_velocity_under_noise() {
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let clean = synthetic_trace(&truth, &injection, 0.05, 60.0);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let noisy: Vec<f64> = clean
        .values()
        .iter()
        .map(|&v| v * (1.0 + 0.02 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let measured = Trace::new(*clean.grid(), noisy, "au").unwrap();
    let mut prob = FitProblem::new(measured, injection);
    prob.n_starts = 16;
    prob.seed = 11;
    prob.smooth_window = 9;
    let res = fit_channel(&prob).unwrap();
    assert!(
        rel_err(res.params.channel.v_eff, truth.channel.v_eff) < 0.10,
        "v_eff {:.3e} vs {:.3e}",
        res.params.channel.v_eff,
        truth.channel.v_eff
    );
}

#[test]
fn fit_is_scale_equivariant() {
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let measured = synthetic_trace(&truth, &injection, 0.1, 60.0);
    let mut prob = FitProblem::new(measured.clone(), injection);
    prob.n_starts = 4;
    prob.seed = 21;
    let base = fit_channel(&prob).unwrap();

    let c = 7.25;
    let scaled_values: Vec<f64> = measured.values().iter().map(|v| c * v).collect();
    prob.measured = Trace::new(*measured.grid(), scaled_values, "au").unwrap();
    let scaled = fit_channel(&prob).unwrap();

    assert!(rel_err(scaled.params.scale, c * base.params.scale) < 1e-4);
    assert!(rel_err(scaled.params.channel.d_eff, base.params.channel.d_eff) < 1e-4);
    assert!(rel_err(scaled.params.channel.v_eff, base.params.channel.v_eff) < 1e-4);
    assert!(rel_err(scaled.params.channel.l_eff, base.params.channel.l_eff) < 1e-4);
    assert!(rel_err(scaled.params.channel.d_rx, base.params.channel.d_rx) < 1e-4);
}

#[test]
fn fit_is_deterministic_given_the_seed() {
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let measured = synthetic_trace(&truth, &injection, 0.1, 60.0);
    let mut prob = FitProblem::new(measured, injection);
    prob.n_starts = 6;
    prob.seed = 33;
    let a = fit_channel(&prob).unwrap();
    let b = fit_channel(&prob).unwrap();
    assert_eq!(a, b);
}

#[test]
fn results_respect_the_bounds_and_report_the_gauge() {
    // Loop-length bounds placed above the generating scale: the similarity
    // family still reaches a perfect fit inside the box, and the canonical
    // representative must sit exactly on the loop-length lower bound with
    // all other parameters rescaled consistently.
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let measured = synthetic_trace(&truth, &injection, 0.05, 60.0);
    let mut prob = FitProblem::new(measured, injection);
    prob.bounds.l_eff = [5e-3, 1.0]; // five times the generating loop
    let alpha = 5.0;
    prob.init = Some(FitParams {
        channel: ChannelParams::new(
            alpha * alpha * truth.channel.d_eff,
            alpha * truth.channel.v_eff,
            alpha * truth.channel.l_eff,
            alpha * truth.channel.d_rx,
        )
        .unwrap(),
        scale: alpha * truth.scale,
    });
    prob.n_starts = 1;
    let res = fit_channel(&prob).unwrap();
    let b = prob.bounds;
    let p = res.params;
    assert!(p.channel.v_eff >= b.v_eff[0] && p.channel.v_eff <= b.v_eff[1]);
    assert!(p.channel.d_eff >= b.d_eff[0] && p.channel.d_eff <= b.d_eff[1]);
    assert!(p.channel.l_eff >= b.l_eff[0] && p.channel.l_eff <= b.l_eff[1]);
    assert!(p.channel.d_rx < p.channel.l_eff);
    assert_eq!(res.bounds_status.l_eff, BoundStatus::AtLower);
    // Canonical gauge: l at its lower bound, v and d rescaled with it.
    assert!(rel_err(p.channel.l_eff, 5e-3) < 1e-9);
    assert!(rel_err(p.channel.v_eff, 5.0 * truth.channel.v_eff) < 0.01);
    assert!(rel_err(p.channel.d_eff, 25.0 * truth.channel.d_eff) < 0.01);
    assert!(rel_err(p.channel.d_rx / p.channel.l_eff, 0.39) < 0.01);
}

#[test]
fn all_zero_derivative_is_a_data_error() {
    let grid = TimeGrid::from_span(0.1, 30.0).unwrap();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let flat = Trace::new(grid, vec![3.0; grid.len()], "au").unwrap();
    let prob = FitProblem::new(flat, injection);
    assert!(matches!(fit_channel(&prob), Err(Error::Data(_))));
}

#[test]
fn pure_noise_is_refused_by_the_mad_rule() {
    let grid = TimeGrid::from_span(0.1, 30.0).unwrap();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
    let values: Vec<f64> = (0..grid.len())
        .map(|_| 5.0 + 0.01 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let noise = Trace::new(grid, values, "au").unwrap();
    let prob = FitProblem::new(noise, injection);
    assert!(matches!(fit_channel(&prob), Err(Error::Data(_))));
}

#[test]
fn short_trace_is_a_data_error() {
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    // Spans less than 2 * tw.
    let measured = synthetic_trace(&truth, &injection, 0.05, 8.0);
    let prob = FitProblem::new(measured, injection);
    assert!(matches!(fit_channel(&prob), Err(Error::Data(_))));
}

#[test]
fn exhausted_optimizer_reports_per_start_diagnostics() {
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let clean = synthetic_trace(&truth, &injection, 0.1, 60.0);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
    let noisy: Vec<f64> = clean
        .values()
        .iter()
        .map(|&v| v * (1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut prob = FitProblem::new(Trace::new(*clean.grid(), noisy, "au").unwrap(), injection);
    prob.n_starts = 3;
    prob.max_iter = 0; // no iterations allowed: nothing can converge
    match fit_channel(&prob) {
        Err(Error::Convergence { diagnostics, .. }) => {
            assert_eq!(diagnostics.len(), 3);
            assert!(diagnostics.iter().all(|d| !d.converged));
        }
        other => panic!("expected convergence error, got {other:?}"),
    }
}

#[test]
fn perfect_fit_has_vanishing_residuals() {
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let measured = synthetic_trace(&truth, &injection, 0.05, 60.0);
    let mut prob = FitProblem::new(measured, injection);
    prob.init = Some(truth);
    prob.n_starts = 1;
    let res = fit_channel(&prob).unwrap();
    let report = residual_report(&res, &prob).unwrap();
    let peak = prob.measured.values().iter().cloned().fold(0.0_f64, f64::max);
    assert!(report.intensity_summary.max_abs < 1e-6 * peak);
    assert!(report.derivative_summary.max_abs < 1e-6 * peak);
}

#[test]
fn late_decay_localizes_the_residual_after_equilibration() {
    // The forward model holds the equilibrium level; multiply the synthetic
    // intensity by an exponential decay from t = 10 s onward and the
    // largest intensity residual must fall in the decay region.
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let clean = synthetic_trace(&truth, &injection, 0.05, 60.0);
    let decayed: Vec<f64> = clean
        .iter()
        .map(|(t, v)| if t > 10.0 { v * (-(t - 10.0) / 30.0).exp() } else { v })
        .collect();
    let measured = Trace::new(*clean.grid(), decayed, "au").unwrap();
    let mut prob = FitProblem::new(measured, injection);
    prob.init = Some(truth);
    prob.n_starts = 4;
    prob.seed = 7;
    let res = fit_channel(&prob).unwrap();
    let report = residual_report(&res, &prob).unwrap();
    assert!(
        report.intensity_summary.t_at_max > 10.0,
        "residual peak at t = {} should sit in the decay region",
        report.intensity_summary.t_at_max
    );
}

#[test]
fn wrong_loop_length_leaves_structured_peak_residuals() {
    let truth = truth();
    let injection = InjectionProfile::new(1.0, 5.0, 1.0).unwrap();
    let measured = synthetic_trace(&truth, &injection, 0.05, 60.0);
    let mut wrong = truth;
    wrong.channel.l_eff *= 2.0;
    wrong.channel.d_rx = truth.channel.d_rx; // same receiver distance
    let prob = FitProblem::new(measured, injection);
    // Evaluate the mismatched model without optimizing: build a result
    // around it directly and inspect its residual structure.
    let res = loopchan_core::estimation::FitResult {
        params: wrong,
        residual_rms: f64::NAN,
        n_iter: 0,
        converged: false,
        start_index: 0,
        bounds_status: loopchan_core::estimation::BoundsStatus {
            d_eff: BoundStatus::Interior,
            v_eff: BoundStatus::Interior,
            l_eff: BoundStatus::Interior,
            fraction: BoundStatus::Interior,
            scale: BoundStatus::Interior,
        },
        starts: vec![],
    };
    let report = residual_report(&res, &prob).unwrap();
    // The halved equilibrium level and shifted recirculation peaks leave a
    // large structured residual during the peak/mixing phase.
    let peak = prob.measured.values().iter().cloned().fold(0.0_f64, f64::max);
    assert!(report.intensity_summary.max_abs > 0.2 * peak);
}
