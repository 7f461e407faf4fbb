//! Nonlinear least-squares estimation of the channel parameters (and the
//! intensity scale) from a measured receiver trace.
//!
//! The fit matches the time derivative of the predicted intensity to the
//! smoothed finite-difference derivative of the measurement, since the
//! initial rise carries most of the parameter information once the loop
//! has mixed. To keep the comparison operator-consistent, the predicted
//! intensity is pushed through the same smoothing/differencing pipeline as
//! the measurement; a noiseless synthetic trace therefore has an exact
//! zero-residual minimum at the generating parameters.
//!
//! Parameters are optimized in transformed coordinates
//! `[ln d_eff, v_eff, ln l_eff, fraction, ln scale]` with
//! `d_rx = fraction * l_eff`, which enforces positivity, keeps the
//! receiver on the loop, and levels the orders of magnitude the physical
//! parameters span. Multiple Latin-hypercube starts guard against the
//! multi-modality of the derivative objective.

mod lm;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::injection::InjectionProfile;
use crate::response::{predict_unchecked, ForwardModel};
use crate::trace::{moving_average_symmetric, TimeGrid, Trace};

use lm::{minimize, LmOptions};

/// Number of transformed fit parameters.
const DIM: usize = 5;

/// Per-parameter search box in natural units.
///
/// `fraction` is the receiver position as a fraction of the loop length,
/// so `d_rx < l_eff` holds for every point in the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    /// Effective diffusion coefficient [m^2/s].
    pub d_eff: [f64; 2],
    /// Effective velocity [m/s].
    pub v_eff: [f64; 2],
    /// Loop length [m].
    pub l_eff: [f64; 2],
    /// Receiver position fraction of the loop, in [0, 1).
    pub fraction: [f64; 2],
    /// Intensity scale [au * m].
    pub scale: [f64; 2],
}

impl Default for FitBounds {
    fn default() -> Self {
        FitBounds {
            d_eff: [1e-10, 1e-4],
            v_eff: [1e-6, 1e-2],
            l_eff: [1e-3, 1.0],
            fraction: [0.0, 1.0 - 1e-6],
            scale: [1e-12, 1e12],
        }
    }
}

impl FitBounds {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("d_eff", self.d_eff, true),
            ("v_eff", self.v_eff, true),
            ("l_eff", self.l_eff, true),
            ("fraction", self.fraction, false),
            ("scale", self.scale, true),
        ];
        for (name, [lo, hi], must_be_positive) in pairs {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::parameter(format!("{name} bounds must satisfy lo < hi")));
            }
            if must_be_positive && !(lo > 0.0) {
                return Err(Error::parameter(format!("{name} lower bound must be > 0")));
            }
        }
        if self.fraction[0] < 0.0 || self.fraction[1] >= 1.0 + 1e-12 {
            return Err(Error::parameter("fraction bounds must lie within [0, 1)"));
        }
        Ok(())
    }

    fn transformed(&self) -> (DVector<f64>, DVector<f64>) {
        let lo = DVector::from_vec(vec![
            self.d_eff[0].ln(),
            self.v_eff[0],
            self.l_eff[0].ln(),
            self.fraction[0],
            self.scale[0].ln(),
        ]);
        let hi = DVector::from_vec(vec![
            self.d_eff[1].ln(),
            self.v_eff[1],
            self.l_eff[1].ln(),
            self.fraction[1],
            self.scale[1].ln(),
        ]);
        (lo, hi)
    }
}

/// Estimated channel parameters plus the intensity scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub channel: ChannelParams,
    pub scale: f64,
}

impl FitParams {
    fn to_theta(self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.channel.d_eff.ln(),
            self.channel.v_eff,
            self.channel.l_eff.ln(),
            self.channel.d_rx / self.channel.l_eff,
            self.scale.ln(),
        ])
    }

    fn from_theta(theta: &DVector<f64>) -> Self {
        let l_eff = theta[2].exp();
        FitParams {
            channel: ChannelParams {
                d_eff: theta[0].exp(),
                v_eff: theta[1],
                l_eff,
                d_rx: theta[3] * l_eff,
            },
            scale: theta[4].exp(),
        }
    }
}

/// Where a fitted parameter ended up relative to its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Interior,
    AtLower,
    AtUpper,
}

/// Per-parameter bound status of a fit result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundsStatus {
    pub d_eff: BoundStatus,
    pub v_eff: BoundStatus,
    pub l_eff: BoundStatus,
    pub fraction: BoundStatus,
    pub scale: BoundStatus,
}

/// Outcome of one local solve, reported per start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartDiagnostic {
    pub start_index: usize,
    pub objective: f64,
    pub n_iter: usize,
    pub converged: bool,
}

/// A channel-estimation problem: the measured trace, the injection model,
/// and the optimizer configuration.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub measured: Trace,
    pub injection: InjectionProfile,
    pub bounds: FitBounds,
    /// Optional initial guess, used in place of the first sampled start.
    pub init: Option<FitParams>,
    /// Number of local solves (Latin-hypercube starts).
    pub n_starts: usize,
    /// Seed for start sampling; fixes the whole fit deterministically.
    pub seed: u64,
    /// Moving-average window for derivative estimation, in samples.
    pub smooth_window: usize,
    /// Iteration cap per local solve.
    pub max_iter: usize,
}

impl FitProblem {
    pub fn new(measured: Trace, injection: InjectionProfile) -> Self {
        FitProblem {
            measured,
            injection,
            bounds: FitBounds::default(),
            init: None,
            n_starts: 16,
            seed: 0,
            smooth_window: crate::injection::DEFAULT_SMOOTH_WINDOW,
            max_iter: 60,
        }
    }
}

/// Result of [`fit_channel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    /// Root-mean-square residual on the derivative target.
    pub residual_rms: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Index of the winning start.
    pub start_index: usize,
    pub bounds_status: BoundsStatus,
    /// Per-start convergence diagnostics.
    #[serde(default)]
    pub starts: Vec<StartDiagnostic>,
}

/// Smoothed central-difference derivative of a trace.
///
/// Applies a centered moving average of `smooth_window` samples, then
/// central differences; the result lives on the input grid minus its two
/// endpoints. The symmetric window truncation preserves linear signals
/// exactly.
pub fn differentiate(meas: &Trace, smooth_window: usize) -> Result<Trace> {
    let n = meas.len();
    if n < (2 * smooth_window.max(1)).max(3) {
        return Err(Error::data(format!(
            "trace of {n} samples is too short to differentiate with window {smooth_window}"
        )));
    }
    let smoothed = moving_average_symmetric(meas.values(), smooth_window);
    let dt = meas.dt();
    let deriv: Vec<f64> = (1..n - 1)
        .map(|i| (smoothed[i + 1] - smoothed[i - 1]) / (2.0 * dt))
        .collect();
    let grid = TimeGrid::new(meas.time(1), dt, n - 2)?;
    Trace::new(grid, deriv, format!("{}/s", meas.unit_label()))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Latin-hypercube sample of `n` points in the transformed box.
fn latin_hypercube(
    n: usize,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    rng: &mut Xoshiro256PlusPlus,
) -> Vec<DVector<f64>> {
    let strata: Vec<Vec<usize>> = (0..DIM)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order
        })
        .collect();
    // Jitter within each stratum.
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let mut theta = DVector::zeros(DIM);
        for d in 0..DIM {
            let u: f64 = rng.random_range(0.0..1.0);
            let coord = (strata[d][k] as f64 + u) / n as f64;
            theta[d] = lo[d] + coord * (hi[d] - lo[d]);
        }
        points.push(theta);
    }
    points
}

/// Slide a parameter set along the exact similarity family of the model.
///
/// The forward model is invariant under
/// `(d_eff, v_eff, l_eff, d_rx, scale) -> (a^2 d_eff, a v_eff, a l_eff,
/// a d_rx, a scale)` for any `a > 0`: stretching all lengths while keeping
/// the receiver fraction fixed leaves the predicted intensity unchanged.
/// A single receiver trace therefore determines the parameters only up to
/// this family. The canonical representative returned here is the smallest
/// one admitted by the lower bounds.
fn canonicalize_similarity(params: &mut FitParams, bounds: &FitBounds) {
    let c = &mut params.channel;
    let beta = (bounds.d_eff[0] / c.d_eff)
        .max(0.0)
        .sqrt()
        .max(bounds.v_eff[0] / c.v_eff)
        .max(bounds.l_eff[0] / c.l_eff)
        .max(bounds.scale[0] / params.scale);
    if beta.is_finite() && beta > 0.0 && beta < 1.0 {
        c.d_eff *= beta * beta;
        c.v_eff *= beta;
        c.l_eff *= beta;
        c.d_rx *= beta;
        params.scale *= beta;
    }
}

/// Fit `[d_eff, v_eff, l_eff, d_rx, scale]` to a measured intensity trace.
///
/// Runs `n_starts` bounded Levenberg-Marquardt solves from Latin-hypercube
/// starts (the first start is replaced by `init` when provided; each
/// sampled start's scale coordinate is seeded by a linear least-squares
/// projection). The best converged solve wins, ties broken by start index.
/// Deterministic given `seed`; starts may run in parallel.
///
/// A single trace identifies the parameters only up to the similarity
/// family described at [`canonicalize_similarity`]; the result is reported
/// in the canonical minimal gauge, i.e. with the loop as small as the
/// lower bounds allow. Ratios such as `l_eff / v_eff` (loop period) and
/// `l_eff^2 / d_eff` (mixing time), the fraction `d_rx / l_eff`, and the
/// predicted trace itself are gauge-independent.
pub fn fit_channel(prob: &FitProblem) -> Result<FitResult> {
    prob.injection.validate()?;
    prob.bounds.validate()?;
    if prob.n_starts < 1 {
        return Err(Error::parameter("n_starts must be >= 1"));
    }
    let span = prob.measured.grid().end() - prob.measured.t0();
    if span < 2.0 * prob.injection.tw {
        return Err(Error::data(format!(
            "measured trace spans {span:.3} s but must cover at least twice the injection \
             duration ({:.3} s) to expose the initial rise",
            2.0 * prob.injection.tw
        )));
    }

    let target = differentiate(&prob.measured, prob.smooth_window)?;
    let y = target.values();
    let max_abs = y.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if max_abs == 0.0 {
        return Err(Error::data("derivative of the measured trace is identically zero"));
    }
    // Degenerate-data rule: refuse traces whose derivative never clears
    // 3x the MAD noise floor.
    let med = median(&mut y.to_vec());
    let mut deviations: Vec<f64> = y.iter().map(|v| (v - med).abs()).collect();
    let noise_floor = 1.4826 * median(&mut deviations);
    if noise_floor > 0.0 && max_abs <= 3.0 * noise_floor {
        return Err(Error::data(format!(
            "measured derivative (max {max_abs:.3e}) never exceeds 3x its noise floor \
             ({noise_floor:.3e}); nothing to fit"
        )));
    }

    let (lo, hi) = prob.bounds.transformed();
    let grid = *prob.measured.grid();
    let injection = prob.injection;
    let window = prob.smooth_window;

    // Residuals: operator-matched derivative mismatch.
    let residual_fn = move |theta: &DVector<f64>, y: &[f64]| -> DVector<f64> {
        let params = FitParams::from_theta(theta);
        let model = ForwardModel { channel: params.channel, injection, scale: params.scale };
        let predicted = predict_unchecked(&model, &grid);
        let deriv = differentiate(&predicted, window).expect("prediction grid matches measured");
        DVector::from_iterator(y.len(), deriv.values().iter().zip(y).map(|(p, m)| p - m))
    };

    // Closed-form optimal scale for a start's other parameters.
    let zeros = vec![0.0; y.len()];
    let project_scale = |theta: &DVector<f64>| -> Option<f64> {
        let mut unit = theta.clone();
        unit[4] = 0.0; // scale = 1
        // With a zero target the residual IS the unit-scale prediction derivative.
        let u = residual_fn(&unit, &zeros);
        let uu: f64 = u.iter().map(|v| v * v).sum();
        if !(uu > 0.0) {
            return None;
        }
        let uy: f64 = u.iter().zip(y).map(|(a, b)| a * b).sum();
        let s = uy / uu;
        if s > 0.0 && s.is_finite() {
            Some(s.ln().clamp(lo[4], hi[4]))
        } else {
            None
        }
    };

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(prob.seed);
    let mut starts = latin_hypercube(prob.n_starts, &lo, &hi, &mut rng);
    for start in starts.iter_mut() {
        if let Some(log_scale) = project_scale(start) {
            start[4] = log_scale;
        }
    }
    if let Some(init) = prob.init {
        starts[0] = init.to_theta();
    }

    let opts = LmOptions { max_iter: prob.max_iter, ..LmOptions::default() };
    let solves: Vec<_> = starts
        .par_iter()
        .map(|start| minimize(|theta| residual_fn(theta, y), start, &lo, &hi, &opts))
        .collect();

    let diagnostics: Vec<StartDiagnostic> = solves
        .iter()
        .enumerate()
        .map(|(i, s)| StartDiagnostic {
            start_index: i,
            objective: s.objective,
            n_iter: s.n_iter,
            converged: s.converged,
        })
        .collect();

    let best = solves
        .iter()
        .enumerate()
        .filter(|(_, s)| s.converged)
        .min_by(|(ia, a), (ib, b)| a.objective.total_cmp(&b.objective).then(ia.cmp(ib)));
    let Some((start_index, solve)) = best else {
        return Err(Error::Convergence {
            message: format!("none of the {} starts converged", prob.n_starts),
            diagnostics,
        });
    };

    let mut params = FitParams::from_theta(&solve.theta);
    canonicalize_similarity(&mut params, &prob.bounds);
    // Undo any exp(ln(..)) round-off so the returned parameters satisfy
    // the bounds exactly.
    let b = prob.bounds;
    params.channel.d_eff = params.channel.d_eff.clamp(b.d_eff[0], b.d_eff[1]);
    params.channel.v_eff = params.channel.v_eff.clamp(b.v_eff[0], b.v_eff[1]);
    params.channel.l_eff = params.channel.l_eff.clamp(b.l_eff[0], b.l_eff[1]);
    params.channel.d_rx = params
        .channel
        .d_rx
        .clamp(b.fraction[0] * params.channel.l_eff, b.fraction[1] * params.channel.l_eff);
    params.scale = params.scale.clamp(b.scale[0], b.scale[1]);

    let near = |value: f64, bound: f64| {
        (value - bound).abs() <= 1e-9 * (value.abs() + bound.abs()) + 1e-300
    };
    let status = |value: f64, pair: [f64; 2]| -> BoundStatus {
        if near(value, pair[0]) {
            BoundStatus::AtLower
        } else if near(value, pair[1]) {
            BoundStatus::AtUpper
        } else {
            BoundStatus::Interior
        }
    };

    Ok(FitResult {
        residual_rms: (solve.objective / y.len() as f64).sqrt(),
        n_iter: solve.n_iter,
        converged: true,
        start_index,
        bounds_status: BoundsStatus {
            d_eff: status(params.channel.d_eff, b.d_eff),
            v_eff: status(params.channel.v_eff, b.v_eff),
            l_eff: status(params.channel.l_eff, b.l_eff),
            fraction: status(params.channel.d_rx / params.channel.l_eff, b.fraction),
            scale: status(params.scale, b.scale),
        },
        starts: diagnostics,
        params,
    })
}

/// Residual summary statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub rms: f64,
    pub max_abs: f64,
    /// Time at which |residual| peaks [s].
    pub t_at_max: f64,
}

fn summarize(tr: &Trace) -> ResidualSummary {
    let mut max_abs = 0.0_f64;
    let mut t_at_max = tr.t0();
    let mut sum_sq = 0.0;
    for (t, v) in tr.iter() {
        sum_sq += v * v;
        if v.abs() > max_abs {
            max_abs = v.abs();
            t_at_max = t;
        }
    }
    ResidualSummary { rms: (sum_sq / tr.len() as f64).sqrt(), max_abs, t_at_max }
}

/// Per-sample residuals of a fit, on the derivative target and on the
/// integrated intensity, plus summary statistics for each.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// measured minus predicted, derivative domain.
    pub derivative: Trace,
    /// measured minus predicted, intensity domain.
    pub intensity: Trace,
    pub derivative_summary: ResidualSummary,
    pub intensity_summary: ResidualSummary,
}

/// Evaluate the fitted model against the measurement it was fitted to.
pub fn residual_report(res: &FitResult, prob: &FitProblem) -> Result<ResidualReport> {
    let model = ForwardModel {
        channel: res.params.channel,
        injection: prob.injection,
        scale: res.params.scale,
    };
    let predicted = predict_unchecked(&model, prob.measured.grid());
    let intensity_values: Vec<f64> = prob
        .measured
        .values()
        .iter()
        .zip(predicted.values())
        .map(|(m, p)| m - p)
        .collect();
    let intensity = Trace::new(*prob.measured.grid(), intensity_values, "au")?;

    let measured_deriv = differentiate(&prob.measured, prob.smooth_window)?;
    let predicted_deriv = differentiate(&predicted, prob.smooth_window)?;
    let deriv_values: Vec<f64> = measured_deriv
        .values()
        .iter()
        .zip(predicted_deriv.values())
        .map(|(m, p)| m - p)
        .collect();
    let derivative = Trace::new(*measured_deriv.grid(), deriv_values, "au/s")?;

    Ok(ResidualReport {
        derivative_summary: summarize(&derivative),
        intensity_summary: summarize(&intensity),
        derivative,
        intensity,
    })
}
