//! Forward model of the received intensity: the loop channel response
//! convolved with the injection dynamics.
//!
//! The prediction is the causal convolution
//!
//! ```text
//! I(t) = scale * integral_0^t p_wn(d_rx, tau) * f_inj(t - tau) dtau
//! ```
//!
//! evaluated by midpoint quadrature with the kernel sampled at
//! `tau = (j + 1/2) * dt`. The half-step offset keeps the kernel away from
//! its `t = 0` impulse; the finite-duration injection regularizes the
//! result, and halving `dt` perturbs the prediction well below the model's
//! other error sources (see the grid-convergence test).

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams};
use crate::error::{Error, Result};
use crate::injection::{raised_cosine, raised_cosine_rate_derivative, InjectionProfile};
use crate::trace::{TimeGrid, Trace};

/// Truncation tolerance used for kernel evaluations.
const KERNEL_TOL: f64 = 1e-12;

/// Channel, injection and intensity scaling combined into one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub channel: ChannelParams,
    pub injection: InjectionProfile,
    /// Intensity per unit density [arbitrary units * m].
    pub scale: f64,
}

impl ForwardModel {
    pub fn new(channel: ChannelParams, injection: InjectionProfile, scale: f64) -> Result<Self> {
        let m = ForwardModel { channel, injection, scale };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.injection.validate()?;
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::parameter(format!("scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Check that the grid resolves both the injection and the first peak.
fn check_grid(m: &ForwardModel, grid: &TimeGrid) -> Result<()> {
    let dt = grid.dt();
    if dt > m.injection.tw / 20.0 {
        return Err(Error::parameter(format!(
            "grid step {dt} too coarse for injection duration {} (need dt <= tw/20)",
            m.injection.tw
        )));
    }
    if m.channel.v_eff > 0.0 {
        // First strictly positive arrival: cycle 0, or cycle 1 when the
        // receiver sits on the release point.
        let times = channel::peak_times(&m.channel, 1)?;
        let t_first = if times[0].1 > 0.0 { times[0].1 } else { times[1].1 };
        if t_first > 0.0 && dt > t_first / 20.0 {
            return Err(Error::parameter(format!(
                "grid step {dt} too coarse to resolve the first peak at {t_first} (need dt <= t/20)"
            )));
        }
    }
    Ok(())
}

/// Sub-samples needed to average the kernel over one grid bin without
/// aliasing. Concentration peaks pass the receiver with temporal width
/// about `sigma / v_eff` and spacing `l_eff / v_eff`; when those fall
/// below the grid step, the bin average has to resolve them.
fn kernel_subsamples(c: &ChannelParams, bin_end: f64, dt: f64) -> usize {
    if c.v_eff <= 0.0 {
        return 1;
    }
    let sigma = (2.0 * c.d_eff * bin_end).sqrt();
    let feature = sigma.min(0.25 * c.l_eff) / c.v_eff;
    (4.0 * dt / feature).ceil().clamp(1.0, 32.0) as usize
}

/// Quadrature convolution of the channel kernel with `rate`.
///
/// `out[i] = scale * dt * sum_j kernel[j] * rate(t_i - tau_j)` where
/// `kernel[j]` is the bin average of the loop response over
/// `[j dt, (j+1) dt]` (a single midpoint sample when the response is
/// smooth on the grid scale). The midpoint offset keeps the evaluation
/// away from the `t = 0` impulse. Rate factors only depend on the index
/// difference, so the rate is precomputed once.
fn convolve(
    m: &ForwardModel,
    grid: &TimeGrid,
    rate: impl Fn(&InjectionProfile, f64) -> f64,
) -> Vec<f64> {
    let n = grid.len();
    let dt = grid.dt();
    // Lattice anchored at the release time 0 that contains the grid times:
    // t_i = r + (lead + i) * dt with r in [0, dt).
    let lead = (grid.t0() / dt + 1e-9).floor().max(0.0);
    let r = grid.t0() - lead * dt;
    let lead = lead as usize;
    let n_full = lead + n;

    let kernel: Vec<f64> = (0..n_full)
        .map(|j| {
            let a = j as f64 * dt;
            let n_sub = kernel_subsamples(&m.channel, a + dt, dt);
            let h = dt / n_sub as f64;
            let mut acc = 0.0;
            for s in 0..n_sub {
                let tau = a + (s as f64 + 0.5) * h;
                acc += channel::wrapped_density_unchecked(&m.channel, m.channel.d_rx, tau, KERNEL_TOL);
            }
            acc / n_sub as f64
        })
        .collect();
    // rate at t_i - tau_j = r + (i' - j - 1/2) dt, a function of i' - j.
    let rate_at: Vec<f64> = (0..=n_full)
        .map(|k| rate(&m.injection, r + (k as f64 - 0.5) * dt))
        .collect();
    // Midpoints tau_j < t_i: j < i' when r < dt/2, j <= i' otherwise.
    let extra = usize::from(r >= 0.5 * dt);

    (0..n)
        .map(|i| {
            let ii = lead + i;
            let terms = (ii + extra).min(n_full);
            let mut acc = 0.0;
            for j in 0..terms {
                acc += kernel[j] * rate_at[ii - j];
            }
            m.scale * dt * acc
        })
        .collect()
}

/// Predicted received intensity on `grid`.
///
/// Nonnegative, zero before the injection starts, and approaching
/// `scale * amplitude / l_eff` once the loop has mixed.
pub fn predict(m: &ForwardModel, grid: &TimeGrid) -> Result<Trace> {
    m.validate()?;
    check_grid(m, grid)?;
    Trace::new(*grid, convolve(m, grid, raised_cosine), "au")
}

/// Time derivative of the predicted intensity on `grid`.
///
/// Uses the analytic product rule: since the release rate vanishes at the
/// injection onset, `dI/dt` is the kernel convolved with the rate's time
/// derivative. This is the fitting target.
pub fn predict_derivative(m: &ForwardModel, grid: &TimeGrid) -> Result<Trace> {
    m.validate()?;
    check_grid(m, grid)?;
    Ok(predict_derivative_unchecked(m, grid))
}

/// Derivative prediction without the grid pre-checks; the fitter calls
/// this on whatever parameter point the optimizer proposes.
pub(crate) fn predict_derivative_unchecked(m: &ForwardModel, grid: &TimeGrid) -> Trace {
    Trace::new(*grid, convolve(m, grid, raised_cosine_rate_derivative), "au/s")
        .expect("grid and values have matching length")
}

pub(crate) fn predict_unchecked(m: &ForwardModel, grid: &TimeGrid) -> Trace {
    Trace::new(*grid, convolve(m, grid, raised_cosine), "au")
        .expect("grid and values have matching length")
}
