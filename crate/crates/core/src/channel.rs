//! Analytical solutions of drift-diffusion transport on a closed loop.
//!
//! The transport model is the 1D advection-dispersion equation
//!
//! ```text
//! dp/dt = d_eff * d2p/dx2 - v_eff * dp/dx
//! ```
//!
//! solved either on the infinite line (a drifting Gaussian) or on a ring of
//! circumference `l_eff` with periodic boundary conditions, where the
//! solution becomes a wrapped normal density. The module also provides the
//! dispersion mapping from physical pipe parameters to an effective axial
//! diffusion coefficient, the peak-arrival-time predictor for a receiver on
//! the loop, and the long-time equilibrium density.
//!
//! All densities are per unit length along the loop (1/m); conversion to a
//! volumetric concentration via the cross-section area is the caller's
//! concern. All quantities are SI base units: m, s, m/s, m^2/s.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Effective parameters of a closed-loop advective-dispersive channel.
///
/// `v_eff` is stored non-negative; a reversed flow is expressed by
/// reflecting coordinates (`x -> l_eff - x`, `d_rx -> l_eff - d_rx`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Effective axial diffusion coefficient [m^2/s].
    pub d_eff: f64,
    /// Effective flow velocity [m/s].
    pub v_eff: f64,
    /// Loop circumference [m].
    pub l_eff: f64,
    /// Receiver position, measured downstream from the release point [m].
    pub d_rx: f64,
}

impl ChannelParams {
    pub fn new(d_eff: f64, v_eff: f64, l_eff: f64, d_rx: f64) -> Result<Self> {
        let p = ChannelParams { d_eff, v_eff, l_eff, d_rx };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_eff > 0.0) || !self.d_eff.is_finite() {
            return Err(Error::parameter(format!("d_eff must be > 0, got {}", self.d_eff)));
        }
        if !(self.l_eff > 0.0) || !self.l_eff.is_finite() {
            return Err(Error::parameter(format!("l_eff must be > 0, got {}", self.l_eff)));
        }
        if !(self.v_eff >= 0.0) || !self.v_eff.is_finite() {
            return Err(Error::parameter(format!(
                "v_eff must be >= 0 (reverse flow is expressed by reflecting coordinates), got {}",
                self.v_eff
            )));
        }
        if !(0.0..self.l_eff).contains(&self.d_rx) {
            return Err(Error::parameter(format!(
                "d_rx must lie in [0, l_eff), got {} with l_eff {}",
                self.d_rx, self.l_eff
            )));
        }
        Ok(())
    }
}

/// Physical description of a circular pipe carrying laminar flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalChannel {
    /// Molecular diffusion coefficient [m^2/s].
    pub d_molecular: f64,
    /// Pipe radius [m].
    pub r0: f64,
    /// Cross-section mean flow velocity [m/s].
    pub v_mean: f64,
}

impl PhysicalChannel {
    pub fn new(d_molecular: f64, r0: f64, v_mean: f64) -> Result<Self> {
        let pc = PhysicalChannel { d_molecular, r0, v_mean };
        pc.validate()?;
        Ok(pc)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_molecular", self.d_molecular),
            ("r0", self.r0),
            ("v_mean", self.v_mean),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::parameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A point on the loop at a given time since release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    /// Position along the loop [m].
    pub x: f64,
    /// Time since release [s].
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: f64, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("time since release must be >= 0, got {t}")));
        }
        Ok(SpaceTimePoint { x, t })
    }
}

/// Concentration density of the infinite-tube solution at `(x, t)`.
///
/// Returns the drifting Gaussian with variance `2 * d_eff * t` and mean
/// `v_eff * t`, normalized over the whole line. `t <= 0` is a domain error:
/// the release instant is a point impulse and has no finite density.
pub fn gaussian_response(p: &ChannelParams, x: f64, t: f64) -> Result<f64> {
    p.validate()?;
    if !(t > 0.0) {
        return Err(Error::domain(format!(
            "gaussian response undefined at t = {t}; density is an impulse at release"
        )));
    }
    let sigma2 = 2.0 * p.d_eff * t;
    let u = x - p.v_eff * t;
    Ok((-u * u / (2.0 * sigma2)).exp() / (sigma2 * 2.0 * PI).sqrt())
}

/// Concentration density on the closed loop at `(x, t)`.
///
/// Evaluates the wrapped normal density as an image-source sum: the
/// infinite-tube Gaussian summed over all wrap images `x + k * l_eff`. The
/// sum is truncated once the omitted tail mass is below `tol`, and always
/// includes at least one full wrap on each side. Positions outside
/// `[0, l_eff)` are wrapped in, consistent with periodicity.
pub fn wrapped_response(p: &ChannelParams, x: f64, t: f64, tol: f64) -> Result<f64> {
    p.validate()?;
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::parameter(format!("truncation tolerance must be > 0, got {tol}")));
    }
    if !(t > 0.0) {
        return Err(Error::domain(format!(
            "wrapped response undefined at t = {t}; density is an impulse at release"
        )));
    }
    Ok(wrapped_density_unchecked(p, x, t, tol))
}

/// Evaluation without the validity checks; shared with hot loops that
/// validate once up front.
pub(crate) fn wrapped_density_unchecked(p: &ChannelParams, x: f64, t: f64, tol: f64) -> f64 {
    let l = p.l_eff;
    let sigma2 = 2.0 * p.d_eff * t;
    let sigma = sigma2.sqrt();
    if sigma >= l {
        // Near-uniform regime: the theta-function Fourier form needs only
        // a couple of harmonics once the spread exceeds the loop.
        let lam = 2.0 * PI / l;
        let s2 = lam * lam * sigma2;
        let phase = lam * (x - p.v_eff * t);
        let mut sum = 1.0;
        let m_max = ((-2.0 * tol.min(0.5).ln()).sqrt() / s2.sqrt()).ceil().max(1.0) as u32 + 1;
        for m in 1..=m_max {
            let mf = f64::from(m);
            sum += 2.0 * (-0.5 * mf * mf * s2).exp() * (mf * phase).cos();
        }
        return sum / l;
    }
    // Image-source sum with a half-width covering the requested tail mass:
    // a z*sigma Gaussian tail holds less than exp(-z^2/2) of the mass, and
    // z >= 8 keeps the omitted tail below ~1e-15 regardless of tol.
    let z = 8.0_f64.max((-2.0 * tol.min(0.5).ln()).sqrt());
    let w = (z * sigma).max(l);
    let delta = x.rem_euclid(l) - p.v_eff * t;
    let k_lo = ((-w - delta) / l).ceil() as i64;
    let k_hi = ((w - delta) / l).floor() as i64;
    let mut sum = 0.0;
    for k in k_lo..=k_hi {
        let u = delta + k as f64 * l;
        sum += (-u * u / (2.0 * sigma2)).exp();
    }
    sum / (sigma * (2.0 * PI).sqrt())
}

/// Effective axial diffusion coefficient of laminar pipe flow.
///
/// Maps `(d_molecular, r0, v_mean)` to the dispersion-enhanced axial
/// coefficient `d + r0^2 v^2 / (48 d)`. Always at least `d_molecular`,
/// with equality exactly when there is no flow.
pub fn taylor_aris(pc: &PhysicalChannel) -> f64 {
    debug_assert!(pc.validate().is_ok());
    pc.d_molecular + (pc.r0 * pc.r0 * pc.v_mean * pc.v_mean) / (48.0 * pc.d_molecular)
}

/// Times at which the receiver at `d_rx` sees the concentration peak of
/// each loop cycle `k = 0..=k_max`.
///
/// For cycle `k` the peak arrives at
///
/// ```text
/// t_max(k) = (d_eff / v_eff^2) * (-1 + sqrt(1 + (v_eff/d_eff)^2 * (d_rx + k*l_eff)^2))
/// ```
///
/// which is strictly increasing in `k` and always earlier than the pure
/// advection time `(d_rx + k*l_eff) / v_eff`. Undefined for `v_eff = 0`
/// (the expression is singular; with pure diffusion there is no travelling
/// peak to time).
pub fn peak_times(p: &ChannelParams, k_max: u32) -> Result<Vec<(u32, f64)>> {
    p.validate()?;
    if p.v_eff == 0.0 {
        return Err(Error::parameter(
            "peak times are undefined for v_eff = 0 (no advected peak on the loop)",
        ));
    }
    let a = p.d_eff / (p.v_eff * p.v_eff);
    let b = p.v_eff / p.d_eff;
    let mut out = Vec::with_capacity(k_max as usize + 1);
    for k in 0..=k_max {
        let dist = p.d_rx + k as f64 * p.l_eff;
        let s = b * dist;
        // -1 + sqrt(1 + s^2) computed stably for small s.
        let root = s.hypot(1.0);
        let t = a * (s * s / (root + 1.0));
        out.push((k, t));
    }
    Ok(out)
}

/// Long-time equilibrium density on the loop: the uniform value `1 / l_eff`.
pub fn equilibrium_density(p: &ChannelParams) -> f64 {
    debug_assert!(p.validate().is_ok());
    1.0 / p.l_eff
}
