//! Modeling, simulation and estimation of molecule transport in closed-loop
//! advective-dispersive channels.
//!
//! The crate covers the full pipeline for a transparent receiver on a
//! recirculating channel:
//!
//! - [`channel`]: analytical solutions of 1D drift-diffusion on a ring
//!   (drifting Gaussian, wrapped normal), the Taylor-Aris dispersion
//!   mapping, per-cycle peak arrival times, and the uniform equilibrium.
//! - [`pbs`]: an exact-increment particle simulator on the loop that
//!   validates the analytics with binned density frames.
//! - [`injection`]: the raised-cosine release model and recovery of its
//!   delay/duration/amount from measured mean-intensity traces.
//! - [`response`]: the received-intensity forward model, a causal
//!   convolution of the loop response with the release rate.
//! - [`estimation`]: bounded multi-start Levenberg-Marquardt estimation of
//!   `[d_eff, v_eff, l_eff, d_rx, scale]` from a measured trace, fitted on
//!   derivatives.
//!
//! All operations are pure functions over value types and are safe to call
//! from multiple threads. Randomized components (particle streams, fit
//! starts) are reproducible from explicit seeds, independent of thread
//! count.

pub mod channel;
pub mod error;
pub mod estimation;
pub mod injection;
pub mod pbs;
pub mod response;
pub mod trace;

pub use channel::{ChannelParams, PhysicalChannel, SpaceTimePoint};
pub use error::{Error, Result};
pub use estimation::{
    BoundStatus, BoundsStatus, FitBounds, FitParams, FitProblem, FitResult, ResidualReport,
    ResidualSummary, StartDiagnostic,
};
pub use injection::InjectionProfile;
pub use pbs::{Frame, FrameSeries, ParticleEnsemble, SimConfig};
pub use response::ForwardModel;
pub use trace::{TimeGrid, Trace};
