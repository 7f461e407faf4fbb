//! Command-line front end for the closed-loop channel toolkit.
//!
//! Subcommands:
//! - `simulate`: predicted receiver intensity from a forward-model JSON.
//! - `peaks`: per-cycle peak arrival times as CSV.
//! - `pbs`: particle-based simulation, frames and receiver traces as CSV.
//! - `fit-channel`: estimate channel parameters from a measured trace.
//! - `fit-injection`: extract the injection profile from a mean-intensity
//!   trace.
//!
//! Exit codes: 0 on success, 2 when an optimization or extraction fails to
//! converge, 3 on data errors, 1 otherwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use loopchan_core::channel::{peak_times, ChannelParams};
use loopchan_core::error::Error as CoreError;
use loopchan_core::estimation::{
    fit_channel, residual_report, FitBounds, FitParams, FitProblem,
};
use loopchan_core::injection::{extract_injection, InjectionProfile, DEFAULT_SMOOTH_WINDOW};
use loopchan_core::pbs::{receiver_trace, simulate, SimConfig};
use loopchan_core::response::{predict, ForwardModel};
use loopchan_core::trace::{TimeGrid, Trace};

#[derive(Parser)]
#[command(
    name = "loopchan",
    about = "Closed-loop advective-dispersive channel modeling, simulation and fitting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict the received intensity for a forward model.
    Simulate(SimulateArgs),
    /// Print per-cycle peak arrival times as CSV (k,t_max_s).
    Peaks(PeaksArgs),
    /// Run the particle-based simulator and write density frames.
    Pbs(PbsArgs),
    /// Fit channel parameters to a measured intensity trace.
    FitChannel(FitChannelArgs),
    /// Extract the injection profile from a mean-intensity trace.
    FitInjection(FitInjectionArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Forward-model JSON: {"channel": {...}, "injection": {...}, "scale": s}.
    #[arg(long)]
    model: PathBuf,
    /// Grid step [s].
    #[arg(long)]
    dt: f64,
    /// Horizon [s]; the grid covers [0, t_end].
    #[arg(long)]
    t_end: f64,
    /// Output trace CSV (t_s,value).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PeaksArgs {
    /// Channel-parameter JSON with keys d_eff, v_eff, l_eff, d_rx.
    #[arg(long)]
    params: PathBuf,
    /// Highest cycle index to report.
    #[arg(long, default_value_t = 5)]
    k_max: u32,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PbsArgs {
    /// Simulation config JSON (n_particles, dt, t_end, n_bins,
    /// record_every, rng_seed).
    #[arg(long)]
    config: PathBuf,
    /// Channel-parameter JSON.
    #[arg(long)]
    params: PathBuf,
    /// Release position on the loop [m].
    #[arg(long, default_value_t = 0.0)]
    release_x: f64,
    /// Output CSV for the density frames (t_s,bin_center_m,density_per_m).
    #[arg(long)]
    frames_out: PathBuf,
    /// Receiver center positions [m]; repeatable, paired with
    /// --receiver-out.
    #[arg(long)]
    receiver_x: Vec<f64>,
    /// Receiver window length [m], shared by all receivers.
    #[arg(long)]
    receiver_window: Option<f64>,
    /// Output trace CSV per receiver; must appear as often as
    /// --receiver-x.
    #[arg(long)]
    receiver_out: Vec<PathBuf>,
}

#[derive(Args)]
struct FitChannelArgs {
    /// Measured trace CSV (t_s,value).
    #[arg(long)]
    measured: PathBuf,
    /// Injection-profile JSON (t0, tw, amplitude). When omitted, the
    /// profile is extracted from the measured trace itself.
    #[arg(long)]
    injection: Option<PathBuf>,
    /// Fit configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output JSON for the fit result.
    #[arg(long)]
    out_result: PathBuf,
    /// Output CSV for the derivative-target residuals.
    #[arg(long)]
    out_residuals: PathBuf,
}

#[derive(Args)]
struct FitInjectionArgs {
    /// Measured mean-intensity trace CSV (t_s,value).
    #[arg(long)]
    measured: PathBuf,
    /// Moving-average window in samples.
    #[arg(long, default_value_t = DEFAULT_SMOOTH_WINDOW)]
    smooth_window: usize,
    /// Output JSON for the extracted profile.
    #[arg(long)]
    out: PathBuf,
}

/// On-disk fit configuration; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfigFile {
    n_starts: Option<usize>,
    seed: Option<u64>,
    smooth_window: Option<usize>,
    max_iter: Option<usize>,
    bounds: Option<FitBounds>,
    init: Option<FitParams>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_trace(path: &Path, label: &str) -> Result<Trace> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(Trace::read_csv(BufReader::new(file), label)?)
}

fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    trace.write_csv(BufWriter::new(file))?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let model: ForwardModel = read_json(&args.model)?;
    model.validate()?;
    let grid = TimeGrid::from_span(args.dt, args.t_end)?;
    let trace = predict(&model, &grid)?;
    write_trace(&args.out, &trace)?;
    Ok(())
}

fn cmd_peaks(args: &PeaksArgs) -> Result<()> {
    let params: ChannelParams = read_json(&args.params)?;
    params.validate()?;
    let table = peak_times(&params, args.k_max)?;
    let mut body = String::from("k,t_max_s\n");
    for (k, t) in table {
        body.push_str(&format!("{k},{t}\n"));
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn cmd_pbs(args: &PbsArgs) -> Result<()> {
    let cfg: SimConfig = read_json(&args.config)?;
    let params: ChannelParams = read_json(&args.params)?;
    params.validate()?;
    if args.receiver_x.len() != args.receiver_out.len() {
        anyhow::bail!(
            "--receiver-x given {} times but --receiver-out {} times",
            args.receiver_x.len(),
            args.receiver_out.len()
        );
    }
    if !args.receiver_x.is_empty() && args.receiver_window.is_none() {
        anyhow::bail!("--receiver-window is required when receivers are requested");
    }
    let series = simulate(&cfg, &params, args.release_x)?;
    let file = File::create(&args.frames_out)
        .with_context(|| format!("cannot create {}", args.frames_out.display()))?;
    series.write_csv(BufWriter::new(file))?;
    for (x_rx, out) in args.receiver_x.iter().zip(&args.receiver_out) {
        let trace = receiver_trace(&series, *x_rx, args.receiver_window.unwrap())?;
        write_trace(out, &trace)?;
    }
    Ok(())
}

fn cmd_fit_channel(args: &FitChannelArgs) -> Result<()> {
    let measured = read_trace(&args.measured, "au")?;
    let injection: InjectionProfile = match &args.injection {
        Some(path) => {
            let p: InjectionProfile = read_json(path)?;
            p.validate()?;
            p
        }
        None => extract_injection(&measured, DEFAULT_SMOOTH_WINDOW)?,
    };
    let cfg: FitConfigFile = match &args.config {
        Some(path) => read_json(path)?,
        None => FitConfigFile::default(),
    };
    let mut prob = FitProblem::new(measured, injection);
    if let Some(v) = cfg.n_starts {
        prob.n_starts = v;
    }
    if let Some(v) = cfg.seed {
        prob.seed = v;
    }
    if let Some(v) = cfg.smooth_window {
        prob.smooth_window = v;
    }
    if let Some(v) = cfg.max_iter {
        prob.max_iter = v;
    }
    if let Some(v) = cfg.bounds {
        prob.bounds = v;
    }
    prob.init = cfg.init;

    let result = fit_channel(&prob)?;
    let report = residual_report(&result, &prob)?;
    write_json(&args.out_result, &result)?;
    write_trace(&args.out_residuals, &report.derivative)?;
    Ok(())
}

fn cmd_fit_injection(args: &FitInjectionArgs) -> Result<()> {
    let measured = read_trace(&args.measured, "au")?;
    let profile = extract_injection(&measured, args.smooth_window)?;
    write_json(&args.out, &profile)?;
    Ok(())
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Convergence { .. }) | Some(CoreError::FitQuality(_)) => 2,
        Some(CoreError::Data(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Peaks(args) => cmd_peaks(args),
        Command::Pbs(args) => cmd_pbs(args),
        Command::FitChannel(args) => cmd_fit_channel(args),
        Command::FitInjection(args) => cmd_fit_injection(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
