//! Command-line front end: argument parsing, runs and CSV export.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::controller::{events_csv, Engine};
use crate::error::{Error, Result};
use crate::metrics::{metrics_csv, MetricRow, SampleSelection};
use crate::params::PhysicalParams;
use crate::protocols::{
    build_rabi, build_ramsey, run_protocol, run_reset, summarize, summary_rows, trajectory_csv,
    RabiConfig, RamseyConfig, ResetInit, Target, DEFAULT_AVERAGE_START, DEFAULT_SAMPLE_STEP,
};
use crate::readout::{calibrate_noise, generate_histogram, HistogramPrep, ReadoutModel};

#[derive(Debug, Parser)]
#[command(
    name = "qfeedback",
    about = "Stroboscopic measurement feedback on a dissipative qubit"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, value_enum, default_value_t = EngineKind::Ensemble, global = true)]
    pub engine: EngineKind,
    /// Monte Carlo shots.
    #[arg(long, default_value_t = 10_000, global = true)]
    pub shots: u64,
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// Flat `name = value` parameter file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, default_value = ".", global = true)]
    pub out: PathBuf,
    /// Quantum-limited amplifier on or off.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, global = true)]
    pub jpc: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineKind {
    Ensemble,
    Montecarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Mixed,
    Thermal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrepKind {
    G,
    E,
    Mixed,
}

#[derive(Debug, Args)]
pub struct Sampling {
    /// Trajectory sample spacing (s).
    #[arg(long, default_value_t = DEFAULT_SAMPLE_STEP)]
    pub sample_step: f64,
    /// Start of the time-average window (s).
    #[arg(long, default_value_t = DEFAULT_AVERAGE_START)]
    pub average_start: f64,
    /// End of the time-average window (s); defaults to the run length.
    #[arg(long)]
    pub average_end: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Qubit reset by feedback.
    Reset {
        #[arg(long, value_enum, default_value_t = InitKind::Mixed)]
        init: InitKind,
        /// Number of feedback rounds.
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Stabilized Ramsey oscillations.
    Ramsey {
        #[arg(long, default_value_t = 4e-6)]
        period: f64,
        /// Display rotation frequency (Hz).
        #[arg(long, default_value_t = 100e3)]
        omega_ry: f64,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        actuation: bool,
        #[arg(long, default_value_t = 40e-6)]
        total_time: f64,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Stabilized Rabi oscillations.
    Rabi {
        #[arg(long, default_value_t = 4e-6)]
        period: f64,
        /// Rabi frequency (Hz).
        #[arg(long, default_value_t = 250e3)]
        omega_r: f64,
        /// Duration of each boost segment (s).
        #[arg(long, default_value_t = crate::protocols::DEFAULT_RABI_BOOST)]
        boost: f64,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        drive_during_latency: bool,
        #[arg(long, default_value_t = 40e-6)]
        total_time: f64,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Single-shot readout histogram.
    Histogram {
        #[arg(long, value_enum, default_value_t = PrepKind::Mixed)]
        prep: PrepKind,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Reset { .. } => "reset",
            Command::Ramsey { .. } => "ramsey",
            Command::Rabi { .. } => "rabi",
            Command::Histogram { .. } => "histogram",
        }
    }
}

/// Parameters, readout model and engine resolved from the common flags.
struct Context {
    params: PhysicalParams,
    model: ReadoutModel,
    engine: Engine,
    header: String,
}

impl Context {
    fn new(common: &Common, command: &Command) -> Result<Self> {
        let params = match &common.config {
            Some(path) => PhysicalParams::from_config_file(path)?,
            None => PhysicalParams::default(),
        };
        params.validate()?;
        let model = calibrate_noise(&params)?.with_jpc(common.jpc);
        let engine = match common.engine {
            EngineKind::Ensemble => Engine::Ensemble,
            EngineKind::Montecarlo => {
                if common.shots == 0 {
                    return Err(Error::InvalidParam {
                        name: "shots",
                        reason: "must be >= 1".into(),
                    });
                }
                Engine::MonteCarlo {
                    shots: common.shots,
                    seed: common.seed,
                }
            }
        };
        let header = format!(
            "# qfeedback {}; engine={:?}; shots={}; seed={}; jpc={}; {}\n",
            command.name(),
            common.engine,
            common.shots,
            common.seed,
            common.jpc,
            params.describe()
        );
        Ok(Context {
            params,
            model,
            engine,
            header,
        })
    }

    fn write(&self, dir: &Path, name: &str, body: &str) -> Result<()> {
        fs::write(dir.join(name), format!("{}{}", self.header, body))?;
        Ok(())
    }
}

/// Runs one command, writes its CSV files and returns the printed summary.
pub fn run(cli: &Cli) -> Result<String> {
    let ctx = Context::new(&cli.common, &cli.command)?;
    let dir = cli.common.out.as_path();
    fs::create_dir_all(dir)?;
    match &cli.command {
        Command::Reset { init, n } => {
            let init = match init {
                InitKind::Mixed => ResetInit::Mixed,
                InitKind::Thermal => ResetInit::Thermal,
            };
            let (outcome, out) = run_reset(*n, init, &ctx.params, &ctx.model, ctx.engine)?;
            let end = out.measurements.last().map_or(0.0, |m| m.start);
            let row = MetricRow {
                metric: "preparation_error".into(),
                window_start: end,
                window_end: end,
                value: outcome.error,
                stderr: outcome.stderr,
            };
            ctx.write(dir, "events.csv", &events_csv(&out.events))?;
            ctx.write(dir, "metrics.csv", &metrics_csv(&[row]))?;
            let se = outcome
                .stderr
                .map(|s| format!(" ± {:.3} %", 100.0 * s))
                .unwrap_or_default();
            Ok(format!(
                "init {:?}, {n} reset(s): p_e = {:.3} %{se}\n",
                init,
                100.0 * outcome.error
            ))
        }
        Command::Ramsey {
            period,
            omega_ry,
            actuation,
            total_time,
            sampling,
        } => {
            let cfg = RamseyConfig {
                period: *period,
                omega_ry: *omega_ry,
                actuation: *actuation,
                total_time: *total_time,
            };
            let schedule = build_ramsey(&cfg, &ctx.params)?;
            stabilization(&ctx, dir, &schedule, Target::Ramsey, *omega_ry, sampling)
        }
        Command::Rabi {
            period,
            omega_r,
            boost,
            drive_during_latency,
            total_time,
            sampling,
        } => {
            let cfg = RabiConfig {
                omega_r: *omega_r,
                period: *period,
                boost_duration: *boost,
                total_time: *total_time,
                drive_during_latency: *drive_during_latency,
                ..RabiConfig::default()
            };
            let schedule = build_rabi(&cfg, &ctx.params)?;
            stabilization(
                &ctx,
                dir,
                &schedule,
                Target::Rabi { omega_r: *omega_r },
                0.0,
                sampling,
            )
        }
        Command::Histogram { prep } => {
            let prep = match prep {
                PrepKind::G => HistogramPrep::G,
                PrepKind::E => HistogramPrep::E,
                PrepKind::Mixed => HistogramPrep::Mixed,
            };
            let h = generate_histogram(
                prep,
                cli.common.shots.max(1),
                &ctx.model,
                &ctx.params,
                cli.common.seed,
            );
            ctx.write(dir, "histogram.csv", &h.to_csv())?;
            let row = |metric: &str, value: f64| MetricRow {
                metric: metric.into(),
                window_start: 0.0,
                window_end: 0.0,
                value,
                stderr: None,
            };
            ctx.write(
                dir,
                "metrics.csv",
                &metrics_csv(&[
                    row("misassignment", h.misassignment()),
                    row("clean_misassignment", h.clean_misassignment()),
                ]),
            )?;
            let modes: Vec<String> = h.im_modes().iter().map(|m| format!("{m:.3}")).collect();
            Ok(format!(
                "{} shots: misassignment {:.3} %, without in-window jumps {:.3} %; Im modes [{}]; pointer angle {:.2} deg; N_m {:.2}\n",
                h.shots,
                100.0 * h.misassignment(),
                100.0 * h.clean_misassignment(),
                modes.join(", "),
                ctx.params.pointer_angle().to_degrees(),
                ctx.params.mode_count()
            ))
        }
    }
}

fn stabilization(
    ctx: &Context,
    dir: &Path,
    schedule: &crate::dynamics::Schedule,
    target: Target,
    omega_ry: f64,
    sampling: &Sampling,
) -> Result<String> {
    let out = run_protocol(
        schedule,
        &ctx.params,
        &ctx.model,
        ctx.engine,
        sampling.sample_step,
    )?;
    let end = sampling.average_end.unwrap_or(schedule.total_duration());
    let s = summarize(
        &out.trajectory,
        target,
        sampling.average_start,
        end,
        SampleSelection::All,
    )?;
    ctx.write(
        dir,
        "trajectory.csv",
        &trajectory_csv(&out.trajectory, target, omega_ry),
    )?;
    ctx.write(dir, "events.csv", &events_csv(&out.events))?;
    ctx.write(dir, "metrics.csv", &metrics_csv(&summary_rows(&s)))?;
    Ok(format!(
        "average over [{:.2}, {:.2}] us: fidelity {:.3}, purity {:.3}, information {:.3} bit, coherence {:.3}\n",
        s.window_start * 1e6,
        s.window_end * 1e6,
        s.fidelity,
        s.purity,
        s.information,
        s.coherence
    ))
}
