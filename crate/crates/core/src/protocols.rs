//! Experiment schedules: active reset, Ramsey stabilization and Rabi
//! stabilization with Zeno-pause compensation, plus tomography and the
//! display helpers.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::controller::{execute_schedule, sample_grid, ControllerConfig, Engine, RunOutput};
use crate::dynamics::{apply_instant_pulse, Preparation, PulseSegment, Schedule};
use crate::error::{Error, Result};
use crate::metrics::{self, time_average, SampleSelection, TrajectoryEnsemble};
use crate::params::PhysicalParams;
use crate::readout::{MeasurementKernel, ReadoutModel};
use crate::state::{Bloch, QubitState};

/// Default tomography grid.
pub const DEFAULT_SAMPLE_STEP: f64 = 250e-9;

/// Default start of the steady-state averaging window.
pub const DEFAULT_AVERAGE_START: f64 = 4e-6;

/// Default cap on boosted drive rates (rad/s).
pub const DEFAULT_BOOST_CAP: f64 = 2.0 * PI * 10e6;

/// Rotation about Y mapping the Ramsey target (+X) to |g⟩ and its inverse.
const TO_G: f64 = PI / 2.0;
const AXIS_Y: f64 = PI / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetInit {
    /// Half of the shots receive a π pulse.
    Mixed,
    Thermal,
}

/// `n_resets` feedback rounds followed by a verification readout.
pub fn build_reset(n_resets: usize, init: ResetInit, params: &PhysicalParams) -> Schedule {
    let prep = match init {
        ResetInit::Mixed => Preparation::MixedByPi,
        ResetInit::Thermal => Preparation::Thermal,
    };
    let mut s = Schedule::new(prep);
    for _ in 0..n_resets {
        let m = s.push(PulseSegment::measure(params.t_readout).blanked());
        s.push(PulseSegment::wait(params.t_latency).blanked());
        let c = s.push(PulseSegment::conditional_slot(0.0).blanked());
        s.link(m, c);
    }
    s.push(PulseSegment::measure(params.t_readout));
    s
}

/// Preparation error of a reset run: the population outside |g⟩ when the
/// verification readout starts, with its standard error (Monte Carlo only).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResetOutcome {
    pub error: f64,
    pub stderr: Option<f64>,
}

pub fn run_reset(
    n_resets: usize,
    init: ResetInit,
    params: &PhysicalParams,
    model: &ReadoutModel,
    engine: Engine,
) -> Result<(ResetOutcome, RunOutput)> {
    let schedule = build_reset(n_resets, init, params);
    let cfg = ControllerConfig::from_params(params);
    let out = execute_schedule(&schedule, &cfg, params, model, engine, &[])?;
    let last = out
        .measurements
        .last()
        .ok_or_else(|| Error::Protocol("reset run has no verification".into()))?;
    Ok((
        ResetOutcome {
            error: last.excited_side(),
            stderr: last.excited_side_stderr,
        },
        out,
    ))
}

/// Finds the leakage per π pulse for which two resets from the mixed state
/// leave `target` of the population outside |g⟩ (ensemble engine, bisection).
pub fn calibrate_leakage(
    params: &PhysicalParams,
    model: &ReadoutModel,
    target: f64,
) -> Result<f64> {
    let error_at = |p_leak: f64| -> Result<f64> {
        let p = PhysicalParams { p_leak, ..*params };
        Ok(run_reset(2, ResetInit::Mixed, &p, model, Engine::Ensemble)?
            .0
            .error)
    };
    let (mut lo, mut hi) = (0.0, 0.2);
    let (f_lo, f_hi) = (error_at(lo)? - target, error_at(hi)? - target);
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::Protocol(format!(
            "two-reset floor {target} not bracketed by p_leak in [0, 0.2]"
        )));
    }
    let mut iterations = 0;
    while hi - lo > 1e-7 {
        iterations += 1;
        if iterations > 100 {
            return Err(Error::NonConvergence {
                iterations,
                residual: hi - lo,
            });
        }
        let mid = 0.5 * (lo + hi);
        if error_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RamseyConfig {
    pub period: f64,
    /// Display rotation frequency (Hz).
    pub omega_ry: f64,
    pub actuation: bool,
    pub total_time: f64,
}

impl Default for RamseyConfig {
    fn default() -> Self {
        RamseyConfig {
            period: 4e-6,
            omega_ry: 100e3,
            actuation: true,
            total_time: 40e-6,
        }
    }
}

/// Initial −π/2 about Y preparing (|g⟩ + |e⟩)/√2, then every period a drive-free
/// wait followed by the sensing block: +π/2 about Y, readout, −π/2 about Y, the
/// rest of the latency, and the conditional π. Sensing blocks end at multiples
/// of the period.
pub fn build_ramsey(cfg: &RamseyConfig, params: &PhysicalParams) -> Result<Schedule> {
    let tp = params.t_pulse_pi2;
    let block = tp + params.t_readout + params.t_latency;
    if cfg.period.is_nan() || cfg.period <= params.t_readout + params.t_latency + 2.0 * tp {
        return Err(Error::InvalidParam {
            name: "period",
            reason: format!("{:e} s is shorter than the sensing block", cfg.period),
        });
    }
    if params.t_latency < tp {
        return Err(Error::InvalidParam {
            name: "t_latency",
            reason: "the −π/2 pulse must fit in the latency".into(),
        });
    }
    if cfg.total_time.is_nan() || cfg.total_time < cfg.period {
        return Err(Error::InvalidParam {
            name: "total_time",
            reason: "shorter than one period".into(),
        });
    }
    let mut s = Schedule::new(Preparation::Ground);
    s.push(PulseSegment::pulse(-TO_G, AXIS_Y, tp));
    let mut t = tp;
    let mut k = 1.0;
    while k * cfg.period <= cfg.total_time * (1.0 + 1e-12) {
        let end = k * cfg.period;
        s.push(PulseSegment::wait(end - block - t));
        s.push(PulseSegment::pulse(TO_G, AXIS_Y, tp).blanked());
        let m = s.push(PulseSegment::measure(params.t_readout).blanked());
        s.push(PulseSegment::pulse(-TO_G, AXIS_Y, tp).blanked());
        s.push(PulseSegment::wait(params.t_latency - tp).blanked());
        if cfg.actuation {
            let c = s.push(PulseSegment::conditional_slot(0.0).blanked());
            s.link(m, c);
        } else {
            s.push(PulseSegment::wait(0.0).blanked());
        }
        t = end;
        k += 1.0;
    }
    if cfg.total_time - t > 1e-15 {
        s.push(PulseSegment::wait(cfg.total_time - t));
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RabiConfig {
    /// Nominal Rabi frequency (Hz).
    pub omega_r: f64,
    pub period: f64,
    /// Length of each accelerated segment.
    pub boost_duration: f64,
    pub total_time: f64,
    /// Whether the nominal drive keeps running between readout and correction.
    pub drive_during_latency: bool,
    /// Largest allowed drive rate (rad/s).
    pub boost_cap: f64,
}

impl Default for RabiConfig {
    fn default() -> Self {
        RabiConfig {
            omega_r: 250e3,
            period: 4e-6,
            boost_duration: DEFAULT_RABI_BOOST,
            total_time: 40e-6,
            drive_during_latency: true,
            boost_cap: DEFAULT_BOOST_CAP,
        }
    }
}

/// Default boost length.
pub const DEFAULT_RABI_BOOST: f64 = 200e-9;

/// Resonant drive about Y at Ω = 2π·omega_r with readouts centred at multiples
/// of the period, where the uninterrupted drive returns the qubit to |g⟩. The
/// angle lost while the drive pauses for the readout is made up by boosted
/// segments just before and after it; the conditional π fires one latency after
/// the readout ends.
pub fn build_rabi(cfg: &RabiConfig, params: &PhysicalParams) -> Result<Schedule> {
    let omega = 2.0 * PI * cfg.omega_r;
    let (tr, b, lat) = (params.t_readout, cfg.boost_duration, params.t_latency);
    if !(omega > 0.0 && b > 0.0) {
        return Err(Error::InvalidParam {
            name: "rabi",
            reason: "omega_r and boost_duration must be positive".into(),
        });
    }
    let post_deficit = if cfg.drive_during_latency {
        0.5 * tr
    } else {
        0.5 * tr + lat
    };
    let pre_rate = omega * (1.0 + 0.5 * tr / b);
    let post_rate = omega * (1.0 + post_deficit / b);
    for rate in [pre_rate, post_rate] {
        if rate > cfg.boost_cap {
            return Err(Error::InvalidParam {
                name: "boost_duration",
                reason: format!(
                    "boost rate {:.3e} rad/s exceeds cap {:.3e} rad/s",
                    rate, cfg.boost_cap
                ),
            });
        }
    }
    let busy = 0.5 * tr + b + lat + b + 0.5 * tr;
    if cfg.period < busy {
        return Err(Error::InvalidParam {
            name: "period",
            reason: "too short for boosts, readout and latency".into(),
        });
    }

    let mut s = Schedule::new(Preparation::Ground);
    let mut t = 0.0;
    let mut k = 1.0;
    loop {
        let centre = k * cfg.period;
        let (open, close) = (centre - 0.5 * tr, centre + 0.5 * tr);
        let slot_time = close + lat;
        let block_end = if cfg.drive_during_latency {
            close + b.max(lat)
        } else {
            slot_time + b
        };
        if block_end > cfg.total_time * (1.0 + 1e-12) {
            break;
        }
        s.push(PulseSegment::drive(open - b - t, omega, AXIS_Y));
        s.push(PulseSegment::drive(b, pre_rate, AXIS_Y).blanked());
        let m = s.push(PulseSegment::measure(tr).blanked());
        if cfg.drive_during_latency {
            // boost then nominal drive; the slot cuts in one latency after close
            s.push(PulseSegment::drive(b.min(lat), post_rate, AXIS_Y).blanked());
            if lat > b {
                s.push(PulseSegment::drive(lat - b, omega, AXIS_Y).blanked());
            }
            let c = s.push(PulseSegment::conditional_slot(0.0).blanked());
            s.link(m, c);
            if b > lat {
                s.push(PulseSegment::drive(b - lat, post_rate, AXIS_Y).blanked());
            }
        } else {
            s.push(PulseSegment::wait(lat).blanked());
            let c = s.push(PulseSegment::conditional_slot(0.0).blanked());
            s.link(m, c);
            s.push(PulseSegment::drive(b, post_rate, AXIS_Y).blanked());
        }
        t = block_end;
        k += 1.0;
    }
    if cfg.total_time - t > 1e-15 {
        s.push(PulseSegment::drive(cfg.total_time - t, omega, AXIS_Y));
    }
    Ok(s)
}

/// Σ rabi_rate · duration over `[start, end)` of the schedule.
pub fn integrated_angle(schedule: &Schedule, start: f64, end: f64) -> f64 {
    schedule
        .segments
        .iter()
        .zip(schedule.start_times())
        .map(|(seg, t0)| {
            let a = t0.max(start);
            let b = (t0 + seg.duration).min(end);
            if b > a {
                if seg.impulsive {
                    let mid = t0 + 0.5 * seg.duration;
                    if mid >= start && mid < end {
                        seg.angle()
                    } else {
                        0.0
                    }
                } else {
                    seg.rabi_rate * (b - a)
                }
            } else {
                0.0
            }
        })
        .sum()
}

/// Target trajectory of a protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// Static (|g⟩ + |e⟩)/√2 in the simulation frame.
    Ramsey,
    /// Uninterrupted flop about Y from |g⟩ at `omega_r` Hz.
    Rabi { omega_r: f64 },
    /// Fixed pure state.
    Fixed(Bloch),
}

pub fn target_state(target: Target, t: f64) -> Bloch {
    match target {
        Target::Ramsey => Bloch::new(1.0, 0.0, 0.0),
        Target::Rabi { omega_r } => {
            let th = 2.0 * PI * omega_r * t;
            Bloch::new(-th.sin(), 0.0, -th.cos())
        }
        Target::Fixed(b) => b,
    }
}

/// Maps simulation-frame (x, y) to the frame rotating at `omega_ry` Hz.
pub fn rotating_frame_map(x: f64, y: f64, t: f64, omega_ry: f64) -> (f64, f64) {
    let (s, c) = (2.0 * PI * omega_ry * t).sin_cos();
    (c * x + s * y, -s * x + c * y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// How tomography reads the state.
#[derive(Clone, Copy, Debug)]
pub enum TomographyMethod<'a> {
    /// Bloch components of the stored state.
    Direct,
    /// Pre-rotation (π/2 about Y for X, about X for Y) followed by a readout;
    /// returns the mean ±1 outcome.
    RotateAndMeasure(&'a MeasurementKernel),
}

/// Expectation of `axis` at sample time `t`. Fails inside sensing/actuation
/// intervals and at times that are not sample points.
pub fn tomography(
    ens: &TrajectoryEnsemble,
    t: f64,
    axis: Axis,
    method: TomographyMethod<'_>,
    params: &PhysicalParams,
) -> Result<f64> {
    let i = ens.nearest(t);
    if ens.times.is_empty() || (ens.times[i] - t).abs() > 1e-12 {
        return Err(Error::Protocol(format!("{t:e} s is not a sample point")));
    }
    if ens.blanked[i] {
        return Err(Error::Protocol(format!(
            "{t:e} s lies in a sensing or actuation interval"
        )));
    }
    let state = ens.states[i];
    match method {
        TomographyMethod::Direct => {
            let b = state.bloch();
            Ok(match axis {
                Axis::X => b.x,
                Axis::Y => b.y,
                Axis::Z => b.z,
            })
        }
        TomographyMethod::RotateAndMeasure(kernel) => {
            let ideal = PhysicalParams {
                p_leak: 0.0,
                ..*params
            };
            let rotated = match axis {
                Axis::X => apply_instant_pulse(&state, -PI / 2.0, AXIS_Y, &ideal),
                Axis::Y => apply_instant_pulse(&state, PI / 2.0, 0.0, &ideal),
                Axis::Z => state,
            };
            Ok(2.0 * kernel.apply(&rotated).prob_e - 1.0)
        }
    }
}

/// Time-averaged figures of merit of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub window_start: f64,
    pub window_end: f64,
    pub fidelity: f64,
    pub purity: f64,
    pub information: f64,
    pub coherence: f64,
    /// Conservative standard error of the fidelity average (Monte Carlo only).
    pub fidelity_stderr: Option<f64>,
}

pub fn summarize(
    ens: &TrajectoryEnsemble,
    target: Target,
    start: f64,
    end: f64,
    selection: SampleSelection,
) -> Result<Summary> {
    let avg =
        |f: &dyn Fn(usize, f64, &QubitState) -> f64| time_average(ens, f, start, end, selection);
    let fidelity = avg(&|_, t, s| metrics::fidelity(s, &target_state(target, t)))?;
    let fidelity_stderr = match &ens.stderr {
        Some(se) => Some(avg(&|i, t, _| {
            let tg = target_state(target, t);
            let e = se[i];
            0.5 * ((tg.x * e.x).powi(2) + (tg.y * e.y).powi(2) + (tg.z * e.z).powi(2)).sqrt()
        })?),
        None => None,
    };
    Ok(Summary {
        window_start: start,
        window_end: end,
        fidelity,
        purity: avg(&|_, _, s| metrics::purity(s))?,
        information: avg(&|_, _, s| metrics::information_bits(s))?,
        coherence: avg(&|_, _, s| metrics::coherence(s))?,
        fidelity_stderr,
    })
}

/// Metric rows for the summary CSV.
pub fn summary_rows(s: &Summary) -> Vec<metrics::MetricRow> {
    let row = |name: &str, value: f64, stderr: Option<f64>| metrics::MetricRow {
        metric: name.into(),
        window_start: s.window_start,
        window_end: s.window_end,
        value,
        stderr,
    };
    vec![
        row("fidelity", s.fidelity, s.fidelity_stderr),
        row("purity", s.purity, None),
        row("information_bits", s.information, None),
        row("coherence", s.coherence, None),
    ]
}

/// Runs a stabilization schedule on the default sample grid.
pub fn run_protocol(
    schedule: &Schedule,
    params: &PhysicalParams,
    model: &ReadoutModel,
    engine: Engine,
    sample_step: f64,
) -> Result<RunOutput> {
    let cfg = ControllerConfig::from_params(params);
    let samples = sample_grid(schedule.total_duration(), sample_step);
    execute_schedule(schedule, &cfg, params, model, engine, &samples)
}

/// CSV body with columns t_s, sx, sy, sz, sx_display, sy_display, purity, fidelity.
pub fn trajectory_csv(ens: &TrajectoryEnsemble, target: Target, omega_ry: f64) -> String {
    let mut out = String::from("t_s,sx,sy,sz,sx_display,sy_display,purity,fidelity\n");
    for (t, s) in ens.times.iter().zip(&ens.states) {
        let b = s.bloch();
        let (dx, dy) = rotating_frame_map(b.x, b.y, *t, omega_ry);
        let _ = writeln!(
            out,
            "{:.9e},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            t,
            b.x,
            b.y,
            b.z,
            dx,
            dy,
            metrics::purity(s),
            metrics::fidelity(s, &target_state(target, *t))
        );
    }
    out
}
