//! Feedback controller and the run loop shared by both engines.
//!
//! A schedule is compiled into a timeline of primitive operations. The
//! ensemble engine carries a small branch tree (one split per linked
//! measurement, merged again at the conditional slot); the Monte Carlo engine
//! follows one stochastic path per shot. Samples at time t are taken after any
//! instantaneous operation scheduled at t.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::dynamics::trajectory::{
    apply_instant_pulse_shot, collapse, propagate_shot, sample_pure, Jump,
};
use crate::dynamics::{
    apply_instant_pulse, evolve_ensemble, Preparation, PulseSegment, Schedule, SegmentKind,
};
use crate::error::{Error, Result};
use crate::metrics::{EngineTag, Provenance, TrajectoryEnsemble};
use crate::montecarlo::fold_shots;
use crate::params::PhysicalParams;
use crate::readout::{sample_shot, Assignment, MeasurementKernel, MeasurementRecord, ReadoutModel};
use crate::state::{Bloch, Level, QubitState, ShotState};

/// Branches lighter than this are dropped and the rest renormalised.
pub const BRANCH_PRUNE_THRESHOLD: f64 = 1e-6;

/// Timing tolerance used when placing samples on segment boundaries.
const SAMPLE_TOLERANCE: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerConfig {
    /// End of readout to conditional pulse.
    pub latency: f64,
    pub correction_angle: f64,
    pub correction_axis_phase: f64,
    pub threshold: f64,
}

impl ControllerConfig {
    pub fn from_params(params: &PhysicalParams) -> Self {
        ControllerConfig {
            latency: params.t_latency,
            correction_angle: PI,
            correction_axis_phase: PI / 2.0,
            threshold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latency >= 0.0 && self.latency.is_finite()) {
            return Err(Error::InvalidParam {
                name: "latency",
                reason: format!("{} must be >= 0", self.latency),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    None,
    Correct,
}

/// Correct iff the record points to e.
pub fn decide(record: &MeasurementRecord, cfg: &ControllerConfig) -> Action {
    if record.amplitude.im > cfg.threshold {
        Action::Correct
    } else {
        Action::None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Ensemble,
    MonteCarlo { shots: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Measure,
    AssignG,
    AssignE,
    Correct,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Measure => "measure",
            EventKind::AssignG => "assign_g",
            EventKind::AssignE => "assign_e",
            EventKind::Correct => "correct",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub im_amplitude: Option<f64>,
}

/// CSV body with columns time_s, event, im_amplitude.
pub fn events_csv(events: &[Event]) -> String {
    let mut out = String::from("time_s,event,im_amplitude\n");
    for e in events {
        let im = e
            .im_amplitude
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        let _ = writeln!(out, "{:.9e},{},{}", e.time, e.kind.label(), im);
    }
    out
}

/// Per-readout statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementStats {
    /// Start of the readout pulse.
    pub start: f64,
    /// Ensemble state entering the readout.
    pub input: QubitState,
    /// Standard error of the e-side population (e + f) of `input`.
    pub excited_side_stderr: Option<f64>,
    pub prob_e: f64,
    pub prob_e_stderr: Option<f64>,
    /// Ensemble state just before and after the linked conditional slot.
    pub around_slot: Option<(QubitState, QubitState)>,
}

impl MeasurementStats {
    /// Population outside |g⟩ when the readout starts.
    pub fn excited_side(&self) -> f64 {
        self.input.p_e + self.input.p_f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub trajectory: TrajectoryEnsemble,
    /// Ensemble engine: branch-level events; Monte Carlo: events of shot 0.
    pub events: Vec<Event>,
    pub measurements: Vec<MeasurementStats>,
    pub final_state: QubitState,
}

/// Uniform sample grid on `[0, total]`, always including `total`.
pub fn sample_grid(total: f64, step: f64) -> Vec<f64> {
    let n = (total / step + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    if total - out[n] > SAMPLE_TOLERANCE {
        out.push(total);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Evolve {
        duration: f64,
        rabi_rate: f64,
        axis_phase: f64,
    },
    Pulse {
        angle: f64,
        axis_phase: f64,
    },
    Collapse {
        id: usize,
    },
    WindowOpen {
        id: usize,
    },
    WindowClose {
        id: usize,
    },
    ReadoutEnd {
        id: usize,
    },
    Slot {
        id: usize,
    },
    Sample {
        index: usize,
    },
}

#[derive(Clone, Debug)]
struct Timeline {
    ops: Vec<(f64, Op)>,
    /// Measurement id → whether a conditional slot acts on it.
    linked: Vec<bool>,
}

fn compile(schedule: &Schedule, params: &PhysicalParams, samples: &[f64]) -> Result<Timeline> {
    let starts = schedule.start_times();
    let mut measure_id = vec![usize::MAX; schedule.segments.len()];
    let mut linked = Vec::new();
    for (i, seg) in schedule.segments.iter().enumerate() {
        if seg.kind == SegmentKind::MeasureWindow {
            if (seg.duration - params.t_readout).abs() > 1e-9 * params.t_readout {
                return Err(Error::Schedule(format!(
                    "measurement window {i} lasts {:e} s, readout pulse is {:e} s",
                    seg.duration, params.t_readout
                )));
            }
            measure_id[i] = linked.len();
            linked.push(schedule.links.iter().any(|l| l.measure == i));
        }
    }

    let mut raw: Vec<(f64, Op)> = Vec::new();
    let free = |d: f64| Op::Evolve {
        duration: d,
        rabi_rate: 0.0,
        axis_phase: 0.0,
    };
    for (i, (seg, &t)) in schedule.segments.iter().zip(&starts).enumerate() {
        match seg.kind {
            SegmentKind::Drive if seg.impulsive => {
                let half = 0.5 * seg.duration;
                raw.push((t, free(half)));
                raw.push((
                    t + half,
                    Op::Pulse {
                        angle: seg.angle(),
                        axis_phase: seg.axis_phase,
                    },
                ));
                raw.push((t + half, free(half)));
            }
            SegmentKind::Drive => raw.push((
                t,
                Op::Evolve {
                    duration: seg.duration,
                    rabi_rate: seg.rabi_rate,
                    axis_phase: seg.axis_phase,
                },
            )),
            SegmentKind::Wait => raw.push((t, free(seg.duration))),
            SegmentKind::MeasureWindow => {
                let id = measure_id[i];
                let offset = params.window_offset();
                let open = t + offset;
                let close = open + params.t_integrate;
                raw.push((t, Op::Collapse { id }));
                raw.push((t, free(offset)));
                raw.push((open, Op::WindowOpen { id }));
                raw.push((open, free(params.t_integrate)));
                raw.push((close, Op::WindowClose { id }));
                raw.push((close, free(t + seg.duration - close)));
                raw.push((t + seg.duration, Op::ReadoutEnd { id }));
            }
            SegmentKind::ConditionalSlot => {
                let link = schedule.links.iter().find(|l| l.slot == i).ok_or_else(|| {
                    Error::Schedule(format!("conditional slot {i} is not linked"))
                })?;
                raw.push((
                    t,
                    Op::Slot {
                        id: measure_id[link.measure],
                    },
                ));
                raw.push((t, free(seg.duration)));
            }
        }
    }

    // split evolutions at sample times
    let mut ops = Vec::with_capacity(raw.len() + samples.len());
    let mut next = 0;
    for (t, op) in raw {
        match op {
            Op::Evolve {
                duration,
                rabi_rate,
                axis_phase,
            } => {
                let end = t + duration;
                let mut at = t;
                while next < samples.len() && samples[next] < end - SAMPLE_TOLERANCE {
                    let s = samples[next].max(at);
                    if s > at {
                        ops.push((
                            at,
                            Op::Evolve {
                                duration: s - at,
                                rabi_rate,
                                axis_phase,
                            },
                        ));
                        at = s;
                    }
                    ops.push((at, Op::Sample { index: next }));
                    next += 1;
                }
                if end > at {
                    ops.push((
                        at,
                        Op::Evolve {
                            duration: end - at,
                            rabi_rate,
                            axis_phase,
                        },
                    ));
                }
            }
            other => ops.push((t, other)),
        }
    }
    let end = schedule.total_duration();
    while next < samples.len() {
        if samples[next] > end + SAMPLE_TOLERANCE {
            return Err(Error::Schedule(format!(
                "sample time {:e} beyond schedule end {end:e}",
                samples[next]
            )));
        }
        ops.push((end, Op::Sample { index: next }));
        next += 1;
    }
    Ok(Timeline { ops, linked })
}

fn initial_state(prep: &Preparation, params: &PhysicalParams) -> QubitState {
    match *prep {
        Preparation::Ground => QubitState::ground(),
        Preparation::Thermal => QubitState::thermal(params.p_e_thermal, params.p_f_thermal),
        Preparation::MixedByPi => {
            let th = QubitState::thermal(params.p_e_thermal, params.p_f_thermal);
            th * 0.5 + apply_instant_pulse(&th, PI, PI / 2.0, params) * 0.5
        }
        Preparation::Custom(s) => s,
    }
}

fn initial_shot<R: rand::Rng + ?Sized>(
    prep: &Preparation,
    params: &PhysicalParams,
    shot: u64,
    rng: &mut R,
) -> ShotState {
    match *prep {
        Preparation::Ground => ShotState::ground(),
        Preparation::Thermal => sample_pure(&initial_state(prep, params), rng),
        Preparation::MixedByPi => {
            let th = sample_pure(&initial_state(&Preparation::Thermal, params), rng);
            // half of the shots receive the π pulse
            if shot % 2 == 1 {
                apply_instant_pulse_shot(th, PI, PI / 2.0, params, rng)
            } else {
                th
            }
        }
        Preparation::Custom(s) => sample_pure(&s, rng),
    }
}

fn check_inputs(
    schedule: &Schedule,
    cfg: &ControllerConfig,
    params: &PhysicalParams,
    samples: &[f64],
) -> Result<()> {
    params.validate()?;
    cfg.validate()?;
    schedule.validate(cfg.latency)?;
    if samples.windows(2).any(|w| w[1] <= w[0]) || samples.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Schedule(
            "sample times must be non-negative and strictly increasing".into(),
        ));
    }
    if let Preparation::Custom(s) = schedule.preparation {
        s.validate()?;
    }
    Ok(())
}

/// Runs `schedule` with the chosen engine and records the ensemble state at
/// every time in `samples`.
pub fn execute_schedule(
    schedule: &Schedule,
    cfg: &ControllerConfig,
    params: &PhysicalParams,
    model: &ReadoutModel,
    engine: Engine,
    samples: &[f64],
) -> Result<RunOutput> {
    check_inputs(schedule, cfg, params, samples)?;
    let timeline = compile(schedule, params, samples)?;
    let model = ReadoutModel {
        threshold: cfg.threshold,
        ..*model
    };
    let blanked: Vec<bool> = samples.iter().map(|&t| is_blanked(schedule, t)).collect();
    match engine {
        Engine::Ensemble => {
            run_ensemble(&timeline, schedule, cfg, params, &model, samples, blanked)
        }
        Engine::MonteCarlo { shots, seed } => {
            if shots == 0 {
                return Err(Error::InvalidParam {
                    name: "shots",
                    reason: "Monte Carlo needs at least one shot".into(),
                });
            }
            Ok(run_monte_carlo(
                &timeline, schedule, cfg, params, &model, samples, blanked, shots, seed,
            ))
        }
    }
}

fn is_blanked(schedule: &Schedule, t: f64) -> bool {
    schedule
        .blanked_intervals()
        .iter()
        .any(|&(a, b)| t >= a - SAMPLE_TOLERANCE && t < b - SAMPLE_TOLERANCE)
}

#[derive(Clone, Copy, Debug)]
struct Branch {
    weight: f64,
    state: QubitState,
    correct: bool,
}

fn merged(branches: &[Branch]) -> QubitState {
    branches.iter().fold(
        QubitState {
            p_g: 0.0,
            p_e: 0.0,
            p_f: 0.0,
            c_ge: Complex64::default(),
        },
        |acc, b| acc + b.state * b.weight,
    )
}

fn run_ensemble(
    timeline: &Timeline,
    schedule: &Schedule,
    cfg: &ControllerConfig,
    params: &PhysicalParams,
    model: &ReadoutModel,
    samples: &[f64],
    blanked: Vec<bool>,
) -> Result<RunOutput> {
    let kernel = MeasurementKernel::new(model, params);
    let mut branches = vec![Branch {
        weight: 1.0,
        state: initial_state(&schedule.preparation, params),
        correct: false,
    }];
    let mut snapshot = QubitState::ground();
    let mut states = vec![QubitState::ground(); samples.len()];
    let mut events = Vec::new();
    let mut stats: Vec<MeasurementStats> = Vec::new();
    for &(t, op) in &timeline.ops {
        match op {
            Op::Evolve {
                duration,
                rabi_rate,
                axis_phase,
            } => {
                let seg = if rabi_rate == 0.0 {
                    PulseSegment::wait(duration)
                } else {
                    PulseSegment::drive(duration, rabi_rate, axis_phase)
                };
                for b in &mut branches {
                    b.state = evolve_ensemble(&b.state, &seg, params)?;
                }
            }
            Op::Pulse { angle, axis_phase } => {
                for b in &mut branches {
                    b.state = apply_instant_pulse(&b.state, angle, axis_phase, params);
                }
            }
            Op::Collapse { .. } => {
                snapshot = merged(&branches);
                branches = vec![Branch {
                    weight: 1.0,
                    state: snapshot.dephased(),
                    correct: false,
                }];
                events.push(Event {
                    time: t,
                    kind: EventKind::Measure,
                    im_amplitude: None,
                });
            }
            Op::WindowOpen { .. } | Op::WindowClose { .. } => {}
            Op::ReadoutEnd { id } => {
                let split = kernel.apply(&snapshot);
                stats.push(MeasurementStats {
                    start: t - params.t_readout,
                    input: snapshot,
                    excited_side_stderr: None,
                    prob_e: split.prob_e,
                    prob_e_stderr: None,
                    around_slot: None,
                });
                if timeline.linked[id] {
                    let mut next: Vec<Branch> = [
                        (split.prob_g, split.state_g, false),
                        (split.prob_e, split.state_e, true),
                    ]
                    .into_iter()
                    .filter(|&(w, _, _)| w >= BRANCH_PRUNE_THRESHOLD)
                    .map(|(weight, state, correct)| Branch {
                        weight,
                        state,
                        correct,
                    })
                    .collect();
                    let total: f64 = next.iter().map(|b| b.weight).sum();
                    for b in &mut next {
                        b.weight /= total;
                    }
                    branches = next;
                }
            }
            Op::Slot { id } => {
                let before = merged(&branches);
                if branches.iter().any(|b| b.correct) {
                    events.push(Event {
                        time: t,
                        kind: EventKind::Correct,
                        im_amplitude: None,
                    });
                }
                for b in &mut branches {
                    if b.correct {
                        b.state = apply_instant_pulse(
                            &b.state,
                            cfg.correction_angle,
                            cfg.correction_axis_phase,
                            params,
                        );
                    }
                }
                let after = merged(&branches);
                branches = vec![Branch {
                    weight: 1.0,
                    state: after,
                    correct: false,
                }];
                if let Some(s) = stats.get_mut(id) {
                    s.around_slot = Some((before, after));
                }
            }
            Op::Sample { index } => states[index] = merged(&branches),
        }
    }
    let trajectory = TrajectoryEnsemble {
        times: samples.to_vec(),
        states,
        stderr: None,
        blanked,
        provenance: Provenance {
            engine: EngineTag::Ensemble,
            seed: None,
            shots: None,
        },
    };
    Ok(RunOutput {
        trajectory,
        events,
        measurements: stats,
        final_state: merged(&branches),
    })
}

/// Per-sample sums: p_g, p_e, p_f, Re c, Im c, x², y², z².
type SampleSums = [f64; 8];
/// Per-measurement sums: p_g, p_e, p_f, Re c, Im c, (p_e + p_f)², assignments to e,
/// then the same five density sums before and after the slot.
type MeasureSums = [f64; 17];

#[derive(Clone)]
struct McAcc {
    samples: Vec<SampleSums>,
    measures: Vec<MeasureSums>,
    last: [f64; 5],
}

fn density_sums(s: &QubitState) -> [f64; 5] {
    [s.p_g, s.p_e, s.p_f, s.c_ge.re, s.c_ge.im]
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn mean_state(sums: &[f64], n: f64) -> QubitState {
    QubitState {
        p_g: sums[0] / n,
        p_e: sums[1] / n,
        p_f: sums[2] / n,
        c_ge: Complex64::new(sums[3] / n, sums[4] / n),
    }
}

fn stderr_of(mean: f64, mean_sq: f64, n: f64) -> f64 {
    if n < 2.0 {
        return 0.0;
    }
    ((mean_sq - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn run_monte_carlo(
    timeline: &Timeline,
    schedule: &Schedule,
    cfg: &ControllerConfig,
    params: &PhysicalParams,
    model: &ReadoutModel,
    samples: &[f64],
    blanked: Vec<bool>,
    shots: u64,
    seed: u64,
) -> RunOutput {
    let n_measures = timeline.linked.len();
    let acc = fold_shots(
        shots,
        seed,
        || McAcc {
            samples: vec![[0.0; 8]; samples.len()],
            measures: vec![[0.0; 17]; n_measures],
            last: [0.0; 5],
        },
        |acc, rng, shot| {
            let out = run_shot(timeline, schedule, cfg, params, model, shot, rng, None);
            for (dst, src) in acc.samples.iter_mut().zip(&out.samples) {
                add_into(dst, src);
            }
            for (dst, src) in acc.measures.iter_mut().zip(&out.measures) {
                add_into(dst, src);
            }
            add_into(&mut acc.last, &out.last);
        },
        |mut a, b| {
            for (dst, src) in a.samples.iter_mut().zip(&b.samples) {
                add_into(dst, src);
            }
            for (dst, src) in a.measures.iter_mut().zip(&b.measures) {
                add_into(dst, src);
            }
            add_into(&mut a.last, &b.last);
            a
        },
    );
    let mut events = Vec::new();
    let mut rng0 = crate::montecarlo::shot_rng(seed, 0);
    run_shot(
        timeline,
        schedule,
        cfg,
        params,
        model,
        0,
        &mut rng0,
        Some(&mut events),
    );

    let n = shots as f64;
    let states: Vec<QubitState> = acc.samples.iter().map(|s| mean_state(s, n)).collect();
    let stderr = acc
        .samples
        .iter()
        .zip(&states)
        .map(|(s, m)| {
            let b = m.bloch();
            Bloch::new(
                stderr_of(b.x, s[5] / n, n),
                stderr_of(b.y, s[6] / n, n),
                stderr_of(b.z, s[7] / n, n),
            )
        })
        .collect();
    let starts = schedule.start_times();
    let measure_starts: Vec<f64> = schedule
        .segments
        .iter()
        .zip(&starts)
        .filter(|(s, _)| s.kind == SegmentKind::MeasureWindow)
        .map(|(_, &t)| t)
        .collect();
    let measurements = acc
        .measures
        .iter()
        .zip(&measure_starts)
        .enumerate()
        .map(|(id, (m, &start))| {
            let input = mean_state(&m[..5], n);
            let side = input.p_e + input.p_f;
            let prob_e = m[6] / n;
            MeasurementStats {
                start,
                input,
                excited_side_stderr: Some(stderr_of(side, m[5] / n, n)),
                prob_e,
                prob_e_stderr: Some(stderr_of(prob_e, prob_e, n)),
                around_slot: timeline.linked[id]
                    .then(|| (mean_state(&m[7..12], n), mean_state(&m[12..17], n))),
            }
        })
        .collect();
    let trajectory = TrajectoryEnsemble {
        times: samples.to_vec(),
        states,
        stderr: Some(stderr),
        blanked,
        provenance: Provenance {
            engine: EngineTag::MonteCarlo,
            seed: Some(seed),
            shots: Some(shots),
        },
    };
    RunOutput {
        trajectory,
        events,
        measurements,
        final_state: mean_state(&acc.last, n),
    }
}

struct ShotOutput {
    samples: Vec<SampleSums>,
    measures: Vec<MeasureSums>,
    last: [f64; 5],
}

#[allow(clippy::too_many_arguments)]
fn run_shot<R: rand::Rng + ?Sized>(
    timeline: &Timeline,
    schedule: &Schedule,
    cfg: &ControllerConfig,
    params: &PhysicalParams,
    model: &ReadoutModel,
    shot_index: u64,
    rng: &mut R,
    mut events: Option<&mut Vec<Event>>,
) -> ShotOutput {
    let n_samples = timeline
        .ops
        .iter()
        .filter(|o| matches!(o.1, Op::Sample { .. }))
        .count();
    let mut out = ShotOutput {
        samples: vec![[0.0; 8]; n_samples],
        measures: vec![[0.0; 17]; timeline.linked.len()],
        last: [0.0; 5],
    };
    let mut shot = initial_shot(&schedule.preparation, params, shot_index, rng);
    let mut jumps: Vec<Jump> = Vec::new();
    let mut level_at_window = Level::G;
    let mut window_start = 0.0;
    let mut decisions = vec![Action::None; timeline.linked.len()];
    let mut last_record: Option<MeasurementRecord> = None;
    for &(t, op) in &timeline.ops {
        match op {
            Op::Evolve {
                duration,
                rabi_rate,
                axis_phase,
            } => {
                shot = propagate_shot(
                    shot, duration, rabi_rate, axis_phase, t, params, rng, &mut jumps,
                );
            }
            Op::Pulse { angle, axis_phase } => {
                shot = apply_instant_pulse_shot(shot, angle, axis_phase, params, rng)
            }
            Op::Collapse { id } => {
                let d = shot.to_density();
                let m = &mut out.measures[id];
                add_into(&mut m[..5], &density_sums(&d));
                m[5] += (d.p_e + d.p_f).powi(2);
                shot = ShotState::basis(collapse(&shot, rng));
                if let Some(ev) = events.as_deref_mut() {
                    ev.push(Event {
                        time: t,
                        kind: EventKind::Measure,
                        im_amplitude: None,
                    });
                }
            }
            Op::WindowOpen { .. } => {
                level_at_window = shot.level().expect("measured shot is in a basis state");
                jumps.clear();
                window_start = t;
            }
            Op::WindowClose { id } => {
                let record = sample_shot(level_at_window, &jumps, window_start, model, params, rng);
                decisions[id] = decide(&record, cfg);
                out.measures[id][6] += f64::from(u8::from(record.assignment == Assignment::E));
                last_record = Some(record);
            }
            Op::ReadoutEnd { .. } => {
                if let (Some(ev), Some(r)) = (events.as_deref_mut(), last_record) {
                    let kind = if r.assignment == Assignment::E {
                        EventKind::AssignE
                    } else {
                        EventKind::AssignG
                    };
                    ev.push(Event {
                        time: t,
                        kind,
                        im_amplitude: Some(r.amplitude.im),
                    });
                }
            }
            Op::Slot { id } => {
                let m = &mut out.measures[id];
                add_into(&mut m[7..12], &density_sums(&shot.to_density()));
                if decisions[id] == Action::Correct {
                    shot = apply_instant_pulse_shot(
                        shot,
                        cfg.correction_angle,
                        cfg.correction_axis_phase,
                        params,
                        rng,
                    );
                    if let Some(ev) = events.as_deref_mut() {
                        ev.push(Event {
                            time: t,
                            kind: EventKind::Correct,
                            im_amplitude: None,
                        });
                    }
                }
                add_into(
                    &mut out.measures[id][12..17],
                    &density_sums(&shot.to_density()),
                );
            }
            Op::Sample { index } => {
                let d = shot.to_density();
                let b = d.bloch();
                let s = &mut out.samples[index];
                add_into(&mut s[..5], &density_sums(&d));
                s[5] += b.x * b.x;
                s[6] += b.y * b.y;
                s[7] += b.z * b.z;
            }
        }
    }
    out.last = density_sums(&shot.to_density());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::calibrate_noise;

    fn setup() -> (PhysicalParams, ReadoutModel, ControllerConfig) {
        let p = PhysicalParams::default();
        let m = calibrate_noise(&p).unwrap();
        let c = ControllerConfig::from_params(&p);
        (p, m, c)
    }

    fn one_round(prep: Preparation, p: &PhysicalParams) -> Schedule {
        let mut s = Schedule::new(prep);
        let m = s.push(PulseSegment::measure(p.t_readout));
        s.push(PulseSegment::wait(p.t_latency));
        let c = s.push(PulseSegment::conditional_slot(0.0));
        s.link(m, c);
        s.push(PulseSegment::wait(1e-6));
        s
    }

    fn record(im: f64) -> MeasurementRecord {
        MeasurementRecord {
            amplitude: Complex64::new(0.0, im),
            assignment: Assignment::G,
            window_start: 0.0,
        }
    }

    #[test]
    fn threshold_decisions() {
        let (_, _, c) = setup();
        assert_eq!(decide(&record(0.5), &c), Action::Correct);
        assert_eq!(decide(&record(-0.5), &c), Action::None);
        assert_eq!(decide(&record(0.0), &c), Action::None);
    }

    #[test]
    fn excited_state_is_corrected() {
        let (p, m, c) = setup();
        let p = p.without_decoherence();
        let s = one_round(Preparation::Custom(QubitState::excited()), &p);
        for engine in [Engine::Ensemble, Engine::MonteCarlo { shots: 64, seed: 1 }] {
            let out = execute_schedule(&s, &c, &p, &m.noiseless(), engine, &[]).unwrap();
            assert!((out.final_state.p_g - 1.0).abs() < 1e-12, "{engine:?}");
        }
    }

    #[test]
    fn zero_latency_round_resets_diagonal_states() {
        let (p, m, _) = setup();
        let p = PhysicalParams {
            t_latency: 0.0,
            ..p.without_decoherence()
        };
        let c = ControllerConfig::from_params(&p);
        for pe in [0.0, 0.3, 0.5, 1.0] {
            let prep = Preparation::Custom(
                QubitState::new(1.0 - pe, pe, 0.0, Complex64::default()).unwrap(),
            );
            let out = execute_schedule(
                &one_round(prep, &p),
                &c,
                &p,
                &m.noiseless(),
                Engine::Ensemble,
                &[],
            )
            .unwrap();
            assert!(out.final_state.p_e.abs() < 1e-15);
        }
    }

    #[test]
    fn event_log_timing() {
        let (p, m, c) = setup();
        let s = one_round(
            Preparation::Custom(QubitState::excited()),
            &p.without_decoherence(),
        );
        let out = execute_schedule(
            &s,
            &c,
            &p,
            &m.noiseless(),
            Engine::MonteCarlo { shots: 1, seed: 0 },
            &[],
        )
        .unwrap();
        let kinds: Vec<_> = out.events.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![EventKind::Measure, EventKind::AssignE, EventKind::Correct]
        );
        assert!(out.events.windows(2).all(|w| w[0].time < w[1].time));
        assert!((out.events[2].time - out.events[1].time - p.t_latency).abs() < 1e-15);
        let csv = events_csv(&out.events);
        assert!(csv.starts_with("time_s,event,im_amplitude\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn sample_grid_shape() {
        let g = sample_grid(1e-6, 0.25e-6);
        assert_eq!(g.len(), 5);
        assert_eq!(sample_grid(1.1e-6, 0.25e-6).last().copied(), Some(1.1e-6));
    }

    #[test]
    fn samples_follow_instant_events() {
        let (p, m, c) = setup();
        let p = p.without_decoherence();
        let mut s = Schedule::new(Preparation::Ground);
        s.push(PulseSegment::wait(1e-6));
        s.push(PulseSegment::pulse(PI, PI / 2.0, 64e-9));
        let out = execute_schedule(
            &s,
            &c,
            &p,
            &m,
            Engine::Ensemble,
            &[0.0, 1e-6 + 32e-9, 1e-6 + 64e-9],
        )
        .unwrap();
        assert_eq!(out.trajectory.states[0].p_e, 0.0);
        assert!((out.trajectory.states[1].p_e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn engines_agree_on_one_reset() {
        let (p, m, c) = setup();
        let s = one_round(Preparation::MixedByPi, &p);
        let samples = sample_grid(s.total_duration(), 0.25e-6);
        let ens = execute_schedule(&s, &c, &p, &m, Engine::Ensemble, &samples).unwrap();
        let mc = execute_schedule(
            &s,
            &c,
            &p,
            &m,
            Engine::MonteCarlo {
                shots: 100_000,
                seed: 5,
            },
            &samples,
        )
        .unwrap();
        let se = mc.trajectory.stderr.as_ref().unwrap();
        for (i, (a, b)) in ens
            .trajectory
            .states
            .iter()
            .zip(&mc.trajectory.states)
            .enumerate()
        {
            let (a, b) = (a.bloch(), b.bloch());
            assert!(
                (a.z - b.z).abs() <= 3.0 * se[i].z + 1e-12,
                "t={} {} {}",
                samples[i],
                a.z,
                b.z
            );
        }
        let m0 = (&ens.measurements[0], &mc.measurements[0]);
        assert!((m0.0.prob_e - m0.1.prob_e).abs() < 3.0 * m0.1.prob_e_stderr.unwrap());
    }

    #[test]
    fn rejects_latency_mismatch_and_bad_windows() {
        let (p, m, c) = setup();
        let s = one_round(Preparation::Ground, &p);
        let late = ControllerConfig {
            latency: 400e-9,
            ..c
        };
        assert!(matches!(
            execute_schedule(&s, &late, &p, &m, Engine::Ensemble, &[]),
            Err(Error::Schedule(_))
        ));
        let mut short = Schedule::new(Preparation::Ground);
        short.push(PulseSegment::measure(0.5e-6));
        assert!(execute_schedule(&short, &c, &p, &m, Engine::Ensemble, &[]).is_err());
    }
}
