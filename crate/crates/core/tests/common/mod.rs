//! Invariant checks shared by the property suite and the acceptance gate.
#![allow(dead_code)]

use std::f64::consts::PI;

use qfeedback::controller::Engine;
use qfeedback::dynamics::{evolve_ensemble, PulseSegment};
use qfeedback::params::PhysicalParams;
use qfeedback::protocols::{
    build_rabi, integrated_angle, rotating_frame_map, run_reset, RabiConfig, ResetInit,
};
use qfeedback::readout::{calibrate_noise, MeasurementKernel, ReadoutModel};
use qfeedback::state::{Bloch, QubitState};

pub fn defaults() -> (PhysicalParams, ReadoutModel) {
    let p = PhysicalParams::default();
    let m = calibrate_noise(&p).unwrap();
    (p, m)
}

/// Valid state from a point in the unit ball and an f population.
pub fn state_from(r: f64, theta: f64, phi: f64, p_f: f64) -> QubitState {
    let len = r.clamp(0.0, 1.0) * (1.0 - p_f);
    let b = Bloch::new(
        len * theta.sin() * phi.cos(),
        len * theta.sin() * phi.sin(),
        len * theta.cos(),
    );
    QubitState::from_bloch(b, p_f).unwrap()
}

/// Segment kinds exercised by the trace and positivity check.
pub fn segment(kind: u8, duration: f64, rate: f64, phase: f64) -> PulseSegment {
    match kind % 3 {
        0 => PulseSegment::wait(duration),
        1 => PulseSegment::drive(duration, rate, phase),
        _ => PulseSegment::pulse(PI, phase, 64e-9),
    }
}

/// Largest trace or positivity error after evolving `state` through `seg`.
pub fn trace_positivity_error(
    state: &QubitState,
    seg: &PulseSegment,
    params: &PhysicalParams,
) -> f64 {
    let out = evolve_ensemble(state, seg, params).unwrap();
    (out.trace() - 1.0).abs().max(out.positivity_violation())
}

/// Same check through the measurement superoperator, both branches.
pub fn measurement_trace_positivity_error(state: &QubitState, kernel: &MeasurementKernel) -> f64 {
    let s = kernel.apply(state);
    let branch = |q: &QubitState| (q.trace() - 1.0).abs().max(q.positivity_violation());
    (s.prob_g + s.prob_e - 1.0)
        .abs()
        .max(branch(&s.state_g))
        .max(branch(&s.state_e))
}

/// Largest deviation of the per-period drive angle from 2π·omega_r·period.
pub fn angle_budget_error(
    omega_r: f64,
    boost: f64,
    drive_during_latency: bool,
    params: &PhysicalParams,
) -> f64 {
    let period = 4e-6;
    let cfg = RabiConfig {
        omega_r,
        period,
        boost_duration: boost,
        total_time: 24e-6,
        drive_during_latency,
        ..RabiConfig::default()
    };
    let s = build_rabi(&cfg, params).unwrap();
    let nominal = 2.0 * PI * omega_r * period;
    (0..5)
        .map(|k| {
            let a = integrated_angle(&s, k as f64 * period, (k + 1) as f64 * period);
            (a - nominal).abs()
        })
        .fold(0.0, f64::max)
}

/// Measures a diagonal state twice with no noise and no decoherence. Returns
/// (first-readout error against p_e, repeat disagreement), both expected 0.
pub fn qnd_double_measure(p_e: f64) -> (f64, f64) {
    let (p, m) = defaults();
    let p = p.without_decoherence();
    let kernel = MeasurementKernel::new(&m.noiseless(), &p);
    let state = QubitState::new(1.0 - p_e, p_e, 0.0, Default::default()).unwrap();
    let first = kernel.apply(&state);
    let mut repeat: f64 = 0.0;
    if first.prob_g > 0.0 {
        repeat = repeat.max(kernel.apply(&first.state_g).prob_e);
    }
    if first.prob_e > 0.0 {
        repeat = repeat.max(kernel.apply(&first.state_e).prob_g);
    }
    ((first.prob_e - p_e).abs(), repeat)
}

/// Relative change of the equatorial length under the display rotation.
pub fn frame_norm_error(x: f64, y: f64, t: f64, omega_ry: f64) -> f64 {
    let (u, v) = rotating_frame_map(x, y, t, omega_ry);
    let before = x.hypot(y);
    let after = u.hypot(v);
    (after - before).abs() / before.max(1.0)
}

/// Reruns a Monte Carlo reset with one and with four workers; true when all
/// three results are bit-identical.
pub fn deterministic_rerun(seed: u64, shots: u64) -> bool {
    let (p, m) = defaults();
    let run = || {
        let (o, out) = run_reset(
            2,
            ResetInit::Mixed,
            &p,
            &m,
            Engine::MonteCarlo { shots, seed },
        )
        .unwrap();
        (
            o.error.to_bits(),
            o.stderr.map(f64::to_bits),
            out.final_state,
        )
    };
    let a = run();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(run);
    let c = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(run);
    a == b && b == c
}
