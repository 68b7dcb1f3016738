//! Ensemble engine: three-level Bloch/rate equations.
//!
//! The g–e block relaxes with Γ↓ = (1 − p_th)/T1 and Γ↑ = p_th/T1, the
//! coherence decays at 1/T2, and f relaxes into e at 1/T1f. Drive-free
//! stretches use the closed-form solution; driven stretches use classic RK4.

use num_complex::Complex64;

use super::{pulse_leaks, PulseSegment};
use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::state::{QubitState, STATE_TOLERANCE};

/// Largest RK4 step used for driven segments.
pub const DEFAULT_MAX_STEP: f64 = 1e-9;

/// Closed-form drive-free evolution over `t` seconds.
pub fn free_evolve(state: &QubitState, t: f64, params: &PhysicalParams) -> QubitState {
    if t == 0.0 {
        return *state;
    }
    let g1 = params.gamma_1();
    let gu = params.gamma_up();
    let gf = params.gamma_f();

    let p_f = state.p_f * (-gf * t).exp();
    let p_eq = if g1 > 0.0 { gu / g1 } else { 0.0 };
    let decay = (-g1 * t).exp();
    // ∫0^t e^{-g1 (t-s)} e^{-gf s} ds, written to stay accurate when gf ≈ g1
    let delta = g1 - gf;
    let feed = if (delta * t).abs() < 1e-8 {
        t * decay
    } else {
        decay * (delta * t).exp_m1() / delta
    };
    let p_e = p_eq + (state.p_e - p_eq) * decay + (gf - gu) * state.p_f * feed;
    let p_g = 1.0 - p_e - p_f - (state.trace() - 1.0);
    let c_ge = state.c_ge * (-params.gamma_2() * t).exp();
    QubitState {
        p_g,
        p_e,
        p_f,
        c_ge,
    }
}

/// Rotation of the g–e block by `angle` about the equatorial axis
/// `axis_phase`, followed by leakage of a fraction `p_leak` of the g–e
/// population into f for π-class pulses.
pub fn apply_instant_pulse(
    state: &QubitState,
    angle: f64,
    axis_phase: f64,
    params: &PhysicalParams,
) -> QubitState {
    let rotated = state.rotated(angle, axis_phase);
    if !pulse_leaks(angle) || params.p_leak == 0.0 {
        return rotated;
    }
    let keep = 1.0 - params.p_leak;
    let leaked = params.p_leak * (rotated.p_g + rotated.p_e);
    QubitState {
        p_g: rotated.p_g * keep,
        p_e: rotated.p_e * keep,
        p_f: rotated.p_f + leaked,
        c_ge: rotated.c_ge * keep,
    }
}

/// Evolves `state` through `seg` with the default step bound.
pub fn evolve_ensemble(
    state: &QubitState,
    seg: &PulseSegment,
    params: &PhysicalParams,
) -> Result<QubitState> {
    evolve_ensemble_with_step(state, seg, params, DEFAULT_MAX_STEP)
}

/// Evolves `state` through `seg`, integrating driven stretches with RK4 steps
/// no longer than `max_step`. Fails if the result leaves the physical region
/// by more than 1e-9, which signals a step too coarse for the drive.
pub fn evolve_ensemble_with_step(
    state: &QubitState,
    seg: &PulseSegment,
    params: &PhysicalParams,
    max_step: f64,
) -> Result<QubitState> {
    let out = if seg.rabi_rate == 0.0 {
        free_evolve(state, seg.duration, params)
    } else if seg.impulsive {
        let half = 0.5 * seg.duration;
        let mid = free_evolve(state, half, params);
        let kicked = apply_instant_pulse(&mid, seg.angle(), seg.axis_phase, params);
        free_evolve(&kicked, half, params)
    } else {
        integrate_driven(
            state,
            seg.duration,
            seg.rabi_rate,
            seg.axis_phase,
            params,
            max_step,
        )
    };
    let violation = out.positivity_violation();
    if violation > STATE_TOLERANCE {
        return Err(Error::StepTooCoarse {
            step: max_step.min(seg.duration),
            violation,
        });
    }
    Ok(out)
}

/// State vector layout: [p_g, p_e, p_f, x, y].
type Vector = [f64; 5];

struct Rates {
    down: f64,
    up: f64,
    f: f64,
    dephase: f64,
    wx: f64,
    wy: f64,
}

fn rhs(v: &Vector, r: &Rates) -> Vector {
    let [p_g, p_e, p_f, x, y] = *v;
    let z = p_e - p_g;
    let dz_drive = r.wx * y - r.wy * x;
    let dx = r.wy * z - r.dephase * x;
    let dy = -r.wx * z - r.dephase * y;
    let relax = r.down * p_e - r.up * p_g;
    [
        -0.5 * dz_drive + relax,
        0.5 * dz_drive - relax + r.f * p_f,
        -r.f * p_f,
        dx,
        dy,
    ]
}

fn axpy(a: f64, x: &Vector, y: &Vector) -> Vector {
    std::array::from_fn(|i| y[i] + a * x[i])
}

pub(crate) fn integrate_driven(
    state: &QubitState,
    duration: f64,
    rabi_rate: f64,
    axis_phase: f64,
    params: &PhysicalParams,
    max_step: f64,
) -> QubitState {
    if duration == 0.0 {
        return *state;
    }
    let rates = Rates {
        down: params.gamma_down(),
        up: params.gamma_up(),
        f: params.gamma_f(),
        dephase: params.gamma_2(),
        wx: rabi_rate * axis_phase.cos(),
        wy: rabi_rate * axis_phase.sin(),
    };
    let steps = (duration / max_step).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    let mut v: Vector = [
        state.p_g,
        state.p_e,
        state.p_f,
        2.0 * state.c_ge.re,
        2.0 * state.c_ge.im,
    ];
    for _ in 0..steps {
        let k1 = rhs(&v, &rates);
        let k2 = rhs(&axpy(0.5 * h, &k1, &v), &rates);
        let k3 = rhs(&axpy(0.5 * h, &k2, &v), &rates);
        let k4 = rhs(&axpy(h, &k3, &v), &rates);
        for i in 0..5 {
            v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    QubitState {
        p_g: v[0],
        p_e: v[1],
        p_f: v[2],
        c_ge: Complex64::new(0.5 * v[3], 0.5 * v[4]),
    }
}
