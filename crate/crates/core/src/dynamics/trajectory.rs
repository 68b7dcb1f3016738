//! Quantum jump unraveling of the ensemble dynamics.
//!
//! Between jumps a shot evolves under the non-Hermitian generator
//! H_eff = (Ω/2)(cos φ σx + sin φ σy) − (i/2)(Γ↓|e⟩⟨e| + Γ↑|g⟩⟨g|), whose
//! 2×2 exponential is taken in closed form. Jump times are found by solving
//! ‖ψ(t)‖² = r for a uniform r (the norm is monotone, so bisection is exact).
//! Pure dephasing is a Poisson process of σz flips at rate 1/(2Tφ), which
//! reproduces coherence decay at 1/Tφ. A shot in f relaxes to e at 1/T1f.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{pulse_leaks, PulseSegment};
use crate::params::PhysicalParams;
use crate::state::{Level, QubitState, ShotState};

/// A level change of a single shot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub from: Level,
    pub to: Level,
}

const BISECTION_ITERATIONS: usize = 60;

/// Spinor ordered (e, g).
type Spinor = [Complex64; 2];
type Matrix = [[Complex64; 2]; 2];

fn apply(m: &Matrix, v: &Spinor) -> Spinor {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

fn norm_sqr(v: &Spinor) -> f64 {
    v[0].norm_sqr() + v[1].norm_sqr()
}

/// Closed-form exp(−i H_eff t).
#[derive(Clone, Copy, Debug)]
struct NoJumpGenerator {
    /// Coefficients of −i H_eff = m0·I + a σx + b σy + c σz (per second).
    m0: f64,
    a: Complex64,
    b: Complex64,
    c: f64,
}

impl NoJumpGenerator {
    fn new(rabi_rate: f64, axis_phase: f64, params: &PhysicalParams) -> Self {
        let (down, up) = (params.gamma_down(), params.gamma_up());
        NoJumpGenerator {
            m0: -0.25 * (down + up),
            a: Complex64::new(0.0, -0.5 * rabi_rate * axis_phase.cos()),
            b: Complex64::new(0.0, -0.5 * rabi_rate * axis_phase.sin()),
            c: -0.25 * (down - up),
        }
    }

    fn propagator(&self, t: f64) -> Matrix {
        let (a, b, c) = (self.a * t, self.b * t, self.c * t);
        // N² = (a² + b² + c²) I, real here since a and b are imaginary
        let d2 = (a * a + b * b).re + c * c;
        let (ch, sh) = if d2.abs() < 1e-12 {
            (1.0 + d2 / 2.0, 1.0 + d2 / 6.0)
        } else if d2 > 0.0 {
            let d = d2.sqrt();
            (d.cosh(), d.sinh() / d)
        } else {
            let w = (-d2).sqrt();
            (w.cos(), w.sin() / w)
        };
        let scale = (self.m0 * t).exp();
        let i = Complex64::i();
        let one = Complex64::new(1.0, 0.0);
        let cc = Complex64::new(c, 0.0);
        [
            [(one * ch + cc * sh) * scale, (a - i * b) * sh * scale],
            [(a + i * b) * sh * scale, (one * ch - cc * sh) * scale],
        ]
    }
}

fn spinor_of(shot: &ShotState) -> Option<Spinor> {
    match *shot {
        ShotState::Qubit { g, e } => Some([e, g]),
        ShotState::Leaked => None,
    }
}

fn shot_of(v: Spinor) -> ShotState {
    let n = norm_sqr(&v).sqrt();
    ShotState::Qubit {
        e: v[0] / n,
        g: v[1] / n,
    }
}

fn exp_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate > 0.0 {
        Exp::new(rate)
            .map(|d| d.sample(rng))
            .unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    }
}

/// Evolves a shot for `duration` seconds under a constant drive, appending
/// level changes (absolute times from `t0`) to `log`.
#[allow(clippy::too_many_arguments)]
pub fn propagate_shot<R: Rng + ?Sized>(
    shot: ShotState,
    duration: f64,
    rabi_rate: f64,
    axis_phase: f64,
    t0: f64,
    params: &PhysicalParams,
    rng: &mut R,
    log: &mut Vec<Jump>,
) -> ShotState {
    let generator = NoJumpGenerator::new(rabi_rate, axis_phase, params);
    let flip_rate = 0.5 / params.t_phi;
    let mut shot = shot;
    let mut t = 0.0;
    while t < duration {
        let remaining = duration - t;
        let Some(psi) = spinor_of(&shot) else {
            let wait = exp_sample(params.gamma_f(), rng);
            if wait >= remaining {
                return shot;
            }
            t += wait;
            log.push(Jump {
                time: t0 + t,
                from: Level::F,
                to: Level::E,
            });
            shot = ShotState::excited();
            continue;
        };
        let flip_at = exp_sample(flip_rate, rng);
        let horizon = remaining.min(flip_at);
        let threshold = 1.0 - rng.random::<f64>();
        let end = apply(&generator.propagator(horizon), &psi);
        if norm_sqr(&end) >= threshold {
            let mut v = end;
            if flip_at < remaining {
                v[0] = -v[0];
            }
            shot = shot_of(v);
            t += horizon;
            continue;
        }
        // jump inside (0, horizon]: bisect on the monotone norm
        let (mut lo, mut hi) = (0.0, horizon);
        for _ in 0..BISECTION_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            if norm_sqr(&apply(&generator.propagator(mid), &psi)) >= threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let at = apply(&generator.propagator(hi), &psi);
        let w_down = params.gamma_down() * at[0].norm_sqr();
        let w_up = params.gamma_up() * at[1].norm_sqr();
        let (from, to) = if rng.random::<f64>() * (w_down + w_up) < w_down {
            (Level::E, Level::G)
        } else {
            (Level::G, Level::E)
        };
        t += hi;
        log.push(Jump {
            time: t0 + t,
            from,
            to,
        });
        shot = ShotState::basis(to);
    }
    shot
}

/// Instantaneous rotation of a shot. π-class pulses move the shot to f with
/// probability `p_leak`.
pub fn apply_instant_pulse_shot<R: Rng + ?Sized>(
    shot: ShotState,
    angle: f64,
    axis_phase: f64,
    params: &PhysicalParams,
    rng: &mut R,
) -> ShotState {
    let Some(psi) = spinor_of(&shot) else {
        return shot;
    };
    let (s, c) = (0.5 * angle).sin_cos();
    // exp(−i angle/2 (cos φ σx + sin φ σy))
    let off = Complex64::new(0.0, -s);
    let u: Matrix = [
        [
            Complex64::new(c, 0.0),
            off * Complex64::from_polar(1.0, -axis_phase),
        ],
        [
            off * Complex64::from_polar(1.0, axis_phase),
            Complex64::new(c, 0.0),
        ],
    ];
    let rotated = shot_of(apply(&u, &psi));
    if pulse_leaks(angle) && params.p_leak > 0.0 && rng.random::<f64>() < params.p_leak {
        return ShotState::Leaked;
    }
    rotated
}

/// Monte Carlo counterpart of [`super::evolve_ensemble`]: evolves one shot
/// through `seg` starting at absolute time `t0`, returning the final state and
/// the level changes that occurred.
pub fn sample_jump_trajectory<R: Rng + ?Sized>(
    shot: ShotState,
    seg: &PulseSegment,
    t0: f64,
    params: &PhysicalParams,
    rng: &mut R,
) -> (ShotState, Vec<Jump>) {
    let mut log = Vec::new();
    let out = if seg.impulsive && seg.rabi_rate != 0.0 {
        let half = 0.5 * seg.duration;
        let s = propagate_shot(shot, half, 0.0, 0.0, t0, params, rng, &mut log);
        let s = apply_instant_pulse_shot(s, seg.angle(), seg.axis_phase, params, rng);
        propagate_shot(s, half, 0.0, 0.0, t0 + half, params, rng, &mut log)
    } else {
        propagate_shot(
            shot,
            seg.duration,
            seg.rabi_rate,
            seg.axis_phase,
            t0,
            params,
            rng,
            &mut log,
        )
    };
    (out, log)
}

/// Projective measurement in the energy basis.
pub fn collapse<R: Rng + ?Sized>(shot: &ShotState, rng: &mut R) -> Level {
    match *shot {
        ShotState::Leaked => Level::F,
        ShotState::Qubit { e, .. } => {
            if rng.random::<f64>() < e.norm_sqr() {
                Level::E
            } else {
                Level::G
            }
        }
    }
}

/// Draws a pure shot state from a density state: f with probability p_f,
/// otherwise an eigenvector of the normalised g–e block with probability
/// equal to its eigenvalue.
pub fn sample_pure<R: Rng + ?Sized>(state: &QubitState, rng: &mut R) -> ShotState {
    let u: f64 = rng.random();
    if u < state.p_f {
        return ShotState::Leaked;
    }
    let b = state.bloch_normalized();
    let r = b.norm();
    if r == 0.0 {
        return if rng.random::<f64>() < 0.5 {
            ShotState::excited()
        } else {
            ShotState::ground()
        };
    }
    let dir = b.scale(1.0 / r);
    if rng.random::<f64>() < 0.5 * (1.0 + r) {
        ShotState::from_bloch(dir)
    } else {
        ShotState::from_bloch(dir.scale(-1.0))
    }
}
