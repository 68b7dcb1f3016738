//! Figures of merit over simulated trajectories.
//!
//! Two-level metrics act on the g–e block renormalised after projecting out f;
//! purity is taken over the full three-level state.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state::{Bloch, QubitState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineTag {
    Ensemble,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub engine: EngineTag,
    pub seed: Option<u64>,
    pub shots: Option<u64>,
}

/// Time series of ensemble states from either engine.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    /// Ensemble (or shot-averaged) density state at each time.
    pub states: Vec<QubitState>,
    /// Standard errors of the unnormalised Bloch components (Monte Carlo only).
    pub stderr: Option<Vec<Bloch>>,
    /// Whether each sample falls inside a sensing/actuation interval.
    pub blanked: Vec<bool>,
    pub provenance: Provenance,
}

impl TrajectoryEnsemble {
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.states.len() != n || self.blanked.len() != n {
            return Err(Error::InvalidState(
                "trajectory columns differ in length".into(),
            ));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidState(
                "sample times not strictly increasing".into(),
            ));
        }
        let mc = self.provenance.engine == EngineTag::MonteCarlo;
        if mc != self.stderr.is_some() {
            return Err(Error::InvalidState(
                "standard errors must be present iff Monte Carlo".into(),
            ));
        }
        if let Some(se) = &self.stderr {
            if se.len() != n {
                return Err(Error::InvalidState("stderr column length".into()));
            }
        }
        Ok(())
    }

    /// Index of the sample closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 {
            0
        } else if i == self.times.len() || (t - self.times[i - 1]) <= (self.times[i] - t) {
            i - 1
        } else {
            i
        }
    }
}

/// Tr ρ² of the three-level state.
pub fn purity(state: &QubitState) -> f64 {
    state.p_g * state.p_g
        + state.p_e * state.p_e
        + state.p_f * state.p_f
        + 2.0 * state.c_ge.norm_sqr()
}

/// ⟨ψ|ρ|ψ⟩ for the pure g–e state with unit Bloch vector `target`.
pub fn fidelity(state: &QubitState, target: &Bloch) -> f64 {
    let ge = state.p_g + state.p_e;
    0.5 * (ge + state.bloch().dot(target))
}

fn binary_entropy(p: f64) -> f64 {
    [p, 1.0 - p]
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum()
}

/// 1 − S(ρ) in bits on the renormalised g–e block.
pub fn information_bits(state: &QubitState) -> f64 {
    let r = state.bloch_normalized().norm().min(1.0);
    1.0 - binary_entropy(0.5 * (1.0 + r))
}

/// |⟨σx + iσy⟩| on the renormalised g–e block.
pub fn coherence(state: &QubitState) -> f64 {
    let b = state.bloch_normalized();
    b.x.hypot(b.y)
}

/// Which samples enter a time average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSelection {
    /// Every simulated sample.
    All,
    /// Only samples outside sensing/actuation intervals.
    Tomography,
}

/// Trapezoidal average of `metric` over the selected samples in `[start, end]`.
pub fn time_average<F>(
    ens: &TrajectoryEnsemble,
    metric: F,
    start: f64,
    end: f64,
    selection: SampleSelection,
) -> Result<f64>
where
    F: Fn(usize, f64, &QubitState) -> f64,
{
    let tol = 1e-12;
    let points: Vec<(f64, f64)> = ens
        .times
        .iter()
        .enumerate()
        .filter(|&(i, &t)| {
            t >= start - tol
                && t <= end + tol
                && (selection == SampleSelection::All || !ens.blanked[i])
        })
        .map(|(i, &t)| (t, metric(i, t, &ens.states[i])))
        .collect();
    match points.len() {
        0 => Err(Error::InvalidParam {
            name: "window",
            reason: format!("no samples in [{start:e}, {end:e}]"),
        }),
        1 => Ok(points[0].1),
        _ => {
            let span = points[points.len() - 1].0 - points[0].0;
            let area: f64 = points
                .windows(2)
                .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
                .sum();
            Ok(area / span)
        }
    }
}

/// Model fitted by [`fit_exponential`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitModel {
    /// a e^{−t/τ} + c.
    Exponential,
    /// a e^{−t/τ} cos(2π f t) + c, starting from a frequency guess.
    DampedCosine { frequency_guess: f64 },
    /// a e^{−t/τ} + c with τ held fixed (a linear least-squares problem).
    FixedDecay { decay_time: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitResult {
    pub amplitude: f64,
    pub decay_time: f64,
    pub offset: f64,
    pub frequency: Option<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

pub const FIT_MAX_ITERATIONS: usize = 500;

fn model_eval(p: &[f64], t: f64) -> (f64, Vec<f64>) {
    // p = [a, k, c] or [a, k, c, w] with k = 1/τ and w = 2π f in scaled time
    let (a, k, c) = (p[0], p[1], p[2]);
    let e = (-k * t).exp();
    if p.len() == 3 {
        (a * e + c, vec![e, -a * t * e, 1.0])
    } else {
        let w = p[3];
        let (s, co) = (w * t).sin_cos();
        (
            a * e * co + c,
            vec![e * co, -a * t * e * co, 1.0, -a * e * t * s],
        )
    }
}

/// Levenberg–Marquardt fit of `model` to `(t, y)` samples with `t` inside
/// `[start, end]`. Needs at least 10 samples.
pub fn fit_exponential(
    times: &[f64],
    values: &[f64],
    start: f64,
    end: f64,
    model: FitModel,
) -> Result<FitResult> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(&t, _)| t >= start && t <= end)
        .map(|(&t, &y)| (t, y))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InvalidParam {
            name: "window",
            reason: format!("{} samples, need at least 10", pts.len()),
        });
    }
    if let FitModel::FixedDecay { decay_time } = model {
        return fit_fixed_decay(&pts, decay_time);
    }
    let t0 = pts[0].0;
    let scale = (pts[pts.len() - 1].0 - t0).max(f64::MIN_POSITIVE);
    let ts: Vec<f64> = pts.iter().map(|p| (p.0 - t0) / scale).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let n = ts.len();

    let tail = ys[n - n / 5..].iter().sum::<f64>() / (n / 5).max(1) as f64;
    let mut p = match model {
        FitModel::Exponential | FitModel::FixedDecay { .. } => vec![ys[0] - tail, 3.0, tail],
        FitModel::DampedCosine { frequency_guess } => {
            let mean = ys.iter().sum::<f64>() / n as f64;
            vec![
                ys[0] - mean,
                1.0,
                mean,
                2.0 * std::f64::consts::PI * frequency_guess * scale,
            ]
        }
    };
    let m = p.len();
    let cost = |p: &[f64]| {
        ts.iter()
            .zip(&ys)
            .map(|(&t, &y)| (model_eval(p, t).0 - y).powi(2))
            .sum::<f64>()
    };
    let mut current = cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITERATIONS {
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(n, m);
        let mut res = DVector::<f64>::zeros(n);
        for (i, (&t, &y)) in ts.iter().zip(&ys).enumerate() {
            let (f, g) = model_eval(&p, t);
            res[i] = y - f;
            for j in 0..m {
                jac[(i, j)] = g[j];
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for j in 0..m {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let c = cost(&trial);
            if c.is_finite() && c <= current {
                let rel = (current - c) / current.max(f64::MIN_POSITIVE);
                let step_small = step
                    .iter()
                    .zip(&trial)
                    .all(|(s, v)| s.abs() <= 1e-12 * v.abs().max(1e-12));
                p = trial;
                current = c;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel < 1e-14 || step_small || current < 1e-28 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !improved {
            // a failed damping search means the gradient step vanished: a minimum
            converged = true;
            break;
        }
    }
    if !converged || p[1] <= 0.0 || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence {
            iterations,
            residual: current.sqrt(),
        });
    }
    // undo the time scaling: t' = (t − t0)/scale
    let decay_time = scale / p[1];
    let frequency = (m == 4).then(|| p[3].abs() / (2.0 * std::f64::consts::PI * scale));
    // the exponential amplitude is referred to t = 0; with a cosine the phase
    // is pinned at the window start, so the amplitude is reported there
    let amplitude = if m == 4 {
        p[0]
    } else {
        p[0] * (p[1] * t0 / scale).exp()
    };
    Ok(FitResult {
        amplitude,
        decay_time,
        offset: p[2],
        frequency,
        residual_norm: current.sqrt(),
        iterations,
    })
}

fn fit_fixed_decay(pts: &[(f64, f64)], decay_time: f64) -> Result<FitResult> {
    let n = pts.len();
    let design = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            (-pts[i].0 / decay_time).exp()
        } else {
            1.0
        }
    });
    let y = DVector::from_iterator(n, pts.iter().map(|p| p.1));
    let svd = design.clone().svd(true, true);
    let coef = svd.solve(&y, 1e-12).map_err(|_| Error::NonConvergence {
        iterations: 1,
        residual: f64::NAN,
    })?;
    let residual = (&design * &coef - &y).norm();
    Ok(FitResult {
        amplitude: coef[0],
        decay_time,
        offset: coef[1],
        frequency: None,
        residual_norm: residual,
        iterations: 1,
    })
}

/// One row of the metrics summary.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub window_start: f64,
    pub window_end: f64,
    pub value: f64,
    pub stderr: Option<f64>,
}

/// CSV body with columns metric, window_start, window_end, value, stderr.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("metric,window_start,window_end,value,stderr\n");
    for r in rows {
        let se = r.stderr.map(|s| format!("{s:.6e}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{:.6e},{:.6e},{:.6},{}",
            r.metric, r.window_start, r.window_end, r.value, se
        );
    }
    out
}
