//! Dispersive readout.
//!
//! The mode-averaged output field has a state-independent real part
//! √n̄·cos θ and an imaginary part ±μ = ±√n̄·sin θ for e/g, blurred by Gaussian
//! noise σ on both quadratures. A shot that relaxes during the integration
//! window lands in between, proportionally to the time spent on each side.
//! The f level reads as e.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::{erfc, erfc_inv};

use crate::dynamics::free_evolve;
use crate::dynamics::trajectory::{collapse, propagate_shot, Jump};
use crate::error::{Error, Result};
use crate::montecarlo::fold_shots;
use crate::params::PhysicalParams;
use crate::state::{Level, QubitState, ShotState};

/// Two-Gaussian overlap error the noise is calibrated to.
pub const TARGET_OVERLAP_ERROR: f64 = 0.002;

/// Noise multiplier with the parametric amplifier switched off.
pub const AMPLIFIER_OFF_NOISE_FACTOR: f64 = 8.0;

/// Largest relative deviation tolerated between the calibrated and the
/// first-principles noise scales.
pub const NOISE_CROSS_CHECK_TOLERANCE: f64 = 0.35;

/// Time slices used to integrate relaxation during the window.
pub const MEASUREMENT_SLICES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Assignment {
    G,
    E,
}

impl Assignment {
    /// ±1 outcome with +1 for e.
    pub fn sign(self) -> f64 {
        match self {
            Assignment::G => -1.0,
            Assignment::E => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub amplitude: Complex64,
    pub assignment: Assignment,
    /// Start of the integration window.
    pub window_start: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReadoutModel {
    /// Pointer displacement along Im a.
    pub mu: f64,
    /// Per-quadrature noise standard deviation.
    pub sigma: f64,
    /// State-independent Re a.
    pub re_mean: f64,
    pub threshold: f64,
    pub jpc_on: bool,
    /// (4 N_m)^{-1/2} η^{-1/2}, kept for reporting.
    pub sigma_first_principles: f64,
}

/// Noise calibrated to the target overlap error with the amplifier on.
pub fn calibrate_noise(params: &PhysicalParams) -> Result<ReadoutModel> {
    let alpha = params.n_bar.sqrt();
    let theta = params.pointer_angle();
    let mu = alpha * theta.sin();
    // 0.5 erfc(μ/(σ√2)) = ε
    let sigma = mu / (std::f64::consts::SQRT_2 * erfc_inv(2.0 * TARGET_OVERLAP_ERROR));
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParam {
            name: "sigma",
            reason: format!("calibrated noise {sigma} is not positive"),
        });
    }
    Ok(ReadoutModel {
        mu,
        sigma,
        re_mean: alpha * theta.cos(),
        threshold: 0.0,
        jpc_on: true,
        sigma_first_principles: 1.0 / (4.0 * params.mode_count()).sqrt() / params.eta.sqrt(),
    })
}

impl ReadoutModel {
    /// Copy with the amplifier state changed.
    pub fn with_jpc(&self, on: bool) -> Self {
        let sigma = match (self.jpc_on, on) {
            (true, false) => self.sigma * AMPLIFIER_OFF_NOISE_FACTOR,
            (false, true) => self.sigma / AMPLIFIER_OFF_NOISE_FACTOR,
            _ => self.sigma,
        };
        ReadoutModel {
            sigma,
            jpc_on: on,
            ..*self
        }
    }

    /// Copy without detection noise.
    pub fn noiseless(&self) -> Self {
        ReadoutModel {
            sigma: 0.0,
            ..*self
        }
    }

    /// Relative deviation of the calibrated noise from the first-principles scale.
    pub fn cross_check_deviation(&self) -> f64 {
        let on = if self.jpc_on {
            self.sigma
        } else {
            self.sigma / AMPLIFIER_OFF_NOISE_FACTOR
        };
        (on - self.sigma_first_principles).abs() / on
    }

    pub fn cross_check_passes(&self) -> bool {
        self.cross_check_deviation() <= NOISE_CROSS_CHECK_TOLERANCE
    }

    /// Probability of reading e for a noise-free mean `im_mean`.
    pub fn prob_assign_e(&self, im_mean: f64) -> f64 {
        if self.sigma == 0.0 {
            return if im_mean > self.threshold { 1.0 } else { 0.0 };
        }
        0.5 * erfc((self.threshold - im_mean) / (self.sigma * std::f64::consts::SQRT_2))
    }

    /// Misassignment of a shot that stays in g or e for the whole window.
    pub fn overlap_error(&self) -> f64 {
        0.5 * (self.prob_assign_e(-self.mu) + 1.0 - self.prob_assign_e(self.mu))
    }

    pub fn assign(&self, amplitude: Complex64) -> Assignment {
        if amplitude.im > self.threshold {
            Assignment::E
        } else {
            Assignment::G
        }
    }
}

/// Time spent on the e side (e or f) during `[start, start + length]`, given
/// the level at `start` and the jumps of the shot in time order.
pub fn excited_side_time(level_at_start: Level, jumps: &[Jump], start: f64, length: f64) -> f64 {
    let end = start + length;
    let mut level = level_at_start;
    let mut since = start;
    let mut acc = 0.0;
    for j in jumps.iter().filter(|j| j.time > start && j.time <= end) {
        if level.reads_as_excited() {
            acc += j.time - since;
        }
        level = j.to;
        since = j.time;
    }
    if level.reads_as_excited() {
        acc += end - since;
    }
    acc
}

/// Draws the measured amplitude of a shot whose level at the start of the
/// integration window is `level_at_start` and whose subsequent level changes
/// are `jumps`.
pub fn sample_shot<R: Rng + ?Sized>(
    level_at_start: Level,
    jumps: &[Jump],
    window_start: f64,
    model: &ReadoutModel,
    params: &PhysicalParams,
    rng: &mut R,
) -> MeasurementRecord {
    let t = params.t_integrate;
    let tau_e = excited_side_time(level_at_start, jumps, window_start, t);
    let im_mean = if t > 0.0 {
        model.mu * (2.0 * tau_e - t) / t
    } else {
        if level_at_start.reads_as_excited() {
            model.mu
        } else {
            -model.mu
        }
    };
    let nr: f64 = rng.sample(StandardNormal);
    let ni: f64 = rng.sample(StandardNormal);
    let amplitude = Complex64::new(model.re_mean + model.sigma * nr, im_mean + model.sigma * ni);
    MeasurementRecord {
        amplitude,
        assignment: model.assign(amplitude),
        window_start,
    }
}

/// Outcome of one readout pulse on a Monte Carlo shot.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotReadout {
    pub record: MeasurementRecord,
    /// Shot state at the end of the readout pulse.
    pub state: ShotState,
    /// Level at the start of the integration window.
    pub level_at_window: Level,
    /// Level changes during the readout pulse.
    pub jumps: Vec<Jump>,
}

impl ShotReadout {
    /// Whether the level changed inside the integration window.
    pub fn jumped_in_window(&self, params: &PhysicalParams) -> bool {
        let (a, b) = (
            self.record.window_start,
            self.record.window_start + params.t_integrate,
        );
        self.jumps.iter().any(|j| j.time > a && j.time <= b)
    }
}

/// Full readout pulse starting at `t0`: projective collapse, drive-free
/// evolution with jumps through the pulse, and amplitude sampling over the
/// centred integration window.
pub fn measure_shot<R: Rng + ?Sized>(
    shot: ShotState,
    t0: f64,
    model: &ReadoutModel,
    params: &PhysicalParams,
    rng: &mut R,
) -> ShotReadout {
    let offset = params.window_offset();
    let mut jumps = Vec::new();
    let collapsed = ShotState::basis(collapse(&shot, rng));
    let at_window = propagate_shot(collapsed, offset, 0.0, 0.0, t0, params, rng, &mut jumps);
    let level_at_window = at_window
        .level()
        .expect("collapsed shot stays in a basis state");
    let mut window_jumps = Vec::new();
    let window_start = t0 + offset;
    let after_window = propagate_shot(
        at_window,
        params.t_integrate,
        0.0,
        0.0,
        window_start,
        params,
        rng,
        &mut window_jumps,
    );
    let record = sample_shot(
        level_at_window,
        &window_jumps,
        window_start,
        model,
        params,
        rng,
    );
    jumps.extend(window_jumps);
    let tail = params.t_readout - offset - params.t_integrate;
    let state = propagate_shot(
        after_window,
        tail,
        0.0,
        0.0,
        window_start + params.t_integrate,
        params,
        rng,
        &mut jumps,
    );
    ShotReadout {
        record,
        state,
        level_at_window,
        jumps,
    }
}

/// Ensemble outcome of a readout: assignment probabilities and the
/// normalised post-measurement state of each branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureSplit {
    pub prob_g: f64,
    pub state_g: QubitState,
    pub prob_e: f64,
    pub state_e: QubitState,
}

/// Linear response of the integration window: for each level at window start,
/// the weight of ending in each level with each assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementKernel {
    /// `weights[start][assignment][end]`, assignment 0 = g, 1 = e.
    weights: [[[f64; 3]; 2]; 3],
    params: PhysicalParams,
}

fn level_index(l: Level) -> usize {
    match l {
        Level::G => 0,
        Level::E => 1,
        Level::F => 2,
    }
}

const LEVELS: [Level; 3] = [Level::G, Level::E, Level::F];

impl MeasurementKernel {
    /// Slices the window into `MEASUREMENT_SLICES` steps and tracks the joint
    /// distribution of level and accumulated e-side time (trapezoid rule in
    /// half-slice units).
    pub fn new(model: &ReadoutModel, params: &PhysicalParams) -> Self {
        Self::with_slices(model, params, MEASUREMENT_SLICES)
    }

    pub fn with_slices(model: &ReadoutModel, params: &PhysicalParams, slices: usize) -> Self {
        let h = params.t_integrate / slices as f64;
        let mut step = [[0.0; 3]; 3];
        for (i, &from) in LEVELS.iter().enumerate() {
            let out = free_evolve(&ShotState::basis(from).to_density(), h, params);
            step[i] = [out.p_g, out.p_e, out.p_f];
        }
        let side = |l: usize| usize::from(LEVELS[l].reads_as_excited());
        let bins = 2 * slices + 1;
        let mut weights = [[[0.0; 3]; 2]; 3];
        for start in 0..3 {
            let mut dp = vec![vec![0.0; bins]; 3];
            dp[start][0] = 1.0;
            for _ in 0..slices {
                let mut next = vec![vec![0.0; bins]; 3];
                for from in 0..3 {
                    for (m, &w) in dp[from].iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        for to in 0..3 {
                            let p = step[from][to];
                            if p != 0.0 {
                                next[to][m + side(from) + side(to)] += w * p;
                            }
                        }
                    }
                }
                dp = next;
            }
            for end in 0..3 {
                for (m, &w) in dp[end].iter().enumerate() {
                    // τ_e = m h / 2, Im mean = μ (2 τ_e / T − 1)
                    let im_mean = model.mu * (m as f64 / slices as f64 - 1.0);
                    let pe = model.prob_assign_e(im_mean);
                    weights[start][1][end] += w * pe;
                    weights[start][0][end] += w * (1.0 - pe);
                }
            }
        }
        MeasurementKernel {
            weights,
            params: *params,
        }
    }

    /// Measurement superoperator over the full readout pulse.
    pub fn apply(&self, state: &QubitState) -> MeasureSplit {
        let p = &self.params;
        let before = free_evolve(&state.dephased(), p.window_offset(), p);
        let pops = [before.p_g, before.p_e, before.p_f];
        let tail = p.t_readout - p.window_offset() - p.t_integrate;
        let mut probs = [0.0; 2];
        let mut states = [QubitState::ground(); 2];
        for a in 0..2 {
            let mut end = [0.0; 3];
            for (s, &w) in pops.iter().enumerate() {
                for (l, e) in end.iter_mut().enumerate() {
                    *e += w * self.weights[s][a][l];
                }
            }
            let total: f64 = end.iter().sum();
            probs[a] = total;
            if total > 0.0 {
                let branch = QubitState {
                    p_g: end[0] / total,
                    p_e: end[1] / total,
                    p_f: end[2] / total,
                    c_ge: Complex64::default(),
                };
                states[a] = free_evolve(&branch, tail, p);
            }
        }
        let norm = probs[0] + probs[1];
        MeasureSplit {
            prob_g: probs[0] / norm,
            state_g: states[0],
            prob_e: probs[1] / norm,
            state_e: states[1],
        }
    }

    /// Probability of assignment e for a shot at `start` when the window opens.
    pub fn prob_e_from(&self, start: Level) -> f64 {
        self.weights[level_index(start)][1].iter().sum()
    }
}

/// Convenience wrapper building a fresh kernel.
pub fn measure_superoperator(
    state: &QubitState,
    model: &ReadoutModel,
    params: &PhysicalParams,
) -> MeasureSplit {
    MeasurementKernel::new(model, params).apply(state)
}

/// Preparation of histogram shots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistogramPrep {
    G,
    E,
    Mixed,
}

/// 2D histogram of measured amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub re_edges: Vec<f64>,
    pub im_edges: Vec<f64>,
    /// `counts[re_bin][im_bin]`.
    pub counts: Vec<Vec<u64>>,
    pub re_marginal: Vec<u64>,
    pub im_marginal: Vec<u64>,
    pub shots: u64,
    /// Shots whose assignment differs from the prepared level.
    pub misassigned: u64,
    /// Shots with no level change inside the integration window.
    pub clean_shots: u64,
    /// Misassigned shots among the clean ones.
    pub clean_misassigned: u64,
}

impl Histogram {
    pub fn misassignment(&self) -> f64 {
        self.misassigned as f64 / self.shots as f64
    }

    /// Misassignment excluding shots with jumps inside the window.
    pub fn clean_misassignment(&self) -> f64 {
        self.clean_misassigned as f64 / self.clean_shots.max(1) as f64
    }

    pub fn bin_centers(edges: &[f64]) -> Vec<f64> {
        edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// CSV body with columns re_bin_center, im_bin_center, count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re_bin_center,im_bin_center,count\n");
        let re = Self::bin_centers(&self.re_edges);
        let im = Self::bin_centers(&self.im_edges);
        for (i, r) in re.iter().enumerate() {
            for (j, m) in im.iter().enumerate() {
                let _ = writeln!(out, "{r:.6},{m:.6},{}", self.counts[i][j]);
            }
        }
        out
    }

    /// Peak positions of the Im marginal on the negative and positive side,
    /// from a 9-bin moving average refined by a parabola through the maximum.
    pub fn im_modes(&self) -> Vec<f64> {
        let c = Self::bin_centers(&self.im_edges);
        let m = &self.im_marginal;
        let n = m.len();
        let smooth: Vec<f64> = (0..n)
            .map(|i| {
                let (lo, hi) = (i.saturating_sub(4), (i + 5).min(n));
                m[lo..hi].iter().sum::<u64>() as f64 / (hi - lo) as f64
            })
            .collect();
        let width = c.get(1).map_or(0.0, |b| b - c[0]);
        let peak = |range: std::ops::Range<usize>| -> Option<f64> {
            let i = range.max_by(|&a, &b| smooth[a].total_cmp(&smooth[b]))?;
            if smooth[i] <= 0.0 {
                return None;
            }
            let shift = if i > 0 && i + 1 < n {
                let (l, r) = (smooth[i - 1], smooth[i + 1]);
                let den = l - 2.0 * smooth[i] + r;
                if den < 0.0 {
                    0.5 * (l - r) / den
                } else {
                    0.0
                }
            } else {
                0.0
            };
            Some(c[i] + shift * width)
        };
        let split = c.partition_point(|&x| x < 0.0);
        [peak(0..split), peak(split..n)]
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Default histogram bins per axis.
pub const HISTOGRAM_BINS: usize = 200;

/// Simulates `shots` readouts of a prepared level and bins the amplitudes.
/// The mixed preparation alternates deterministically between g and e.
pub fn generate_histogram(
    prep: HistogramPrep,
    shots: u64,
    model: &ReadoutModel,
    params: &PhysicalParams,
    seed: u64,
) -> Histogram {
    let bins = HISTOGRAM_BINS;
    let half = model.mu.max(model.re_mean) + 5.0 * model.sigma;
    let lo_re = model.re_mean - half;
    let lo_im = -half;
    let width = 2.0 * half / bins as f64;
    let edges = |lo: f64| {
        (0..=bins)
            .map(|i| lo + i as f64 * width)
            .collect::<Vec<_>>()
    };
    let clamp = |v: f64, lo: f64| (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);

    #[derive(Clone)]
    struct Acc {
        counts: Vec<Vec<u64>>,
        misassigned: u64,
        clean: u64,
        clean_mis: u64,
    }
    let acc = fold_shots(
        shots,
        seed,
        || Acc {
            counts: vec![vec![0; bins]; bins],
            misassigned: 0,
            clean: 0,
            clean_mis: 0,
        },
        |acc, rng, i| {
            let level = match prep {
                HistogramPrep::G => Level::G,
                HistogramPrep::E => Level::E,
                HistogramPrep::Mixed => {
                    if i % 2 == 0 {
                        Level::G
                    } else {
                        Level::E
                    }
                }
            };
            let out = measure_shot(ShotState::basis(level), 0.0, model, params, rng);
            let a = out.record.amplitude;
            acc.counts[clamp(a.re, lo_re)][clamp(a.im, lo_im)] += 1;
            let wrong = (out.record.assignment == Assignment::E) != level.reads_as_excited();
            acc.misassigned += u64::from(wrong);
            if !out.jumped_in_window(params) {
                acc.clean += 1;
                let wrong_at_window = (out.record.assignment == Assignment::E)
                    != out.level_at_window.reads_as_excited();
                acc.clean_mis += u64::from(wrong_at_window);
            }
        },
        |mut a, b| {
            for (ra, rb) in a.counts.iter_mut().zip(&b.counts) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            a.misassigned += b.misassigned;
            a.clean += b.clean;
            a.clean_mis += b.clean_mis;
            a
        },
    );
    let re_marginal = acc.counts.iter().map(|r| r.iter().sum()).collect();
    let im_marginal = (0..bins)
        .map(|j| acc.counts.iter().map(|r| r[j]).sum())
        .collect();
    Histogram {
        re_edges: edges(lo_re),
        im_edges: edges(lo_im),
        counts: acc.counts,
        re_marginal,
        im_marginal,
        shots,
        misassigned: acc.misassigned,
        clean_shots: acc.clean,
        clean_misassigned: acc.clean_mis,
    }
}
