//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! when the set of failing criteria differs from `EXPECTED_FAIL`.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use qfeedback::controller::{execute_schedule, sample_grid, ControllerConfig, Engine, RunOutput};
use qfeedback::dynamics::{Preparation, PulseSegment, Schedule};
use qfeedback::metrics::{coherence, fit_exponential, FitModel, SampleSelection};
use qfeedback::params::PhysicalParams;
use qfeedback::protocols::{
    build_rabi, build_ramsey, run_protocol, run_reset, summarize, RabiConfig, RamseyConfig,
    ResetInit, Summary, Target,
};
use qfeedback::readout::{
    calibrate_noise, generate_histogram, HistogramPrep, MeasurementKernel, ReadoutModel,
};
use qfeedback::state::QubitState;

use common::*;

/// Criteria the model cannot reach; the printed line still says FAIL.
const EXPECTED_FAIL: &[&str] = &["A4"];

const SHOTS: u64 = 100_000;
const SEED: u64 = 20_130_214;
/// Grid for time averages along the simulated trajectory.
const FINE_STEP: f64 = 10e-9;
/// Tomography grid.
const TOMO_STEP: f64 = 250e-9;

struct Check {
    ok: bool,
    text: String,
}

fn check(ok: bool, text: String) -> Check {
    Check { ok, text }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn band(label: &str, value: f64, target: f64, tol: f64) -> Check {
    check(
        within(value, target, tol),
        format!("{label} {value:.4} (want {target} ± {tol})"),
    )
}

fn a1(p: &PhysicalParams, m: &ReadoutModel) -> Vec<Check> {
    let started = Instant::now();
    let cells = [
        (ResetInit::Mixed, 0, 0.50, 0.005),
        (ResetInit::Mixed, 1, 0.036, 0.010),
        (ResetInit::Mixed, 2, 0.011, 0.005),
        (ResetInit::Thermal, 0, 0.024, 0.0),
        (ResetInit::Thermal, 1, 0.007, 0.003),
        (ResetInit::Thermal, 2, 0.006, 0.003),
    ];
    let mut out = Vec::new();
    for (init, n, target, tol) in cells {
        let engine = Engine::MonteCarlo {
            shots: SHOTS,
            seed: SEED,
        };
        let (mc, _) = run_reset(n, init, p, m, engine).unwrap();
        let label = format!("{init:?}/{n}");
        if tol == 0.0 {
            // exact by construction in the ensemble; the sampled value must agree within 3 SE
            let (ens, _) = run_reset(n, init, p, m, Engine::Ensemble).unwrap();
            let se = mc.stderr.unwrap();
            let ok = (ens.error - target).abs() < 1e-12 && (mc.error - target).abs() <= 3.0 * se;
            out.push(check(
                ok,
                format!(
                    "{label} {:.4} (ensemble {:.6}, want {target} exact)",
                    mc.error, ens.error
                ),
            ));
        } else {
            out.push(band(&label, mc.error, target, tol));
        }
    }
    let elapsed = started.elapsed();
    out.push(check(
        elapsed <= Duration::from_secs(60),
        format!("runtime {:.1} s", elapsed.as_secs_f64()),
    ));
    out
}

fn averages(
    schedule: &Schedule,
    target: Target,
    start: f64,
    end: f64,
    p: &PhysicalParams,
    m: &ReadoutModel,
) -> Summary {
    let out = run_protocol(schedule, p, m, Engine::Ensemble, FINE_STEP).unwrap();
    summarize(&out.trajectory, target, start, end, SampleSelection::All).unwrap()
}

fn a2(p: &PhysicalParams, m: &ReadoutModel) -> Vec<Check> {
    let started = Instant::now();
    let s = build_ramsey(&RamseyConfig::default(), p).unwrap();
    let avg = averages(&s, Target::Ramsey, 4e-6, 40e-6, p, m);
    let elapsed = started.elapsed();
    vec![
        band("F", avg.fidelity, 0.76, 0.03),
        band("purity", avg.purity, 0.85, 0.03),
        band("bits", avg.information, 0.60, 0.05),
        check(
            elapsed <= Duration::from_secs(10),
            format!("runtime {:.2} s", elapsed.as_secs_f64()),
        ),
    ]
}

fn a3(p: &PhysicalParams, m: &ReadoutModel) -> Vec<Check> {
    // without actuation the steady state builds up on the T1 scale
    let total = 80e-6;
    let cfg = RamseyConfig {
        actuation: false,
        total_time: total,
        ..RamseyConfig::default()
    };
    let s = build_ramsey(&cfg, p).unwrap();
    let avg = averages(&s, Target::Ramsey, 40e-6, total, p, m);

    let tomo = run_protocol(&s, p, m, Engine::Ensemble, TOMO_STEP)
        .unwrap()
        .trajectory;
    let (t, c): (Vec<f64>, Vec<f64>) = tomo
        .times
        .iter()
        .zip(&tomo.states)
        .zip(&tomo.blanked)
        .filter(|(_, &b)| !b)
        .map(|((&t, s), _)| (t, coherence(s)))
        .unzip();
    let fit = fit_exponential(
        &t,
        &c,
        0.0,
        total,
        FitModel::FixedDecay {
            decay_time: p.derived_t2(),
        },
    )
    .unwrap();
    vec![
        band("purity", avg.purity, 0.52, 0.03),
        band("F", avg.fidelity, 0.56, 0.03),
        band("bits", avg.information, 0.03, 0.02),
        band("persistent coherence", fit.offset, 0.18, 0.03),
    ]
}

fn a4(p: &PhysicalParams, m: &ReadoutModel) -> Vec<Check> {
    let s = build_rabi(&RabiConfig::default(), p).unwrap();
    let target = Target::Rabi { omega_r: 250e3 };
    let avg = averages(&s, target, 4e-6, 40e-6, p, m);
    let out = run_protocol(&s, p, m, Engine::Ensemble, FINE_STEP).unwrap();
    let jumps: Vec<f64> = out
        .measurements
        .iter()
        .filter_map(|st| st.around_slot)
        .map(|(before, after)| {
            let (a, b) = (before.bloch(), after.bloch());
            ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
        })
        .collect();
    let smallest = jumps.iter().copied().fold(f64::INFINITY, f64::min);
    vec![
        band("F", avg.fidelity, 0.85, 0.03),
        band("purity", avg.purity, 0.80, 0.03),
        band("bits", avg.information, 0.50, 0.05),
        check(
            !jumps.is_empty() && smallest > 1e-3,
            format!(
                "{} corrections, smallest Bloch jump {smallest:.4}",
                jumps.len()
            ),
        ),
    ]
}

fn free_run(
    prep: QubitState,
    seg: PulseSegment,
    step: f64,
    p: &PhysicalParams,
    m: &ReadoutModel,
) -> RunOutput {
    let mut s = Schedule::new(Preparation::Custom(prep));
    s.push(seg);
    let samples = sample_grid(s.total_duration(), step);
    execute_schedule(
        &s,
        &ControllerConfig::from_params(p),
        p,
        m,
        Engine::Ensemble,
        &samples,
    )
    .unwrap()
}

fn a5(p: &PhysicalParams, m: &ReadoutModel) -> Vec<Check> {
    let series = |out: &RunOutput, f: &dyn Fn(&QubitState) -> f64| -> (Vec<f64>, Vec<f64>) {
        (
            out.trajectory.times.clone(),
            out.trajectory.states.iter().map(f).collect(),
        )
    };
    let relax = free_run(
        QubitState::excited(),
        PulseSegment::wait(150e-6),
        500e-9,
        p,
        m,
    );
    let (t, z) = series(&relax, &|s| s.bloch().z);
    let t1 = fit_exponential(&t, &z, 0.0, 150e-6, FitModel::Exponential)
        .unwrap()
        .decay_time;

    let ramsey = free_run(
        QubitState::plus_x(),
        PulseSegment::wait(60e-6),
        250e-9,
        p,
        m,
    );
    let (t, c) = series(&ramsey, &|s| 2.0 * s.c_ge.norm());
    let t2 = fit_exponential(&t, &c, 0.0, 60e-6, FitModel::Exponential)
        .unwrap()
        .decay_time;

    let rabi = free_run(
        QubitState::ground(),
        PulseSegment::drive(60e-6, 2.0 * PI * 250e3, PI / 2.0),
        50e-9,
        p,
        m,
    );
    let (t, z) = series(&rabi, &|s| s.bloch().z);
    let tr = fit_exponential(
        &t,
        &z,
        0.0,
        60e-6,
        FitModel::DampedCosine {
            frequency_guess: 250e3,
        },
    )
    .unwrap()
    .decay_time;
    vec![
        band("T1 us", t1 * 1e6, 28.0, 28.0 * 0.02),
        band("T2 us", t2 * 1e6, 11.5, 11.5 * 0.03),
        check(
            (14.5e-6..=17e-6).contains(&tr),
            format!("T_R us {:.3} (want 14.5..17)", tr * 1e6),
        ),
    ]
}

fn a6(p: &PhysicalParams, m: &ReadoutModel) -> Vec<Check> {
    let h = generate_histogram(HistogramPrep::Mixed, 1_000_000, m, p, SEED);
    let off = generate_histogram(HistogramPrep::Mixed, SHOTS, &m.with_jpc(false), p, SEED);
    let modes = h.im_modes();
    vec![
        band(
            "clean misassignment %",
            100.0 * h.clean_misassignment(),
            0.2,
            0.02,
        ),
        band(
            "pointer angle deg",
            p.pointer_angle().to_degrees(),
            40.4,
            0.1,
        ),
        band("N_m", p.mode_count(), 11.0, 0.1),
        check(
            off.misassignment() > 0.20,
            format!(
                "jpc off misassignment {:.3} (want > 0.2)",
                off.misassignment()
            ),
        ),
        check(
            modes.len() == 2 && within(modes[0], -m.mu, 0.01) && within(modes[1], m.mu, 0.01),
            format!("Im modes {modes:.3?} (want ±{:.3})", m.mu),
        ),
    ]
}

/// Monte Carlo against ensemble at every tomography point: largest |z| and χ².
struct Agreement {
    max_z: f64,
    chi2: f64,
    dof: usize,
    exact_mismatch: bool,
}

impl Agreement {
    fn new() -> Self {
        Agreement {
            max_z: 0.0,
            chi2: 0.0,
            dof: 0,
            exact_mismatch: false,
        }
    }

    fn add(&mut self, mc: f64, ens: f64, se: f64) {
        if se < 1e-12 {
            // every shot gave the same value
            self.exact_mismatch |= (mc - ens).abs() > 1e-9;
            return;
        }
        let z = (mc - ens) / se;
        self.max_z = self.max_z.max(z.abs());
        self.chi2 += z * z;
        self.dof += 1;
    }

    fn check(&self, label: &str) -> Check {
        let n = self.dof as f64;
        let limit = n + 3.0 * (2.0 * n).sqrt();
        let ok = !self.exact_mismatch && self.max_z <= 3.0 && self.chi2 <= limit;
        check(
            ok,
            format!(
                "{label} max|z| {:.2}, chi2 {:.1}/{} (limit {limit:.1})",
                self.max_z, self.chi2, self.dof
            ),
        )
    }
}

fn compare_trajectories(schedule: &Schedule, p: &PhysicalParams, m: &ReadoutModel) -> Agreement {
    let ens = run_protocol(schedule, p, m, Engine::Ensemble, TOMO_STEP)
        .unwrap()
        .trajectory;
    let mc = run_protocol(
        schedule,
        p,
        m,
        Engine::MonteCarlo {
            shots: SHOTS,
            seed: SEED,
        },
        TOMO_STEP,
    )
    .unwrap()
    .trajectory;
    let se = mc.stderr.as_ref().unwrap();
    let mut agg = Agreement::new();
    for i in (0..ens.times.len()).filter(|&i| !ens.blanked[i]) {
        let (a, b) = (mc.states[i].bloch(), ens.states[i].bloch());
        agg.add(a.x, b.x, se[i].x);
        agg.add(a.y, b.y, se[i].y);
        agg.add(a.z, b.z, se[i].z);
    }
    agg
}

fn a7(p: &PhysicalParams, m: &ReadoutModel) -> Vec<Check> {
    let mut out = Vec::new();
    let mut reset = Agreement::new();
    for init in [ResetInit::Mixed, ResetInit::Thermal] {
        let (_, ens) = run_reset(2, init, p, m, Engine::Ensemble).unwrap();
        let (_, mc) = run_reset(
            2,
            init,
            p,
            m,
            Engine::MonteCarlo {
                shots: SHOTS,
                seed: SEED,
            },
        )
        .unwrap();
        for (a, b) in mc.measurements.iter().zip(&ens.measurements) {
            reset.add(
                a.excited_side(),
                b.excited_side(),
                a.excited_side_stderr.unwrap(),
            );
        }
    }
    out.push(reset.check("reset"));
    let ramsey = build_ramsey(&RamseyConfig::default(), p).unwrap();
    out.push(compare_trajectories(&ramsey, p, m).check("ramsey"));
    let bare = build_ramsey(
        &RamseyConfig {
            actuation: false,
            ..RamseyConfig::default()
        },
        p,
    )
    .unwrap();
    out.push(compare_trajectories(&bare, p, m).check("ramsey no actuation"));
    let rabi = build_rabi(&RabiConfig::default(), p).unwrap();
    out.push(compare_trajectories(&rabi, p, m).check("rabi"));
    out
}

fn a8(p: &PhysicalParams, m: &ReadoutModel) -> Vec<Check> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(SEED);
    let kernel = MeasurementKernel::with_slices(m, p, 64);
    let mut trace: f64 = 0.0;
    let mut budget: f64 = 0.0;
    let mut qnd: f64 = 0.0;
    let mut frame: f64 = 0.0;
    for _ in 0..200 {
        let s = state_from(
            rng.random(),
            rng.random_range(0.0..PI),
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.0..0.2),
        );
        let seg = segment(
            rng.random_range(0..3),
            rng.random_range(1e-9..20e-6),
            rng.random_range(0.0..2.0 * PI * 5e6),
            rng.random_range(0.0..2.0 * PI),
        );
        trace = trace
            .max(trace_positivity_error(&s, &seg, p))
            .max(measurement_trace_positivity_error(&s, &kernel));
        budget = budget.max(angle_budget_error(
            rng.random_range(100e3..400e3),
            rng.random_range(100e-9..1.1e-6),
            rng.random(),
            p,
        ));
        let (first, repeat) = qnd_double_measure(rng.random());
        qnd = qnd.max(first).max(repeat);
        frame = frame.max(frame_norm_error(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..1e-3),
            rng.random_range(0.0..1e6),
        ));
    }
    let rerun = (0..3).all(|k| deterministic_rerun(SEED + k, 3000));
    vec![
        check(trace <= 1e-9, format!("trace/positivity {trace:.1e}")),
        check(budget <= 1e-9, format!("angle budget {budget:.1e}")),
        check(qnd < 1e-12, format!("QND repeat {qnd:.1e}")),
        check(frame <= 1e-15, format!("frame norm {frame:.1e}")),
        check(rerun, format!("bit-identical reruns {rerun}")),
    ]
}

fn main() {
    let p = PhysicalParams::default();
    let m = calibrate_noise(&p).unwrap();
    type Criterion = fn(&PhysicalParams, &ReadoutModel) -> Vec<Check>;
    let criteria: [(&str, &str, Criterion); 8] = [
        ("A1", "reset table", a1),
        ("A2", "Ramsey stabilization", a2),
        ("A3", "Ramsey without actuation", a3),
        ("A4", "Rabi stabilization", a4),
        ("A5", "free-decay fits", a5),
        ("A6", "readout", a6),
        ("A7", "engine cross-check", a7),
        ("A8", "property suites", a8),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let started = Instant::now();
        let checks = run(&p, &m);
        let ok = checks.iter().all(|c| c.ok);
        let detail: Vec<String> = checks
            .iter()
            .map(|c| format!("{}{}", if c.ok { "" } else { "!" }, c.text))
            .collect();
        println!(
            "{id} {} {name} [{:.1} s]: {}",
            if ok { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            detail.join("; ")
        );
        if ok == EXPECTED_FAIL.contains(&id) {
            unexpected.push(id);
        }
    }
    if !EXPECTED_FAIL.is_empty() {
        println!("known shortfalls: {}", EXPECTED_FAIL.join(", "));
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
