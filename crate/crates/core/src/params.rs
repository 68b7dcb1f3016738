//! Device parameters and the constants derived from them.
//!
//! All quantities are SI: times in seconds, rates and dispersive couplings in
//! rad/s. Absolute transition frequencies are carried as metadata only since
//! the dynamics run in the frame rotating at the qubit frequency.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Physical constants of the qubit, cavity and readout chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalParams {
    /// Energy relaxation time of the e level.
    pub t1: f64,
    /// Pure dephasing time.
    pub t_phi: f64,
    /// Dispersive shift χ (rad/s).
    pub chi: f64,
    /// Input port coupling (rad/s).
    pub kappa_in: f64,
    /// Output port coupling (rad/s).
    pub kappa_out: f64,
    /// Mean intracavity readout photon number.
    pub n_bar: f64,
    /// End-to-end detection efficiency.
    pub eta: f64,
    /// Thermal population of e.
    pub p_e_thermal: f64,
    /// Thermal population of f.
    pub p_f_thermal: f64,
    /// Duration of a π/2 pulse.
    pub t_pulse_pi2: f64,
    /// Readout pulse length.
    pub t_readout: f64,
    /// Steady integration window inside the readout pulse.
    pub t_integrate: f64,
    /// Delay from the end of the readout pulse to the conditional pulse.
    pub t_latency: f64,
    /// Probability that a π pulse leaks population into f.
    pub p_leak: f64,
    /// Relaxation time f → e.
    pub t1_f: f64,
}

/// Leakage per π pulse. Calibrated once with [`crate::protocols::calibrate_leakage`]
/// so that two resets starting from the maximally mixed state leave 1.1 % of the
/// population outside |g⟩.
pub const CALIBRATED_P_LEAK: f64 = 0.008_132;

impl Default for PhysicalParams {
    fn default() -> Self {
        let t1 = 28e-6;
        PhysicalParams {
            t1,
            t_phi: 14.5e-6,
            chi: TWO_PI * 0.78e6,
            kappa_in: TWO_PI * 0.34e6,
            kappa_out: TWO_PI * 1.49e6,
            n_bar: 1.4,
            eta: 0.67,
            p_e_thermal: 0.024,
            p_f_thermal: 0.0006,
            t_pulse_pi2: 64e-9,
            t_readout: 1.2e-6,
            t_integrate: 0.957e-6,
            t_latency: 500e-9,
            p_leak: CALIBRATED_P_LEAK,
            t1_f: t1 / 2.0,
        }
    }
}

/// Metadata frequencies (Hz). Not used by the dynamics.
pub mod metadata {
    pub const CAVITY_FREQUENCY_HZ: f64 = 7.748e9;
    pub const QUBIT_FREQUENCY_HZ: f64 = 3.576e9;
    pub const ANHARMONICITY_HZ: f64 = 198e6;
    /// Share of the feedback delay spent in the controller logic.
    pub const LOGIC_DELAY_S: f64 = 360e-9;
}

type Field = (
    &'static str,
    fn(&PhysicalParams) -> f64,
    fn(&mut PhysicalParams, f64),
);

const FIELDS: [Field; 15] = [
    ("t1", |p| p.t1, |p, v| p.t1 = v),
    ("t_phi", |p| p.t_phi, |p, v| p.t_phi = v),
    ("chi", |p| p.chi, |p, v| p.chi = v),
    ("kappa_in", |p| p.kappa_in, |p, v| p.kappa_in = v),
    ("kappa_out", |p| p.kappa_out, |p, v| p.kappa_out = v),
    ("n_bar", |p| p.n_bar, |p, v| p.n_bar = v),
    ("eta", |p| p.eta, |p, v| p.eta = v),
    ("p_e_thermal", |p| p.p_e_thermal, |p, v| p.p_e_thermal = v),
    ("p_f_thermal", |p| p.p_f_thermal, |p, v| p.p_f_thermal = v),
    ("t_pulse_pi2", |p| p.t_pulse_pi2, |p, v| p.t_pulse_pi2 = v),
    ("t_readout", |p| p.t_readout, |p, v| p.t_readout = v),
    ("t_integrate", |p| p.t_integrate, |p, v| p.t_integrate = v),
    ("t_latency", |p| p.t_latency, |p, v| p.t_latency = v),
    ("p_leak", |p| p.p_leak, |p, v| p.p_leak = v),
    ("t1_f", |p| p.t1_f, |p, v| p.t1_f = v),
];

fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}

impl PhysicalParams {
    /// Checks every field invariant.
    pub fn validate(&self) -> Result<()> {
        for (name, get, _) in FIELDS.iter() {
            let v = get(self);
            if !v.is_finite() && !(v == f64::INFINITY && matches!(*name, "t1" | "t_phi" | "t1_f")) {
                return Err(invalid(name, format!("{v} is not finite")));
            }
        }
        for (name, v) in [
            ("t1", self.t1),
            ("t_phi", self.t_phi),
            ("t_pulse_pi2", self.t_pulse_pi2),
            ("t_readout", self.t_readout),
            ("t_integrate", self.t_integrate),
            ("t1_f", self.t1_f),
        ] {
            if v <= 0.0 {
                return Err(invalid(name, format!("{v} must be > 0")));
            }
        }
        if self.t_latency < 0.0 {
            return Err(invalid("t_latency", "must be >= 0"));
        }
        if self.t_integrate > self.t_readout {
            return Err(invalid("t_integrate", "longer than the readout pulse"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(invalid("eta", format!("{} outside (0, 1]", self.eta)));
        }
        for (name, v) in [
            ("p_e_thermal", self.p_e_thermal),
            ("p_f_thermal", self.p_f_thermal),
            ("p_leak", self.p_leak),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid(name, format!("{v} outside [0, 1)")));
            }
        }
        if self.p_f_thermal > self.p_e_thermal {
            return Err(invalid("p_f_thermal", "exceeds p_e_thermal"));
        }
        if self.chi < 0.0 || self.kappa_in < 0.0 || self.kappa_out < 0.0 || self.n_bar < 0.0 {
            return Err(invalid("chi", "cavity constants must be non-negative"));
        }
        Ok(())
    }

    pub fn kappa_total(&self) -> f64 {
        self.kappa_in + self.kappa_out
    }

    /// Coherence time from 1/T2 = 1/(2 T1) + 1/Tφ.
    pub fn derived_t2(&self) -> f64 {
        1.0 / (self.gamma_1() / 2.0 + 1.0 / self.t_phi)
    }

    /// Angle of the readout pointer states, arctan(2χ/κ_tot).
    pub fn pointer_angle(&self) -> f64 {
        (2.0 * self.chi / self.kappa_total()).atan()
    }

    /// Number of independent temporal modes averaged in the integration window.
    pub fn mode_count(&self) -> f64 {
        self.t_integrate * self.kappa_total()
    }

    pub fn gamma_1(&self) -> f64 {
        1.0 / self.t1
    }

    /// e → g rate.
    pub fn gamma_down(&self) -> f64 {
        (1.0 - self.p_e_thermal) / self.t1
    }

    /// g → e rate.
    pub fn gamma_up(&self) -> f64 {
        self.p_e_thermal / self.t1
    }

    /// f → e rate.
    pub fn gamma_f(&self) -> f64 {
        1.0 / self.t1_f
    }

    pub fn gamma_2(&self) -> f64 {
        1.0 / self.derived_t2()
    }

    /// Offset of the integration window from the start of the readout pulse.
    /// The window is centred in the pulse.
    pub fn window_offset(&self) -> f64 {
        0.5 * (self.t_readout - self.t_integrate)
    }

    /// Copy with every dissipative channel switched off.
    pub fn without_decoherence(&self) -> Self {
        PhysicalParams {
            t1: f64::INFINITY,
            t_phi: f64::INFINITY,
            t1_f: f64::INFINITY,
            p_e_thermal: 0.0,
            p_f_thermal: 0.0,
            p_leak: 0.0,
            ..*self
        }
    }

    /// Applies `name = value` lines on top of `self`.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: idx + 1,
                message: format!("expected `name = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value: f64 = value.trim().parse().map_err(|_| Error::Config {
                line: idx + 1,
                message: format!("`{}` is not a number", value.trim()),
            })?;
            let field = FIELDS
                .iter()
                .find(|f| f.0 == key)
                .ok_or_else(|| Error::Config {
                    line: idx + 1,
                    message: format!("unknown parameter `{key}`"),
                })?;
            (field.2)(self, value);
        }
        Ok(())
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut p = PhysicalParams::default();
        p.apply_config(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::from_config_str(&text)
    }

    /// `name=value` pairs of every field, `; `-separated.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (i, (name, get, _)) in FIELDS.iter().enumerate() {
            if i > 0 {
                out.push_str("; ");
            }
            let _ = write!(out, "{name}={}", get(self));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t2_defaults_and_limits() {
        let p = PhysicalParams::default();
        assert!((p.derived_t2() - 11.52e-6).abs() < 0.01e-6);
        assert!((p.derived_t2() / 11.5e-6 - 1.0).abs() < 0.01);

        let relax_limited = PhysicalParams {
            t_phi: f64::INFINITY,
            ..p
        };
        assert!((relax_limited.derived_t2() - 56e-6).abs() < 1e-15);

        let dephase_limited = PhysicalParams {
            t1: f64::INFINITY,
            t_phi: 10e-6,
            ..p
        };
        assert!((dephase_limited.derived_t2() - 10e-6).abs() < 1e-18);
    }

    #[test]
    fn pointer_angle_cases() {
        let p = PhysicalParams::default();
        assert!((p.pointer_angle() - 0.706).abs() < 1e-3);
        assert!((p.pointer_angle().to_degrees() - 40.4).abs() < 0.1);
        assert_eq!(PhysicalParams { chi: 0.0, ..p }.pointer_angle(), 0.0);
        let strong = PhysicalParams {
            chi: 100.0 * p.kappa_total(),
            ..p
        };
        assert!((strong.pointer_angle().to_degrees() - 89.7).abs() < 0.05);
    }

    #[test]
    fn mode_count_cases() {
        let p = PhysicalParams::default();
        assert!((p.mode_count() - 11.0).abs() < 0.01);
        let zero = PhysicalParams {
            t_integrate: 0.0,
            ..p
        };
        assert_eq!(zero.mode_count(), 0.0);
        let doubled = PhysicalParams {
            t_integrate: 2.0 * p.t_integrate,
            ..p
        };
        assert!((doubled.mode_count() - 2.0 * p.mode_count()).abs() < 1e-12);
        assert!((doubled.mode_count() - 22.0).abs() < 0.02);
    }

    #[test]
    fn defaults_validate() {
        PhysicalParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_invalid_fields() {
        let p = PhysicalParams::default();
        for bad in [
            PhysicalParams { t1: 0.0, ..p },
            PhysicalParams { t_phi: -1.0, ..p },
            PhysicalParams { eta: 0.0, ..p },
            PhysicalParams { eta: 1.2, ..p },
            PhysicalParams { p_leak: 1.0, ..p },
            PhysicalParams {
                p_e_thermal: -0.1,
                ..p
            },
            PhysicalParams {
                t_readout: 0.0,
                ..p
            },
            PhysicalParams {
                t_integrate: 2e-6,
                ..p
            },
            PhysicalParams {
                t_latency: -1e-9,
                ..p
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn config_parsing() {
        let p = PhysicalParams::from_config_str(
            "# device\n t1 = 30e-6\n\neta=0.8 # trailing comment\n",
        )
        .unwrap();
        assert_eq!(p.t1, 30e-6);
        assert_eq!(p.eta, 0.8);
        assert_eq!(p.t_phi, PhysicalParams::default().t_phi);

        assert!(matches!(
            PhysicalParams::from_config_str("t1 30e-6"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            PhysicalParams::from_config_str("\nbogus = 1"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            PhysicalParams::from_config_str("eta = x"),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            PhysicalParams::from_config_str("eta = 2"),
            Err(Error::InvalidParam { name: "eta", .. })
        ));
    }

    #[test]
    fn describe_round_trips_through_config() {
        let p = PhysicalParams {
            t1: 31e-6,
            ..PhysicalParams::default()
        };
        let text = p.describe().replace("; ", "\n");
        assert_eq!(PhysicalParams::from_config_str(&text).unwrap(), p);
    }
}
