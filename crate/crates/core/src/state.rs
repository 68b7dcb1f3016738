//! Qubit state representations.
//!
//! [`QubitState`] is the three-level density state used by the ensemble engine:
//! populations of g, e, f plus the g–e coherence `c_ge = ⟨g|ρ|e⟩`. The f level
//! carries no coherences. [`ShotState`] is the pure state followed by a single
//! Monte Carlo trajectory.
//!
//! Bloch convention: x = 2 Re c_ge, y = 2 Im c_ge, z = p_e − p_g (+1 for |e⟩).

use std::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance used when validating populations and positivity.
pub const STATE_TOLERANCE: f64 = 1e-9;

/// Bloch vector of the g–e block.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Bloch {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Bloch {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Bloch { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &Bloch) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn scale(&self, k: f64) -> Bloch {
        Bloch::new(self.x * k, self.y * k, self.z * k)
    }

    /// Right-handed rotation by `angle` about the equatorial axis at `axis_phase`
    /// (0 ↦ X, π/2 ↦ Y).
    pub fn rotated(&self, angle: f64, axis_phase: f64) -> Bloch {
        let (nx, ny) = (axis_phase.cos(), axis_phase.sin());
        let (s, c) = angle.sin_cos();
        let along = nx * self.x + ny * self.y;
        // n × r with n = (nx, ny, 0)
        let cross = Bloch::new(ny * self.z, -nx * self.z, nx * self.y - ny * self.x);
        Bloch::new(
            self.x * c + cross.x * s + nx * along * (1.0 - c),
            self.y * c + cross.y * s + ny * along * (1.0 - c),
            self.z * c + cross.z * s,
        )
    }
}

/// Energy level of a single shot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    G,
    E,
    F,
}

impl Level {
    /// Whether the readout pointer of this level lies on the e side.
    pub fn reads_as_excited(self) -> bool {
        !matches!(self, Level::G)
    }
}

/// Three-level density state with coherence only inside the g–e block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitState {
    pub p_g: f64,
    pub p_e: f64,
    pub p_f: f64,
    pub c_ge: Complex64,
}

impl QubitState {
    /// Validating constructor.
    pub fn new(p_g: f64, p_e: f64, p_f: f64, c_ge: Complex64) -> Result<Self> {
        let s = QubitState {
            p_g,
            p_e,
            p_f,
            c_ge,
        };
        s.validate()?;
        Ok(s)
    }

    pub const fn ground() -> Self {
        QubitState {
            p_g: 1.0,
            p_e: 0.0,
            p_f: 0.0,
            c_ge: Complex64::new(0.0, 0.0),
        }
    }

    pub const fn excited() -> Self {
        QubitState {
            p_g: 0.0,
            p_e: 1.0,
            p_f: 0.0,
            c_ge: Complex64::new(0.0, 0.0),
        }
    }

    pub const fn leaked() -> Self {
        QubitState {
            p_g: 0.0,
            p_e: 0.0,
            p_f: 1.0,
            c_ge: Complex64::new(0.0, 0.0),
        }
    }

    /// (|g⟩ + |e⟩)/√2.
    pub const fn plus_x() -> Self {
        QubitState {
            p_g: 0.5,
            p_e: 0.5,
            p_f: 0.0,
            c_ge: Complex64::new(0.5, 0.0),
        }
    }

    /// Equal mixture of |g⟩ and |e⟩.
    pub const fn maximally_mixed() -> Self {
        QubitState {
            p_g: 0.5,
            p_e: 0.5,
            p_f: 0.0,
            c_ge: Complex64::new(0.0, 0.0),
        }
    }

    /// Diagonal state in which the e-side population (e plus f) equals
    /// `p_e_thermal`, with `p_f_thermal` of it in f.
    pub fn thermal(p_e_thermal: f64, p_f_thermal: f64) -> Self {
        QubitState {
            p_g: 1.0 - p_e_thermal,
            p_e: p_e_thermal - p_f_thermal,
            p_f: p_f_thermal,
            c_ge: Complex64::new(0.0, 0.0),
        }
    }

    /// Inverse of [`QubitState::bloch`] for a given f population.
    pub fn from_bloch(b: Bloch, p_f: f64) -> Result<Self> {
        let ge = 1.0 - p_f;
        Self::new(
            0.5 * (ge - b.z),
            0.5 * (ge + b.z),
            p_f,
            Complex64::new(0.5 * b.x, 0.5 * b.y),
        )
    }

    /// Unnormalised Bloch components (x, y, z) of the g–e block.
    pub fn bloch(&self) -> Bloch {
        Bloch::new(2.0 * self.c_ge.re, 2.0 * self.c_ge.im, self.p_e - self.p_g)
    }

    /// Bloch vector of the g–e block renormalised after projecting out f.
    pub fn bloch_normalized(&self) -> Bloch {
        let ge = self.p_g + self.p_e;
        if ge <= 0.0 {
            return Bloch::default();
        }
        self.bloch().scale(1.0 / ge)
    }

    pub fn trace(&self) -> f64 {
        self.p_g + self.p_e + self.p_f
    }

    /// Largest violation of the positivity constraints (0 when valid).
    pub fn positivity_violation(&self) -> f64 {
        let neg = [self.p_g, self.p_e, self.p_f]
            .iter()
            .fold(0.0f64, |acc, &p| acc.max(-p));
        let coh = (self.c_ge.norm_sqr() - self.p_g.max(0.0) * self.p_e.max(0.0)).max(0.0);
        neg.max(coh)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.p_g, self.p_e, self.p_f, self.c_ge.re, self.c_ge.im]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidState("non-finite component".into()));
        }
        if (self.trace() - 1.0).abs() > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace {} != 1", self.trace())));
        }
        let v = self.positivity_violation();
        if v > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("positivity violated by {v:e}")));
        }
        Ok(())
    }

    /// Copy with the g–e coherence removed.
    pub fn dephased(&self) -> Self {
        QubitState {
            c_ge: Complex64::new(0.0, 0.0),
            ..*self
        }
    }

    /// Rotates the g–e block; populations of g and e follow the new z.
    pub fn rotated(&self, angle: f64, axis_phase: f64) -> Self {
        let ge = self.p_g + self.p_e;
        let b = self.bloch().rotated(angle, axis_phase);
        QubitState {
            p_g: 0.5 * (ge - b.z),
            p_e: 0.5 * (ge + b.z),
            p_f: self.p_f,
            c_ge: Complex64::new(0.5 * b.x, 0.5 * b.y),
        }
    }

    /// Divides every component by `w`.
    pub fn normalized_by(&self, w: f64) -> Self {
        *self * (1.0 / w)
    }
}

impl Add for QubitState {
    type Output = QubitState;
    fn add(self, o: QubitState) -> QubitState {
        QubitState {
            p_g: self.p_g + o.p_g,
            p_e: self.p_e + o.p_e,
            p_f: self.p_f + o.p_f,
            c_ge: self.c_ge + o.c_ge,
        }
    }
}

impl Mul<f64> for QubitState {
    type Output = QubitState;
    fn mul(self, k: f64) -> QubitState {
        QubitState {
            p_g: self.p_g * k,
            p_e: self.p_e * k,
            p_f: self.p_f * k,
            c_ge: self.c_ge * k,
        }
    }
}

/// Pure state of one Monte Carlo shot: either a normalised spinor in the g–e
/// block or the f level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShotState {
    Qubit { g: Complex64, e: Complex64 },
    Leaked,
}

impl ShotState {
    pub fn ground() -> Self {
        ShotState::Qubit {
            g: Complex64::new(1.0, 0.0),
            e: Complex64::new(0.0, 0.0),
        }
    }

    pub fn excited() -> Self {
        ShotState::Qubit {
            g: Complex64::new(0.0, 0.0),
            e: Complex64::new(1.0, 0.0),
        }
    }

    pub fn basis(level: Level) -> Self {
        match level {
            Level::G => Self::ground(),
            Level::E => Self::excited(),
            Level::F => ShotState::Leaked,
        }
    }

    /// Pure state with the given Bloch direction.
    pub fn from_bloch(b: Bloch) -> Self {
        let n = b.norm();
        let (theta, phi) = if n == 0.0 {
            (0.0, 0.0)
        } else {
            ((b.z / n).clamp(-1.0, 1.0).acos(), b.y.atan2(b.x))
        };
        // |ψ⟩ = cos(θ/2)|e⟩ + e^{iφ} sin(θ/2)|g⟩ gives ⟨g|ρ|e⟩ = e^{iφ} sin cos.
        ShotState::Qubit {
            e: Complex64::new((theta / 2.0).cos(), 0.0),
            g: Complex64::from_polar((theta / 2.0).sin(), phi),
        }
    }

    pub fn to_density(&self) -> QubitState {
        match *self {
            ShotState::Qubit { g, e } => QubitState {
                p_g: g.norm_sqr(),
                p_e: e.norm_sqr(),
                p_f: 0.0,
                c_ge: g * e.conj(),
            },
            ShotState::Leaked => QubitState::leaked(),
        }
    }

    /// Definite level, if the shot is in a basis state.
    pub fn level(&self) -> Option<Level> {
        match *self {
            ShotState::Leaked => Some(Level::F),
            ShotState::Qubit { g, e } => {
                if e.norm_sqr() == 0.0 {
                    Some(Level::G)
                } else if g.norm_sqr() == 0.0 {
                    Some(Level::E)
                } else {
                    None
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    #[test]
    fn bloch_of_reference_states() {
        assert_eq!(QubitState::ground().bloch(), Bloch::new(0.0, 0.0, -1.0));
        assert_eq!(QubitState::plus_x().bloch(), Bloch::new(1.0, 0.0, 0.0));
        assert_eq!(
            QubitState::maximally_mixed().bloch(),
            Bloch::new(0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn from_bloch_round_trip() {
        let s = QubitState::new(0.3, 0.65, 0.05, Complex64::new(0.1, -0.2)).unwrap();
        let back = QubitState::from_bloch(s.bloch(), s.p_f).unwrap();
        assert!((back.p_g - s.p_g).abs() < 1e-15);
        assert!((back.p_e - s.p_e).abs() < 1e-15);
        assert_eq!(back.c_ge, s.c_ge);
    }

    #[test]
    fn validation_rejects_bad_states() {
        assert!(QubitState::new(0.6, 0.6, 0.0, Complex64::default()).is_err());
        assert!(QubitState::new(1.1, -0.1, 0.0, Complex64::default()).is_err());
        assert!(QubitState::new(0.5, 0.5, 0.0, Complex64::new(0.6, 0.0)).is_err());
        assert!(QubitState::new(0.5, 0.5, 0.0, Complex64::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn rotations_follow_right_hand_rule() {
        let g = Bloch::new(0.0, 0.0, -1.0);
        let e = g.rotated(PI, PI / 2.0);
        assert!((e.z - 1.0).abs() < 1e-15);
        let x = Bloch::new(1.0, 0.0, 0.0).rotated(PI, PI / 2.0);
        assert!((x.x + 1.0).abs() < 1e-15 && x.z.abs() < 1e-15);
        // +π/2 about Y carries +X onto |g⟩
        let to_g = Bloch::new(1.0, 0.0, 0.0).rotated(PI / 2.0, PI / 2.0);
        assert!((to_g.z + 1.0).abs() < 1e-15);
    }

    #[test]
    fn shot_state_density() {
        let s = ShotState::Qubit {
            g: Complex64::new(FRAC_1_SQRT_2, 0.0),
            e: Complex64::new(FRAC_1_SQRT_2, 0.0),
        };
        let b = s.to_density().bloch();
        assert!((b.x - 1.0).abs() < 1e-15 && b.z.abs() < 1e-15);
        for dir in [
            Bloch::new(0.0, 1.0, 0.0),
            Bloch::new(0.6, -0.0, 0.8),
            Bloch::new(0.0, 0.0, -1.0),
        ] {
            let b = ShotState::from_bloch(dir).to_density().bloch();
            assert!(
                (b.x - dir.x).abs() < 1e-12
                    && (b.y - dir.y).abs() < 1e-12
                    && (b.z - dir.z).abs() < 1e-12
            );
        }
        assert_eq!(ShotState::Leaked.level(), Some(Level::F));
        assert_eq!(ShotState::ground().level(), Some(Level::G));
    }
}
