//! Pulse schedules and the two evolution engines.
//!
//! [`ensemble`] integrates the three-level Bloch/rate equations for the
//! density state; [`trajectory`] unravels the same dynamics into pure-state
//! quantum jump trajectories.

pub mod ensemble;
pub mod trajectory;

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::state::QubitState;

pub use ensemble::{apply_instant_pulse, evolve_ensemble, evolve_ensemble_with_step, free_evolve};
pub use trajectory::{sample_jump_trajectory, Jump};

/// Absolute tolerance on schedule timing comparisons.
pub const TIMING_TOLERANCE: f64 = 1e-15;

/// Role of a schedule segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Drive,
    Wait,
    MeasureWindow,
    ConditionalSlot,
}

/// One piecewise-constant stretch of the control timeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseSegment {
    pub duration: f64,
    /// Rabi angular frequency Ω (rad/s); zero unless `kind` is `Drive`.
    pub rabi_rate: f64,
    /// Equatorial rotation axis: 0 ↦ X, π/2 ↦ Y.
    pub axis_phase: f64,
    pub kind: SegmentKind,
    /// Drive applied as an instantaneous rotation at the segment midpoint.
    pub impulsive: bool,
    /// Part of a sensing/actuation block (no tomography inside).
    pub blanked: bool,
}

impl PulseSegment {
    pub fn wait(duration: f64) -> Self {
        PulseSegment {
            duration,
            rabi_rate: 0.0,
            axis_phase: 0.0,
            kind: SegmentKind::Wait,
            impulsive: false,
            blanked: false,
        }
    }

    /// Continuous resonant drive.
    pub fn drive(duration: f64, rabi_rate: f64, axis_phase: f64) -> Self {
        PulseSegment {
            rabi_rate,
            axis_phase,
            kind: SegmentKind::Drive,
            ..Self::wait(duration)
        }
    }

    /// Short pulse of the given rotation angle, applied at the segment midpoint.
    pub fn pulse(angle: f64, axis_phase: f64, duration: f64) -> Self {
        PulseSegment {
            rabi_rate: angle / duration,
            axis_phase,
            kind: SegmentKind::Drive,
            impulsive: true,
            ..Self::wait(duration)
        }
    }

    pub fn measure(duration: f64) -> Self {
        PulseSegment {
            kind: SegmentKind::MeasureWindow,
            ..Self::wait(duration)
        }
    }

    pub fn conditional_slot(duration: f64) -> Self {
        PulseSegment {
            kind: SegmentKind::ConditionalSlot,
            ..Self::wait(duration)
        }
    }

    pub fn blanked(self) -> Self {
        PulseSegment {
            blanked: true,
            ..self
        }
    }

    /// Rotation angle delivered by the segment.
    pub fn angle(&self) -> f64 {
        self.rabi_rate * self.duration
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Schedule(format!(
                "segment duration {} invalid",
                self.duration
            )));
        }
        if !self.rabi_rate.is_finite() || !self.axis_phase.is_finite() {
            return Err(Error::Schedule("non-finite drive parameters".into()));
        }
        if self.kind != SegmentKind::Drive && self.rabi_rate != 0.0 {
            return Err(Error::Schedule(format!(
                "{:?} segment carries a drive",
                self.kind
            )));
        }
        if self.impulsive && self.duration == 0.0 {
            return Err(Error::Schedule(
                "impulsive pulse needs a positive duration".into(),
            ));
        }
        Ok(())
    }
}

/// How the initial state is prepared before the first segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preparation {
    Ground,
    /// Thermal state of the device.
    Thermal,
    /// Maximally mixed state made by applying a π pulse to half the shots.
    MixedByPi,
    Custom(QubitState),
}

/// Links a measurement window to the conditional slot acting on its outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchLink {
    pub measure: usize,
    pub slot: usize,
}

/// Ordered, gap-free sequence of segments plus feedback links.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub preparation: Preparation,
    pub segments: Vec<PulseSegment>,
    pub links: Vec<BranchLink>,
}

impl Schedule {
    pub fn new(preparation: Preparation) -> Self {
        Schedule {
            preparation,
            segments: Vec::new(),
            links: Vec::new(),
        }
    }

    /// Appends a segment and returns its index.
    pub fn push(&mut self, seg: PulseSegment) -> usize {
        self.segments.push(seg);
        self.segments.len() - 1
    }

    pub fn link(&mut self, measure: usize, slot: usize) {
        self.links.push(BranchLink { measure, slot });
    }

    /// Start time of every segment.
    pub fn start_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration;
                start
            })
            .collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Blanked intervals `[start, end)` merged where contiguous.
    pub fn blanked_intervals(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (seg, start) in self.segments.iter().zip(self.start_times()) {
            if !seg.blanked {
                continue;
            }
            let end = start + seg.duration;
            match out.last_mut() {
                Some(last) if (last.1 - start).abs() <= TIMING_TOLERANCE * 1e3 => last.1 = end,
                _ => out.push((start, end)),
            }
        }
        out
    }

    pub fn is_blanked(&self, t: f64) -> bool {
        self.blanked_intervals()
            .iter()
            .any(|&(a, b)| t >= a && t < b)
    }

    /// Checks segment invariants and that every conditional slot starts exactly
    /// `latency` after the end of the measurement window it is linked to.
    pub fn validate(&self, latency: f64) -> Result<()> {
        for seg in &self.segments {
            seg.validate()?;
        }
        let starts = self.start_times();
        let mut slot_seen = vec![false; self.segments.len()];
        let mut measure_seen = vec![false; self.segments.len()];
        for link in &self.links {
            let (m, s) = (link.measure, link.slot);
            if m >= self.segments.len() || s >= self.segments.len() {
                return Err(Error::Schedule(format!("link {m}->{s} out of range")));
            }
            if self.segments[m].kind != SegmentKind::MeasureWindow {
                return Err(Error::Schedule(format!(
                    "segment {m} is not a measurement window"
                )));
            }
            if self.segments[s].kind != SegmentKind::ConditionalSlot {
                return Err(Error::Schedule(format!(
                    "segment {s} is not a conditional slot"
                )));
            }
            if s <= m {
                return Err(Error::Schedule(format!(
                    "slot {s} precedes its measurement {m}"
                )));
            }
            if slot_seen[s] || measure_seen[m] {
                return Err(Error::Schedule(format!("duplicate link {m}->{s}")));
            }
            slot_seen[s] = true;
            measure_seen[m] = true;
            let gap = starts[s] - (starts[m] + self.segments[m].duration);
            let tol = TIMING_TOLERANCE.max(1e-9 * latency.abs());
            if (gap - latency).abs() > tol {
                return Err(Error::Schedule(format!(
                    "slot {s} starts {gap:e} s after its measurement ends, expected {latency:e} s"
                )));
            }
            // no other measurement may start before the linked slot fires
            if (m + 1..s).any(|i| self.segments[i].kind == SegmentKind::MeasureWindow) {
                return Err(Error::Schedule(format!(
                    "measurement inside latency gap of {m}->{s}"
                )));
            }
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.kind == SegmentKind::ConditionalSlot && !slot_seen[i] {
                return Err(Error::Schedule(format!(
                    "conditional slot {i} is not linked"
                )));
            }
        }
        Ok(())
    }
}

/// Whether an instantaneous rotation of this angle can leak population to f.
/// Only π-class pulses leak.
pub fn pulse_leaks(angle: f64) -> bool {
    angle.abs() >= PI * (1.0 - 1e-9)
}
