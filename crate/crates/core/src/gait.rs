//! Trot scheduling and swing-foot trajectories.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{Leg, LimbMorphology};

/// Periodic footfall plan. Leg phase is `(t / period + offset) mod 1`; a leg
/// is in stance while its phase is below the duty factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitSchedule {
    /// Stride period (s).
    pub period: f64,
    pub duty_factor: f64,
    /// Phase offsets in FR, FL, HR, HL order, fractions of the period.
    pub offsets: [f64; 4],
}

impl Default for GaitSchedule {
    fn default() -> Self {
        GaitSchedule::trot(0.5, 0.5)
    }
}

/// One leg's place in the gait cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegPhase {
    pub stance: bool,
    /// Phase within the full stride, in [0, 1).
    pub cycle: f64,
    /// Progress through the current stance or swing, in [0, 1).
    pub progress: f64,
}

impl GaitSchedule {
    /// Diagonal pairs FR+HL and FL+HR in anti-phase.
    pub fn trot(period: f64, duty_factor: f64) -> Self {
        GaitSchedule {
            period,
            duty_factor,
            offsets: [0.0, 0.5, 0.5, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::InvalidGait(format!("period must be > 0, got {}", self.period)));
        }
        if !(self.duty_factor > 0.0 && self.duty_factor < 1.0) {
            return Err(Error::InvalidGait(format!(
                "duty factor must lie in (0, 1), got {}",
                self.duty_factor
            )));
        }
        for (leg, &o) in Leg::ALL.iter().zip(&self.offsets) {
            if !(0.0..1.0).contains(&o) {
                return Err(Error::InvalidGait(format!("{leg} offset {o} outside [0, 1)")));
            }
        }
        for leg in [Leg::FrontRight, Leg::FrontLeft] {
            let d = leg.diagonal();
            if self.offsets[leg.index()] != self.offsets[d.index()] {
                return Err(Error::InvalidGait(format!("{leg} and {d} must share a phase offset")));
            }
        }
        Ok(())
    }

    pub fn stance_duration(&self) -> f64 {
        self.period * self.duty_factor
    }

    pub fn swing_duration(&self) -> f64 {
        self.period * (1.0 - self.duty_factor)
    }

    pub fn leg_phase(&self, leg: Leg, t: f64) -> LegPhase {
        let raw = t / self.period + self.offsets[leg.index()];
        let cycle = raw - raw.floor();
        if cycle < self.duty_factor {
            LegPhase {
                stance: true,
                cycle,
                progress: cycle / self.duty_factor,
            }
        } else {
            LegPhase {
                stance: false,
                cycle,
                progress: (cycle - self.duty_factor) / (1.0 - self.duty_factor),
            }
        }
    }

    /// Phase of every leg at time `t`, FR, FL, HR, HL order.
    pub fn schedule_at(&self, t: f64) -> [LegPhase; 4] {
        Leg::ALL.map(|leg| self.leg_phase(leg, t))
    }
}

/// `10s³ − 15s⁴ + 6s⁵`: zero first and second derivative at both ends.
fn smoothstep(s: f64) -> f64 {
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

fn smoothstep_rate(s: f64) -> f64 {
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

/// Foot path from lift-off to touchdown with the apex `clearance` above the
/// higher endpoint at mid-swing. Vertical is +z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingTrajectory {
    pub lift_off: Vector3<f64>,
    pub touchdown: Vector3<f64>,
    pub clearance: f64,
}

impl SwingTrajectory {
    pub fn apex_height(&self) -> f64 {
        self.lift_off.z.max(self.touchdown.z) + self.clearance
    }

    fn check(phase: f64) -> Result<()> {
        if (0.0..=1.0).contains(&phase) {
            Ok(())
        } else {
            Err(Error::PhaseOutOfRange(phase))
        }
    }

    pub fn position(&self, phase: f64) -> Result<Vector3<f64>> {
        Self::check(phase)?;
        let s = smoothstep(phase);
        let horizontal = self.lift_off + (self.touchdown - self.lift_off) * s;
        let apex = self.apex_height();
        let z = if phase <= 0.5 {
            self.lift_off.z + (apex - self.lift_off.z) * smoothstep(2.0 * phase)
        } else {
            self.touchdown.z + (apex - self.touchdown.z) * smoothstep(2.0 - 2.0 * phase)
        };
        Ok(Vector3::new(horizontal.x, horizontal.y, z))
    }

    /// Derivative with respect to phase.
    pub fn tangent(&self, phase: f64) -> Result<Vector3<f64>> {
        Self::check(phase)?;
        let horizontal = (self.touchdown - self.lift_off) * smoothstep_rate(phase);
        let apex = self.apex_height();
        let z = if phase <= 0.5 {
            2.0 * (apex - self.lift_off.z) * smoothstep_rate(2.0 * phase)
        } else {
            -2.0 * (apex - self.touchdown.z) * smoothstep_rate(2.0 - 2.0 * phase)
        };
        Ok(Vector3::new(horizontal.x, horizontal.y, z))
    }
}

/// How high the swing foot is lifted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum Clearance {
    /// Fixed apex height above the higher endpoint (m).
    Absolute(f64),
    /// Fraction of the limb's retraction range: the distance between the
    /// standing foot and the closest the foot can be drawn to the hip,
    /// `stand_height − |upper − lower|`.
    RetractionFraction(f64),
}

impl Default for Clearance {
    fn default() -> Self {
        Clearance::RetractionFraction(0.25)
    }
}

impl Clearance {
    pub fn height(&self, limb: &LimbMorphology, stand_height: f64) -> f64 {
        match *self {
            Clearance::Absolute(h) => h,
            Clearance::RetractionFraction(f) => {
                let closest = (limb.upper_length() - limb.lower_length()).abs();
                f * (stand_height - closest).max(0.0)
            }
        }
    }
}
