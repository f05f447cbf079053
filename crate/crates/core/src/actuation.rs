//! Actuator electrical model, joint impedance law and power accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quasi-direct-drive actuator: brushless motor behind a planetary reduction.
///
/// Torque and speed limits are stored motor-side so that changing the gear
/// ratio with the same motor scales the output limits: output torque limit is
/// `gear_ratio · max_motor_torque`, output speed limit `max_motor_speed / gear_ratio`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatorParams {
    pub gear_ratio: f64,
    /// N·m/A.
    pub torque_constant: f64,
    /// V·s/rad.
    pub back_emf_constant: f64,
    /// Ω.
    pub phase_resistance: f64,
    /// Motor-side peak torque, N·m.
    pub max_motor_torque: f64,
    /// Motor-side speed limit, rad/s.
    pub max_motor_speed: f64,
    /// Rotor inertia, kg·m². Reflected to the joint as `rotor_inertia · G²`.
    #[serde(default)]
    pub rotor_inertia: f64,
    /// Use `I = τ·K_τ` literally instead of `I = τ_motor / K_τ`. Audit only;
    /// the literal form is dimensionally inconsistent.
    #[serde(default)]
    pub literal_current_formula: bool,
}

impl Default for ActuatorParams {
    /// Placeholder constants for a 7.5:1 quasi-direct-drive module. These are
    /// representative values, not measurements of any particular motor.
    fn default() -> Self {
        ActuatorParams {
            gear_ratio: 7.5,
            torque_constant: 0.1,
            back_emf_constant: 0.1,
            phase_resistance: 0.2,
            max_motor_torque: 2.0,
            max_motor_speed: 400.0,
            rotor_inertia: 6e-5,
            literal_current_formula: false,
        }
    }
}

impl ActuatorParams {
    pub fn with_gear_ratio(mut self, gear_ratio: f64) -> Self {
        self.gear_ratio = gear_ratio;
        self
    }

    pub fn max_output_torque(&self) -> f64 {
        self.gear_ratio * self.max_motor_torque
    }

    pub fn max_output_speed(&self) -> f64 {
        self.max_motor_speed / self.gear_ratio
    }

    pub fn reflected_inertia(&self) -> f64 {
        self.rotor_inertia * self.gear_ratio * self.gear_ratio
    }

    /// Human-readable invariant violations; `kt_ke_tolerance` bounds the
    /// relative mismatch between torque and back-EMF constants.
    pub fn violations(&self, kt_ke_tolerance: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("gear_ratio", self.gear_ratio),
            ("torque_constant", self.torque_constant),
            ("back_emf_constant", self.back_emf_constant),
            ("phase_resistance", self.phase_resistance),
            ("max_motor_torque", self.max_motor_torque),
            ("max_motor_speed", self.max_motor_speed),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be finite and > 0"));
            }
        }
        if !(self.rotor_inertia.is_finite() && self.rotor_inertia >= 0.0) {
            out.push("rotor_inertia must be finite and >= 0".into());
        }
        let mismatch = (self.torque_constant - self.back_emf_constant).abs()
            / self.torque_constant.abs().max(self.back_emf_constant.abs());
        if mismatch > kt_ke_tolerance {
            out.push(format!(
                "torque constant {} and back-EMF constant {} differ by {:.1}% (> {:.1}%)",
                self.torque_constant,
                self.back_emf_constant,
                100.0 * mismatch,
                100.0 * kt_ke_tolerance
            ));
        }
        out
    }
}

/// Phase current needed for an output torque.
pub fn current_from_torque(p: &ActuatorParams, tau_out: f64) -> f64 {
    if p.literal_current_formula {
        tau_out * p.torque_constant
    } else {
        tau_out / p.gear_ratio / p.torque_constant
    }
}

/// One actuator's electrical state at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub current: f64,
    pub voltage: f64,
    pub power: f64,
    /// `max(power, 0)`: regeneration is not credited.
    pub clamped_power: f64,
    pub timestamp: f64,
}

/// `V = ω K_E + I R`, `P = I V`, with motor speed `ω = G · omega_out`.
pub fn electrical_power(p: &ActuatorParams, tau_out: f64, omega_out: f64) -> PowerSample {
    let current = current_from_torque(p, tau_out);
    let motor_speed = p.gear_ratio * omega_out;
    let voltage = motor_speed * p.back_emf_constant + current * p.phase_resistance;
    let power = current * voltage;
    PowerSample {
        current,
        voltage,
        power,
        clamped_power: power.max(0.0),
        timestamp: 0.0,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceGains {
    /// N·m/rad.
    pub stiffness: f64,
    /// N·m·s/rad.
    pub damping: f64,
    /// N·m.
    pub feedforward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpedanceOutput {
    pub torque: f64,
    pub saturated: bool,
}

/// `τ = k_p (q_des − q) + k_d (q̇_des − q̇) + τ_ff`, clipped to `±limit`.
pub fn impedance_torque(g: &ImpedanceGains, q_des: f64, q: f64, qd_des: f64, qd: f64, limit: f64) -> ImpedanceOutput {
    let raw = g.stiffness * (q_des - q) + g.damping * (qd_des - qd) + g.feedforward;
    let torque = raw.clamp(-limit, limit);
    ImpedanceOutput {
        torque,
        saturated: torque != raw,
    }
}

/// Whole-robot power and torque summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTotals {
    pub peak_power: f64,
    pub mean_power: f64,
    pub peak_torque: f64,
    pub mean_torque: f64,
    /// Time integral of the summed clamped power (J), trapezoidal.
    pub energy: f64,
    pub samples: usize,
}

/// Power and torque of every actuator at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct ActuatorFrame {
    pub time: f64,
    pub power: Vec<PowerSample>,
    pub torque: Vec<f64>,
}

/// Peak and mean of the per-instant sums across actuators (clamped power,
/// absolute torque).
pub fn accumulate_energy<'a, I>(frames: I) -> Result<EnergyTotals>
where
    I: IntoIterator<Item = &'a ActuatorFrame>,
{
    let mut totals = EnergyTotals {
        peak_power: f64::NEG_INFINITY,
        mean_power: 0.0,
        peak_torque: f64::NEG_INFINITY,
        mean_torque: 0.0,
        energy: 0.0,
        samples: 0,
    };
    let mut previous: Option<(f64, f64)> = None;
    for frame in frames {
        if let Some((t, _)) = previous {
            if frame.time < t {
                return Err(Error::InconsistentTrajectory(format!(
                    "power samples out of order at t = {}",
                    frame.time
                )));
            }
        }
        let power: f64 = frame.power.iter().map(|s| s.clamped_power).sum();
        let torque: f64 = frame.torque.iter().map(|t| t.abs()).sum();
        totals.peak_power = totals.peak_power.max(power);
        totals.peak_torque = totals.peak_torque.max(torque);
        totals.mean_power += power;
        totals.mean_torque += torque;
        if let Some((t, p)) = previous {
            totals.energy += 0.5 * (p + power) * (frame.time - t);
        }
        previous = Some((frame.time, power));
        totals.samples += 1;
    }
    if totals.samples == 0 {
        return Err(Error::EmptyInput("no power samples to accumulate".into()));
    }
    totals.mean_power /= totals.samples as f64;
    totals.mean_torque /= totals.samples as f64;
    Ok(totals)
}
