//! Single TOML document covering morphology, actuators, gait, contact,
//! controller, simulation, and experiment presets. Every section and field
//! is optional; omitted values take the documented defaults.

use std::path::Path;

use legsim_core::actuation::ActuatorParams;
use legsim_core::controller::{Controller, ControllerParams};
use legsim_core::dynamics::{GridSpec, SwingSpec};
use legsim_core::gait::GaitSchedule;
use legsim_core::morphology::{validate, BodyMorphology, Leg, Link};
use legsim_core::simulation::{RotationAxis, RotationProtocol, SimulationConfig};
use legsim_core::world::{ImuParams, WorldParams};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::SpeedSource;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub morphology: BodyMorphology,
    pub actuator: ActuatorParams,
    pub gait: GaitSchedule,
    pub controller: ControllerParams,
    pub world: WorldParams,
    pub simulation: SimulationConfig,
    pub run: RunSpec,
    pub experiments: ExperimentPresets,
}

/// Straight-line trot for the `simulate` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    /// Commanded forward speed (m/s).
    pub speed: f64,
    /// Walking time after the initial stand (s).
    pub duration: f64,
    /// Standing time before stepping starts (s).
    pub settle: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            speed: 0.3,
            duration: 5.0,
            settle: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPresets {
    pub inertia_cot: InertiaCotSpec,
    pub limb_ratio: LimbRatioSpec,
    pub grf_validation: GrfValidationSpec,
    pub feasibility: FeasibilitySpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CotProfile {
    /// 0.3 m/s over 3 m.
    Slow,
    /// 1 m/s for 2 s.
    Fast,
}

impl CotProfile {
    pub fn speed(self) -> f64 {
        match self {
            CotProfile::Slow => 0.3,
            CotProfile::Fast => 1.0,
        }
    }

    /// Steady walking time after the speed ramp (s).
    pub fn steady_duration(self) -> f64 {
        match self {
            CotProfile::Slow => 3.0 / 0.3,
            CotProfile::Fast => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CotProfile::Slow => "inertia-cot-slow",
            CotProfile::Fast => "inertia-cot-fast",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InertiaCotSpec {
    pub profile: CotProfile,
    /// Payload per limb (kg), at the midpoint of the loaded link.
    pub added_mass: f64,
    pub seeds: Vec<u64>,
    /// Samples at the logging rate, taken from the end of the trial.
    pub analysis_samples: usize,
    pub speed_source: SpeedSource,
    /// IMU white noise used in these trials.
    pub imu: ImuParams,
    /// Seeded uniform jitter on the initial trunk velocity (m/s).
    pub initial_velocity_jitter: f64,
    /// Pendulum amplitude for the measured moment of inertia (rad).
    pub pendulum_amplitude: f64,
}

impl Default for InertiaCotSpec {
    fn default() -> Self {
        InertiaCotSpec {
            profile: CotProfile::Slow,
            added_mass: 0.5,
            seeds: vec![1, 2, 3],
            analysis_samples: 1000,
            speed_source: SpeedSource::ImuIntegrated,
            imu: ImuParams {
                accel_noise: 0.02,
                gyro_noise: 5e-4,
                ..ImuParams::default()
            },
            initial_velocity_jitter: 0.02,
            pendulum_amplitude: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimbRatioSpec {
    /// Tibia share of the femur + tibia length, one trial each.
    pub tibia_fractions: Vec<f64>,
    /// Femur + tibia length, equal across trials (m).
    pub total_length: f64,
    pub speed: f64,
    /// Walking time (s); analysis uses the final strides.
    pub duration: f64,
    /// Strides analysed at the end of the trial.
    pub analysis_strides: usize,
    /// Marker distance from the foot centre toward the knee (m).
    pub marker_offset: f64,
    /// Largest accepted stride-to-stride foot path mismatch (m).
    pub closure_tolerance: f64,
}

impl Default for LimbRatioSpec {
    fn default() -> Self {
        LimbRatioSpec {
            tibia_fractions: vec![0.55, 0.5, 0.45],
            total_length: 0.4,
            speed: 0.1,
            duration: 6.0,
            analysis_strides: 2,
            marker_offset: 0.035,
            closure_tolerance: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrfValidationSpec {
    pub protocol: RotationProtocol,
    pub axes: Vec<RotationAxis>,
    /// No joint friction and an exact transmission.
    pub perfect_model: bool,
}

impl Default for GrfValidationSpec {
    fn default() -> Self {
        GrfValidationSpec {
            protocol: RotationProtocol::default(),
            axes: RotationAxis::ALL.to_vec(),
            perfect_model: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeasibilitySpec {
    /// One map per gear ratio, same motor otherwise.
    pub gear_ratios: Vec<f64>,
    pub swing: SwingSpec,
    pub grid: GridSpec,
}

impl Default for FeasibilitySpec {
    fn default() -> Self {
        FeasibilitySpec {
            gear_ratios: vec![7.5, 15.0],
            swing: SwingSpec::default(),
            grid: GridSpec::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every problem found, empty when the config is usable.
    pub fn issues(&self) -> Vec<String> {
        let mut out: Vec<String> = validate(&self.morphology)
            .iter()
            .map(|v| format!("morphology: {v}"))
            .collect();
        out.extend(
            self.actuator
                .violations(f64::INFINITY)
                .into_iter()
                .map(|v| format!("actuator: {v}")),
        );
        if let Err(e) = self.gait.validate() {
            out.push(format!("gait: {e}"));
        }
        if out.is_empty() {
            for leg in Leg::ALL {
                if let Err(e) = Controller::nominal_pose(&self.morphology, leg, self.controller.stand_height) {
                    out.push(format!("controller.stand_height: {e}"));
                    break;
                }
            }
        }
        let s = &self.simulation;
        if !(s.dt > 0.0 && s.dt <= legsim_core::world::MAX_DT) {
            out.push(format!(
                "simulation.dt: {} outside (0, {}]",
                s.dt,
                legsim_core::world::MAX_DT
            ));
        }
        let positive = |name: &str, v: f64, out: &mut Vec<String>| {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name}: must be finite and > 0, got {v}"));
            }
        };
        positive("run.duration", self.run.duration, &mut out);
        if !self.run.speed.is_finite() {
            out.push(format!("run.speed: must be finite, got {}", self.run.speed));
        }
        if !(self.run.settle >= 0.0) {
            out.push("run.settle: must be >= 0".into());
        }
        let e = &self.experiments;
        if e.inertia_cot.seeds.is_empty() {
            out.push("experiments.inertia_cot.seeds: at least one seed is required".into());
        }
        if e.inertia_cot.analysis_samples == 0 {
            out.push("experiments.inertia_cot.analysis_samples: must be > 0".into());
        }
        if !(e.inertia_cot.added_mass >= 0.0 && e.inertia_cot.added_mass.is_finite()) {
            out.push("experiments.inertia_cot.added_mass: must be finite and >= 0".into());
        }
        let steady_samples = (e.inertia_cot.profile.steady_duration() / s.log_period).round() as usize;
        if e.inertia_cot.analysis_samples > steady_samples {
            out.push(format!(
                "experiments.inertia_cot.analysis_samples: {} exceeds the {steady_samples} steady-state samples of the profile",
                e.inertia_cot.analysis_samples
            ));
        }
        for (i, &f) in e.limb_ratio.tibia_fractions.iter().enumerate() {
            if !(f > 0.0 && f < 1.0) {
                out.push(format!(
                    "experiments.limb_ratio.tibia_fractions[{i}]: {f} outside (0, 1)"
                ));
            }
        }
        if e.limb_ratio.tibia_fractions.is_empty() {
            out.push("experiments.limb_ratio.tibia_fractions: at least one ratio is required".into());
        }
        positive(
            "experiments.limb_ratio.total_length",
            e.limb_ratio.total_length,
            &mut out,
        );
        positive("experiments.limb_ratio.speed", e.limb_ratio.speed, &mut out);
        let needed = (e.limb_ratio.analysis_strides as f64 + 1.0) * self.gait.period + self.controller.velocity_ramp;
        if !(e.limb_ratio.duration >= needed) {
            out.push(format!(
                "experiments.limb_ratio.duration: {} is shorter than the ramp plus {} strides ({needed} s)",
                e.limb_ratio.duration,
                e.limb_ratio.analysis_strides + 1
            ));
        }
        if e.limb_ratio.analysis_strides == 0 {
            out.push("experiments.limb_ratio.analysis_strides: must be > 0".into());
        }
        positive(
            "experiments.grf_validation.protocol.frequency",
            e.grf_validation.protocol.frequency,
            &mut out,
        );
        if e.grf_validation.protocol.repetitions == 0 {
            out.push("experiments.grf_validation.protocol.repetitions: must be > 0".into());
        }
        if e.grf_validation.axes.is_empty() {
            out.push("experiments.grf_validation.axes: at least one axis is required".into());
        }
        for (i, &g) in e.feasibility.gear_ratios.iter().enumerate() {
            if !(g > 0.0 && g.is_finite()) {
                out.push(format!(
                    "experiments.feasibility.gear_ratios[{i}]: must be finite and > 0"
                ));
            }
        }
        if e.feasibility.grid.cells == 0 {
            out.push("experiments.feasibility.grid.cells: must be > 0".into());
        }
        out
    }

    pub fn validated(self) -> Result<Self> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(self)
        } else {
            Err(HarnessError::Config(issues.join("; ")))
        }
    }

    /// Morphology with `mass` at the midpoint of `link` on every limb.
    pub fn loaded_morphology(&self, link: Option<Link>, mass: f64) -> BodyMorphology {
        match link {
            None => self.morphology.clone(),
            Some(link) => {
                let mut m = self.morphology.clone();
                for limb in &mut m.limbs {
                    limb.added_mass = Some(legsim_core::morphology::AddedMass {
                        mass,
                        link,
                        position: 0.5 * limb.length(link),
                    });
                }
                m
            }
        }
    }
}
