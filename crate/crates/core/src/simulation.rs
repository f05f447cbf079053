//! Closed-loop simulation: physics, controller, estimator and telemetry
//! on fixed integer tick ratios.

use nalgebra::{DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::actuation::{electrical_power, ActuatorParams};
use crate::controller::{BodyCommand, ControlOutput, Controller, ControllerParams};
use crate::dynamics::LimbDynamicsModel;
use crate::error::{Error, Result};
use crate::gait::GaitSchedule;
use crate::kinematics::{estimate_grf, forward_kinematics};
use crate::morphology::{BodyMorphology, Leg};
use crate::telemetry::{LogRecord, TrialLog};
use crate::world::{Commands, ContactState, JointCommand, RobotModel, RobotState, World, WorldParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Physics step (s).
    pub dt: f64,
    /// Controller period (s); a whole multiple of `dt`.
    pub control_period: f64,
    /// Logging period (s); a whole multiple of `dt`.
    pub log_period: f64,
    /// Per-axis scale applied to the force estimates.
    pub grf_calibration: [f64; 3],
    /// Subtract the limb's own weight before mapping torques to forces.
    pub grf_gravity_compensation: bool,
    /// Initial drop height of the feet above the ground (m).
    pub spawn_clearance: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: 0.001,
            control_period: 0.002,
            log_period: 0.002,
            grf_calibration: [1.0; 3],
            grf_gravity_compensation: true,
            spawn_clearance: 0.001,
        }
    }
}

fn ticks(period: f64, dt: f64, what: &str) -> Result<u64> {
    let n = (period / dt).round();
    if !(n >= 1.0) || ((n * dt - period).abs() > 1e-9 * period.max(1.0)) {
        return Err(Error::Config(format!(
            "{what} {period} is not a whole multiple of dt {dt}"
        )));
    }
    Ok(n as u64)
}

pub struct Simulation {
    world: World,
    controller: Controller,
    config: SimulationConfig,
    actuator: ActuatorParams,
    morphology: BodyMorphology,
    limb_models: [LimbDynamicsModel; 4],
    log: TrialLog,
    control_ticks: u64,
    log_ticks: u64,
    step_index: u64,
    commands: Commands,
    last_output: Option<ControlOutput>,
}

impl Simulation {
    /// Robot standing at the controller's stand height, feet just above
    /// the ground.
    pub fn new(
        morphology: &BodyMorphology,
        actuator: &ActuatorParams,
        world_params: WorldParams,
        controller_params: ControllerParams,
        gait: GaitSchedule,
        config: SimulationConfig,
    ) -> Result<Self> {
        let control_ticks = ticks(config.control_period, config.dt, "control period")?;
        let log_ticks = ticks(config.log_period, config.dt, "log period")?;
        let gravity = world_params.gravity;
        let controller = Controller::new(morphology, gait, controller_params)?;
        let pose = controller.standing_pose()?;
        let model = RobotModel::new(morphology, actuator)?;
        let height = controller.params.stand_height + config.spawn_clearance;
        let world = World::new(model, world_params, Vector3::new(0.0, 0.0, height), pose)?;
        let limb_models =
            Leg::ALL.map(|leg| LimbDynamicsModel::new(morphology.limb(leg), leg.side()).with_gravity(gravity));
        Ok(Simulation {
            world,
            controller,
            config,
            actuator: actuator.clone(),
            morphology: morphology.clone(),
            limb_models,
            log: TrialLog::new(),
            control_ticks,
            log_ticks,
            step_index: 0,
            commands: [[JointCommand::default(); 3]; 4],
            last_output: None,
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn log(&self) -> &TrialLog {
        &self.log
    }

    pub fn into_log(self) -> TrialLog {
        self.log
    }

    pub fn time(&self) -> f64 {
        self.world.time()
    }

    pub fn last_control(&self) -> Option<&ControlOutput> {
        self.last_output.as_ref()
    }

    /// Ground force on each foot from sensed joint torques, trunk frame.
    pub fn estimate_forces(&self, state: &RobotState) -> [Option<Vector3<f64>>; 4] {
        let rotation = state.rotation();
        let gravity_body = rotation.tr_mul(&self.world.gravity_vector());
        let cal = Vector3::from(self.config.grf_calibration);
        Leg::ALL.map(|leg| {
            let limb = &state.limbs[leg.index()];
            let mut load = -limb.tau;
            if self.config.grf_gravity_compensation {
                let model = &self.limb_models[leg.index()];
                let frames = model.frames(&limb.q);
                let zero = DVector::zeros(3);
                let hold = model
                    .multibody()
                    .inverse_dynamics(&frames, &zero, &zero, &gravity_body, None);
                load += Vector3::new(hold[0], hold[1], hold[2]);
            }
            estimate_grf(self.morphology.limb(leg), leg.side(), &limb.q, &load, &cal)
                .ok()
                .map(|e| e.force)
        })
    }

    fn record(&mut self, state: &RobotState, contact: &ContactState) {
        let rotation = state.rotation();
        let estimates = self.estimate_forces(state);
        let imu = self.world.imu_read();
        let stance = self.last_output.as_ref().map_or([true; 4], |o| o.stance);
        let mut r = LogRecord {
            time: state.time,
            position: state.position.into(),
            orientation: {
                let q = state.orientation.quaternion();
                [q.w, q.i, q.j, q.k]
            },
            velocity: state.velocity.into(),
            angular_velocity: state.angular_velocity.into(),
            q: [[0.0; 3]; 4],
            qd: [[0.0; 3]; 4],
            tau: [[0.0; 3]; 4],
            stance,
            contact: contact.feet.map(|f| f.in_contact),
            grf_estimate: [[f64::NAN; 3]; 4],
            grf_true: [[0.0; 3]; 4],
            foot_hip: [[0.0; 3]; 4],
            foot_world: [[0.0; 3]; 4],
            power: [[0.0; 3]; 4],
            clamped_power: [[0.0; 3]; 4],
            imu_accel: imu.accel.into(),
            imu_gyro: imu.gyro.into(),
        };
        for leg in Leg::ALL {
            let i = leg.index();
            let limb = &state.limbs[i];
            r.q[i] = limb.q.to_vector().into();
            r.qd[i] = limb.qd.into();
            r.tau[i] = limb.tau.into();
            if let Some(f) = estimates[i] {
                r.grf_estimate[i] = f.into();
            }
            r.grf_true[i] = rotation.tr_mul(&contact.feet[i].force).into();
            let foot = forward_kinematics(self.morphology.limb(leg), leg.side(), &limb.q);
            r.foot_hip[i] = foot.into();
            r.foot_world[i] = (state.position + rotation * (self.morphology.hip(leg) + foot)).into();
            for j in 0..3 {
                let p = electrical_power(&self.actuator, limb.tau[j], limb.qd[j]);
                r.power[i][j] = p.power;
                r.clamped_power[i][j] = p.clamped_power;
            }
        }
        self.log.push(r);
    }

    /// One physics step, running the controller and logger on their ticks.
    pub fn step(&mut self, command: &BodyCommand) -> Result<(RobotState, ContactState)> {
        if self.step_index.is_multiple_of(self.control_ticks) {
            let state = self.world.state();
            let output = self.controller.tick(&state, command)?;
            self.commands = output.commands;
            self.last_output = Some(output);
        }
        let (state, contact) = self.world.step(&self.commands, self.config.dt)?;
        self.step_index += 1;
        if self.step_index.is_multiple_of(self.log_ticks) {
            self.record(&state, &contact);
        }
        Ok((state, contact))
    }

    /// Run for `duration` seconds with a time-dependent command.
    pub fn run_for(&mut self, duration: f64, mut command: impl FnMut(f64) -> BodyCommand) -> Result<()> {
        let steps = (duration / self.config.dt).round() as u64;
        for _ in 0..steps {
            let c = command(self.world.time());
            self.step(&c)?;
        }
        Ok(())
    }
}

/// Axis of a trunk rotation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationAxis {
    Roll,
    Pitch,
    Yaw,
}

impl RotationAxis {
    pub const ALL: [RotationAxis; 3] = [RotationAxis::Roll, RotationAxis::Pitch, RotationAxis::Yaw];

    pub fn unit(self) -> Vector3<f64> {
        match self {
            RotationAxis::Roll => Vector3::x(),
            RotationAxis::Pitch => Vector3::y(),
            RotationAxis::Yaw => Vector3::z(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RotationAxis::Roll => "roll",
            RotationAxis::Pitch => "pitch",
            RotationAxis::Yaw => "yaw",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationProtocol {
    /// Peak rotation (rad).
    pub amplitude: f64,
    pub frequency: f64,
    pub repetitions: u32,
    /// Standing time before the first rotation (s).
    pub settle: f64,
}

impl Default for RotationProtocol {
    fn default() -> Self {
        RotationProtocol {
            amplitude: 10f64.to_radians(),
            frequency: 0.5,
            repetitions: 6,
            settle: 0.5,
        }
    }
}

/// Per-limb force traces over the rotations, trunk frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationTrace {
    pub axis: RotationAxis,
    pub time: Vec<f64>,
    /// `[leg][sample]`.
    pub estimate: [Vec<Vector3<f64>>; 4],
    pub truth: [Vec<Vector3<f64>>; 4],
    /// Uncalibrated estimates kept for calibration fits.
    pub log: TrialLog,
}

impl RotationProtocol {
    pub fn command(&self, axis: RotationAxis, t: f64) -> BodyCommand {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        let active = t >= self.settle;
        let phase = if active { w * (t - self.settle) } else { 0.0 };
        let angle = self.amplitude * phase.sin();
        let rate = if active { self.amplitude * w * phase.cos() } else { 0.0 };
        BodyCommand {
            orientation_offset: UnitQuaternion::from_scaled_axis(axis.unit() * angle),
            angular_velocity: axis.unit() * rate,
            ..BodyCommand::stand()
        }
    }

    pub fn duration(&self) -> f64 {
        self.settle + self.repetitions as f64 / self.frequency
    }

    /// Stand, then rotate the trunk sinusoidally about `axis` while every
    /// foot stays loaded. Samples come from the logger after settling.
    pub fn run(&self, sim: &mut Simulation, axis: RotationAxis) -> Result<RotationTrace> {
        if !(self.frequency > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config("rotation protocol needs a positive frequency".into()));
        }
        let start = sim.time();
        let end = start + self.duration();
        let protocol = self.clone();
        let first_record = sim.log().len();
        let steps = ((end - start) / sim.config().dt).round() as u64;
        for _ in 0..steps {
            let c = protocol.command(axis, sim.time() - start);
            let (_, contact) = sim.step(&c)?;
            if sim.time() - start > self.settle {
                if let Some(leg) = Leg::ALL.iter().find(|l| !contact.feet[l.index()].in_contact) {
                    return Err(Error::ProtocolAborted(format!(
                        "{leg} lost contact at t = {:.3} s during {} rotation",
                        sim.time(),
                        axis.name()
                    )));
                }
            }
        }
        let records: Vec<LogRecord> = sim.log().records[first_record..]
            .iter()
            .filter(|r| r.time - start >= self.settle)
            .cloned()
            .collect();
        let mut trace = RotationTrace {
            axis,
            time: records.iter().map(|r| r.time).collect(),
            estimate: Default::default(),
            truth: Default::default(),
            log: TrialLog {
                records: records.clone(),
            },
        };
        for r in &records {
            for i in 0..4 {
                trace.estimate[i].push(Vector3::from(r.grf_estimate[i]));
                trace.truth[i].push(Vector3::from(r.grf_true[i]));
            }
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(world: WorldParams) -> Simulation {
        Simulation::new(
            &BodyMorphology::default(),
            &ActuatorParams::default(),
            world,
            ControllerParams::default(),
            GaitSchedule::default(),
            SimulationConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn quiet_standing_supports_weight() {
        let mut s = sim(WorldParams::default());
        s.run_for(1.5, |_| BodyCommand::stand()).unwrap();
        let total: f64 = s.world().contact().total_force().z;
        let weight = s.controller().total_mass() * 9.81;
        assert!((total - weight).abs() < 0.01 * weight, "{total} vs {weight}");
        let state = s.world().state();
        assert!((state.position.z - 0.28).abs() < 0.01, "{}", state.position.z);
        assert_eq!(s.log().len(), 750);
    }

    #[test]
    fn rejects_fractional_tick_ratio() {
        let config = SimulationConfig {
            control_period: 0.0015,
            ..SimulationConfig::default()
        };
        assert!(Simulation::new(
            &BodyMorphology::default(),
            &ActuatorParams::default(),
            WorldParams::default(),
            ControllerParams::default(),
            GaitSchedule::default(),
            config
        )
        .is_err());
    }
}
