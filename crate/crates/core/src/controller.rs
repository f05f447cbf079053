//! Trot controller: trunk wrench from PD feedback, stance forces from the
//! allocation QP, swing feet tracked in joint space through inverse
//! kinematics and impedance.

use nalgebra::{DVector, Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::actuation::ImpedanceGains;
use crate::allocation::{allocate_stance_forces_weighted, StanceAllocation, StanceFoot, DEFAULT_REGULARIZATION};
use crate::dynamics::{LimbDynamicsModel, STANDARD_GRAVITY};
use crate::error::Result;
use crate::gait::{Clearance, GaitSchedule, SwingTrajectory};
use crate::kinematics::{forward_kinematics, inverse_kinematics, jacobian_foot, link_mass_points, JointAngles};
use crate::morphology::{BodyMorphology, Leg};
use crate::world::{Commands, JointCommand, RobotState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerParams {
    /// Hip height above ground while standing (m).
    pub stand_height: f64,
    /// Friction coefficient assumed by the force allocation.
    pub friction: f64,
    pub regularization: f64,
    /// Trunk position feedback per unit mass (1/s²), world x, y, z.
    pub position_stiffness: [f64; 3],
    /// Trunk velocity feedback per unit mass (1/s).
    pub position_damping: [f64; 3],
    /// Orientation feedback per unit inertia (1/s²), world axes.
    pub orientation_stiffness: [f64; 3],
    pub orientation_damping: [f64; 3],
    pub swing_stiffness: [f64; 3],
    pub swing_damping: [f64; 3],
    /// Joint damping added in stance (N·m·s/rad).
    pub stance_damping: f64,
    /// Velocity-error gain of the foot placement heuristic (s).
    pub placement_gain: f64,
    /// Largest fore-aft or lateral foot placement offset from the hip (m).
    pub placement_limit: f64,
    pub clearance: Clearance,
    /// Touchdown target below the ground plane (m).
    pub touchdown_depth: f64,
    /// Compensate limb weight in joint feedforward.
    pub gravity_compensation: bool,
    /// Time to ramp the commanded speed from zero (s).
    pub velocity_ramp: f64,
    pub gravity: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            stand_height: 0.28,
            friction: 0.6,
            regularization: DEFAULT_REGULARIZATION,
            position_stiffness: [30.0, 30.0, 300.0],
            position_damping: [10.0, 10.0, 30.0],
            orientation_stiffness: [300.0, 300.0, 100.0],
            orientation_damping: [30.0, 30.0, 20.0],
            swing_stiffness: [80.0, 80.0, 80.0],
            swing_damping: [2.0, 2.0, 2.0],
            stance_damping: 0.3,
            placement_gain: 0.05,
            placement_limit: 0.12,
            clearance: Clearance::default(),
            touchdown_depth: 0.005,
            gravity_compensation: true,
            velocity_ramp: 1.0,
            gravity: STANDARD_GRAVITY,
        }
    }
}

/// Operator-level command for one tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyCommand {
    /// Step with the gait; otherwise stand on all four feet.
    pub walking: bool,
    /// Forward and lateral speed in the heading frame (m/s).
    pub velocity: [f64; 2],
    /// Trunk orientation relative to the level heading frame.
    pub orientation_offset: UnitQuaternion<f64>,
    /// Angular velocity that goes with a time-varying offset (world, rad/s).
    pub angular_velocity: Vector3<f64>,
}

impl BodyCommand {
    pub fn stand() -> Self {
        BodyCommand {
            walking: false,
            velocity: [0.0; 2],
            orientation_offset: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn walk(forward: f64) -> Self {
        BodyCommand {
            walking: true,
            velocity: [forward, 0.0],
            ..BodyCommand::stand()
        }
    }
}

/// Everything one tick decided, for logging and checks.
#[derive(Clone, Debug)]
pub struct ControlOutput {
    pub commands: Commands,
    pub stance: [bool; 4],
    pub allocation: StanceAllocation,
    /// Desired trunk wrench about the whole-body COM (world).
    pub wrench: Vector6<f64>,
}

#[derive(Clone, Copy, Debug)]
struct SwingMemory {
    lift_off: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct Controller {
    pub params: ControllerParams,
    pub gait: GaitSchedule,
    morphology: BodyMorphology,
    limb_models: [LimbDynamicsModel; 4],
    total_mass: f64,
    body_inertia: Matrix3<f64>,
    reference: Option<Reference>,
    walk_start: Option<f64>,
    swing: [Option<SwingMemory>; 4],
    last_time: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Reference {
    position: Vector3<f64>,
    yaw: f64,
}

/// Heading of a rotation about world z.
fn yaw_of(r: &Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

impl Controller {
    pub fn new(morphology: &BodyMorphology, gait: GaitSchedule, params: ControllerParams) -> Result<Self> {
        gait.validate()?;
        let limb_models =
            Leg::ALL.map(|leg| LimbDynamicsModel::new(morphology.limb(leg), leg.side()).with_gravity(params.gravity));
        // Composite inertia about the trunk COM with the limbs at the nominal
        // stance, limb masses as points.
        let mut body_inertia = morphology.trunk_inertia_matrix();
        let mut total_mass = morphology.trunk_mass;
        for leg in Leg::ALL {
            let limb = morphology.limb(leg);
            let q = Self::nominal_pose(morphology, leg, params.stand_height)?;
            for (m, p) in link_mass_points(limb, leg.side(), &q) {
                let r = morphology.hip(leg) + p;
                body_inertia += m * (r.norm_squared() * Matrix3::identity() - r * r.transpose());
                total_mass += m;
            }
        }
        Ok(Controller {
            params,
            gait,
            morphology: morphology.clone(),
            limb_models,
            total_mass,
            body_inertia,
            reference: None,
            walk_start: None,
            swing: [None; 4],
            last_time: None,
        })
    }

    /// Joint angles with the foot straight below the hip at `height`.
    pub fn nominal_pose(morphology: &BodyMorphology, leg: Leg, height: f64) -> Result<JointAngles> {
        let limb = morphology.limb(leg);
        let target = Vector3::new(0.0, leg.side().sign() * limb.lateral_offset(), -height);
        inverse_kinematics(limb, leg.side(), &target, &JointAngles::default()).map_err(|e| e.for_leg(leg))
    }

    pub fn standing_pose(&self) -> Result<[JointAngles; 4]> {
        let mut out = [JointAngles::default(); 4];
        for leg in Leg::ALL {
            out[leg.index()] = Self::nominal_pose(&self.morphology, leg, self.params.stand_height)?;
        }
        Ok(out)
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Gait clock, zero when stepping began.
    pub fn gait_time(&self, t: f64) -> Option<f64> {
        self.walk_start.map(|start| t - start)
    }

    fn gravity_torque(&self, leg: Leg, q: &JointAngles, rotation: &Matrix3<f64>) -> Vector3<f64> {
        if !self.params.gravity_compensation {
            return Vector3::zeros();
        }
        let model = &self.limb_models[leg.index()];
        let g_body = rotation.tr_mul(&Vector3::new(0.0, 0.0, -self.params.gravity));
        let frames = model.frames(q);
        let zero = DVector::zeros(3);
        let tau = model.multibody().inverse_dynamics(&frames, &zero, &zero, &g_body, None);
        Vector3::new(tau[0], tau[1], tau[2])
    }

    pub fn tick(&mut self, state: &RobotState, command: &BodyCommand) -> Result<ControlOutput> {
        let p = &self.params;
        let t = state.time;
        let dt = self.last_time.map_or(0.0, |last| (t - last).max(0.0));
        self.last_time = Some(t);
        let rotation = state.rotation();
        let omega_world = state.angular_velocity_world();

        let reference = self.reference.get_or_insert(Reference {
            position: Vector3::new(state.position.x, state.position.y, p.stand_height),
            yaw: yaw_of(&rotation),
        });
        if command.walking && self.walk_start.is_none() {
            self.walk_start = Some(t);
        }
        if !command.walking {
            self.walk_start = None;
        }
        let ramp = match self.walk_start {
            Some(start) if p.velocity_ramp > 0.0 => ((t - start) / p.velocity_ramp).min(1.0),
            Some(_) => 1.0,
            None => 0.0,
        };
        let heading = Rotation3::from_axis_angle(&Vector3::z_axis(), reference.yaw);
        let v_des = heading * Vector3::new(command.velocity[0] * ramp, command.velocity[1] * ramp, 0.0);
        reference.position += v_des * dt;
        let reference = *reference;

        // Leg geometry in the world.
        let mut hips = [Vector3::zeros(); 4];
        let mut feet = [Vector3::zeros(); 4];
        let mut com_sum = self.morphology.trunk_mass * state.position;
        for leg in Leg::ALL {
            let limb = self.morphology.limb(leg);
            let q = state.limbs[leg.index()].q;
            let hip = self.morphology.hip(leg);
            hips[leg.index()] = state.position + rotation * hip;
            feet[leg.index()] = hips[leg.index()] + rotation * forward_kinematics(limb, leg.side(), &q);
            for (m, point) in link_mass_points(limb, leg.side(), &q) {
                com_sum += m * (hips[leg.index()] + rotation * point);
            }
        }
        let com = com_sum / self.total_mass;

        // Gait phase.
        let phases = match self.gait_time(t) {
            Some(gt) => Some(self.gait.schedule_at(gt)),
            None => None,
        };
        let stance = match phases {
            Some(ph) => ph.map(|x| x.stance),
            None => [true; 4],
        };

        // Desired wrench.
        let mut accel = Vector3::zeros();
        let mut position_error = reference.position - state.position;
        for i in 0..2 {
            position_error[i] = position_error[i].clamp(-0.1, 0.1);
        }
        for i in 0..3 {
            accel[i] =
                p.position_stiffness[i] * position_error[i] + p.position_damping[i] * (v_des[i] - state.velocity[i]);
        }
        let force = self.total_mass * (accel + Vector3::new(0.0, 0.0, p.gravity));
        let desired = heading * command.orientation_offset.to_rotation_matrix();
        let error = (desired * Rotation3::from_matrix_unchecked(rotation).inverse()).scaled_axis();
        let mut ang = Vector3::zeros();
        for i in 0..3 {
            ang[i] = p.orientation_stiffness[i] * error[i]
                + p.orientation_damping[i] * (command.angular_velocity[i] - omega_world[i]);
        }
        let inertia_world = rotation * self.body_inertia * rotation.transpose();
        let moment = inertia_world * ang;
        let wrench = Vector6::new(force.x, force.y, force.z, moment.x, moment.y, moment.z);

        let stance_feet: Vec<StanceFoot> = Leg::ALL
            .iter()
            .filter(|leg| stance[leg.index()])
            .map(|&leg| StanceFoot {
                leg,
                position: feet[leg.index()] - com,
            })
            .collect();
        // Residuals weighed as the accelerations they would cause.
        let weights = Vector6::new(
            1.0 / self.total_mass,
            1.0 / self.total_mass,
            1.0 / self.total_mass,
            1.0 / self.body_inertia[(0, 0)],
            1.0 / self.body_inertia[(1, 1)],
            1.0 / self.body_inertia[(2, 2)],
        );
        let allocation =
            allocate_stance_forces_weighted(&stance_feet, &wrench, &weights, p.friction, p.regularization)?;

        let mut commands: Commands = [[JointCommand::default(); 3]; 4];
        for leg in Leg::ALL {
            let i = leg.index();
            let limb = self.morphology.limb(leg);
            let side = leg.side();
            let ls = &state.limbs[i];
            let jac = jacobian_foot(limb, side, &ls.q);
            let hip_velocity = state.velocity + omega_world.cross(&(hips[i] - state.position));
            let gravity = self.gravity_torque(leg, &ls.q, &rotation);

            if stance[i] {
                self.swing[i] = None;
                let f_body = rotation.tr_mul(&allocation.forces[i]);
                let tau = -jac.transpose_mul(&f_body) + gravity;
                // Foot fixed in the world while the hip follows the reference.
                let foot_rate = rotation.tr_mul(&(-v_des - omega_world.cross(&(feet[i] - hips[i]))));
                let qd_des = jac
                    .matrix()
                    .try_inverse()
                    .map_or(Vector3::zeros(), |inv| inv * foot_rate);
                for j in 0..3 {
                    commands[i][j] = JointCommand {
                        q_des: ls.q.to_vector()[j],
                        qd_des: qd_des[j],
                        gains: ImpedanceGains {
                            stiffness: 0.0,
                            damping: p.stance_damping,
                            feedforward: tau[j],
                        },
                    };
                }
                continue;
            }

            let phase = phases.expect("swing implies walking")[i].progress;
            let memory = *self.swing[i].get_or_insert(SwingMemory { lift_off: feet[i] });
            let swing_time = self.gait.swing_duration();
            let remaining = (1.0 - phase) * swing_time;
            // Footholds centred on the COM rather than the trunk origin.
            let com_shift = Vector3::new(com.x - state.position.x, com.y - state.position.y, 0.0);
            let hip_at_touchdown = hips[i] + com_shift + v_des * remaining;
            let mut placement =
                state.velocity * (self.gait.stance_duration() / 2.0) + p.placement_gain * (state.velocity - v_des);
            placement.z = 0.0;
            let lateral = heading * Vector3::new(0.0, side.sign() * limb.lateral_offset(), 0.0);
            let limit = p.placement_limit;
            let offset = Vector3::new(placement.x.clamp(-limit, limit), placement.y.clamp(-limit, limit), 0.0);
            let touchdown = Vector3::new(
                hip_at_touchdown.x + lateral.x + offset.x,
                hip_at_touchdown.y + lateral.y + offset.y,
                -p.touchdown_depth,
            );
            let trajectory = SwingTrajectory {
                lift_off: memory.lift_off,
                touchdown,
                clearance: p.clearance.height(limb, p.stand_height),
            };
            let target_world = trajectory.position(phase)?;
            let rate_world = trajectory.tangent(phase)? / swing_time;
            let target = rotation.tr_mul(&(target_world - hips[i]));
            let q_des = inverse_kinematics(limb, side, &target, &ls.q).map_err(|e| e.for_leg(leg))?;
            let foot_rate = rotation.tr_mul(&(rate_world - hip_velocity));
            let jac_des = jacobian_foot(limb, side, &q_des);
            let qd_des = jac_des
                .matrix()
                .try_inverse()
                .map_or(Vector3::zeros(), |inv| inv * foot_rate);
            let gravity = self.gravity_torque(leg, &q_des, &rotation);
            let q_des_v = q_des.to_vector();
            for j in 0..3 {
                commands[i][j] = JointCommand {
                    q_des: q_des_v[j],
                    qd_des: qd_des[j],
                    gains: ImpedanceGains {
                        stiffness: p.swing_stiffness[j],
                        damping: p.swing_damping[j],
                        feedforward: gravity[j],
                    },
                };
            }
        }
        Ok(ControlOutput {
            commands,
            stance,
            allocation,
            wrench,
        })
    }
}
