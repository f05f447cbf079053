//! Floating-base simulation of the trunk and four limbs on a flat ground
//! plane, with penalty contact, joint-level impedance actuation and an IMU.

use nalgebra::{DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::actuation::{impedance_torque, ActuatorParams, ImpedanceGains};
use crate::dynamics::{append_limb, LimbBodies, STANDARD_GRAVITY};
use crate::error::{Error, Result};
use crate::kinematics::JointAngles;
use crate::morphology::{ensure_valid, BodyMorphology, Leg};
use crate::multibody::{Body, Frames, JointKind, Multibody};
use crate::spatial::{Force, Motion, SpatialInertia, Transform};

/// Largest accepted physics step (s).
pub const MAX_DT: f64 = 0.002;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    pub enabled: bool,
    /// Normal stiffness (N/m).
    pub stiffness: f64,
    /// Normal damping (N·s/m).
    pub damping: f64,
    /// Tangential anchor stiffness (N/m).
    pub tangential_stiffness: f64,
    /// Tangential damping (N·s/m).
    pub tangential_damping: f64,
    /// Ground friction coefficient.
    pub friction: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            enabled: true,
            stiffness: 2e4,
            damping: 200.0,
            tangential_stiffness: 2e4,
            tangential_damping: 200.0,
            friction: 0.8,
        }
    }
}

/// Joint friction `τ_f = −(coulomb · tanh(q̇ / smoothing) + viscous · q̇)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointFriction {
    pub coulomb: f64,
    pub viscous: f64,
    /// Rate scale of the Coulomb regularization (rad/s).
    pub smoothing: f64,
}

impl Default for JointFriction {
    fn default() -> Self {
        JointFriction {
            coulomb: 0.02,
            viscous: 0.005,
            smoothing: 0.05,
        }
    }
}

impl JointFriction {
    pub fn none() -> Self {
        JointFriction {
            coulomb: 0.0,
            viscous: 0.0,
            ..JointFriction::default()
        }
    }

    pub fn torque(&self, qd: f64) -> f64 {
        -(self.coulomb * (qd / self.smoothing).tanh() + self.viscous * qd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuParams {
    /// White-noise standard deviation (m/s²).
    pub accel_noise: f64,
    /// White-noise standard deviation (rad/s).
    pub gyro_noise: f64,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub seed: u64,
}

impl Default for ImuParams {
    fn default() -> Self {
        ImuParams {
            accel_noise: 0.0,
            gyro_noise: 0.0,
            accel_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Classical fourth-order Runge–Kutta; contact anchors update per step.
    Rk4,
    /// Velocity first, then positions with the new velocity.
    SemiImplicitEuler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldParams {
    pub gravity: f64,
    pub contact: ContactParams,
    pub joint_friction: JointFriction,
    /// Ratio of the torque a joint actually receives to the torque inferred
    /// from motor current, per ab/ad, hip, knee. Stands in for the linkage
    /// transmission that the serial model ignores.
    pub transmission_scale: [f64; 3],
    pub imu: ImuParams,
    pub integrator: Integrator,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            gravity: STANDARD_GRAVITY,
            contact: ContactParams::default(),
            joint_friction: JointFriction::default(),
            transmission_scale: [1.0, 1.04, 1.12],
            imu: ImuParams::default(),
            integrator: Integrator::Rk4,
        }
    }
}

impl WorldParams {
    /// No joint friction and an exact serial transmission.
    pub fn ideal() -> Self {
        WorldParams {
            joint_friction: JointFriction::none(),
            transmission_scale: [1.0; 3],
            ..WorldParams::default()
        }
    }
}

/// Joint state of one limb.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LimbState {
    pub q: JointAngles,
    pub qd: Vector3<f64>,
    /// Torque inferred from motor current (after saturation).
    pub tau: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    pub time: f64,
    /// Trunk COM position, world frame (m).
    pub position: Vector3<f64>,
    /// Trunk orientation (body to world).
    pub orientation: UnitQuaternion<f64>,
    /// Trunk COM velocity, world frame (m/s).
    pub velocity: Vector3<f64>,
    /// Trunk angular velocity, body frame (rad/s).
    pub angular_velocity: Vector3<f64>,
    pub limbs: [LimbState; 4],
}

impl RobotState {
    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self
                .limbs
                .iter()
                .all(|l| l.q.is_finite() && l.qd.iter().all(|v| v.is_finite()))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        *self.orientation.to_rotation_matrix().matrix()
    }

    /// Angular velocity in world coordinates.
    pub fn angular_velocity_world(&self) -> Vector3<f64> {
        self.orientation * self.angular_velocity
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FootContact {
    pub in_contact: bool,
    /// Ground penetration depth (m); zero out of contact.
    pub penetration: f64,
    /// Ground force on the foot, world frame (N).
    pub force: Vector3<f64>,
    /// Foot point, world frame.
    pub position: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContactState {
    pub feet: [FootContact; 4],
}

impl ContactState {
    pub fn total_force(&self) -> Vector3<f64> {
        self.feet.iter().map(|f| f.force).sum()
    }
}

/// Impedance target for one joint, evaluated at every physics evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointCommand {
    pub q_des: f64,
    pub qd_des: f64,
    pub gains: ImpedanceGains,
}

pub type Commands = [[JointCommand; 3]; 4];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Specific force in the body frame (m/s²), reads +g upward at rest.
    pub accel: Vector3<f64>,
    /// Body angular rate (rad/s).
    pub gyro: Vector3<f64>,
    pub timestamp: f64,
}

/// Rigid-body model of the whole robot.
#[derive(Clone, Debug)]
pub struct RobotModel {
    pub morphology: BodyMorphology,
    pub actuator: ActuatorParams,
    multibody: Multibody,
    limbs: [LimbBodies; 4],
}

pub const TRUNK_DOFS: usize = 6;
pub const DOFS: usize = TRUNK_DOFS + 12;

impl RobotModel {
    pub fn new(morphology: &BodyMorphology, actuator: &ActuatorParams) -> Result<Self> {
        ensure_valid(morphology)?;
        let violations = actuator.violations(f64::INFINITY);
        if !violations.is_empty() {
            return Err(Error::Config(format!("actuator: {}", violations.join("; "))));
        }
        let mut mb = Multibody::new(DOFS);
        let trunk = mb.add_body(Body {
            name: "trunk".into(),
            parent: None,
            joint: JointKind::Floating,
            dof: 0,
            multiplier: 1.0,
            tree: Transform::identity(),
            inertia: SpatialInertia {
                mass: morphology.trunk_mass,
                com: Vector3::zeros(),
                inertia_com: morphology.trunk_inertia_matrix(),
            },
        });
        let limbs = Leg::ALL.map(|leg| {
            append_limb(
                &mut mb,
                Some(trunk),
                Transform::translation(morphology.hip(leg)),
                morphology.limb(leg),
                leg.side(),
                Self::first_dof(leg),
            )
        });
        for dof in TRUNK_DOFS..DOFS {
            mb.set_armature(dof, actuator.reflected_inertia());
        }
        Ok(RobotModel {
            morphology: morphology.clone(),
            actuator: actuator.clone(),
            multibody: mb,
            limbs,
        })
    }

    pub fn first_dof(leg: Leg) -> usize {
        TRUNK_DOFS + 3 * leg.index()
    }

    pub fn multibody(&self) -> &Multibody {
        &self.multibody
    }

    pub fn limb_bodies(&self, leg: Leg) -> &LimbBodies {
        &self.limbs[leg.index()]
    }

    pub fn total_mass(&self) -> f64 {
        self.multibody.total_mass()
    }
}

/// Generalized state: trunk pose, joint angles, and velocities
/// `[trunk twist (body, angular first); joint rates]`.
#[derive(Clone, Debug, PartialEq)]
struct Generalized {
    position: Vector3<f64>,
    orientation: Quaternion<f64>,
    q: DVector<f64>,
    nu: DVector<f64>,
}

struct Derivative {
    position: Vector3<f64>,
    orientation: Quaternion<f64>,
    q: DVector<f64>,
    nu: DVector<f64>,
}

impl Generalized {
    fn rotation_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(self.orientation)
    }

    fn rotation(&self) -> Matrix3<f64> {
        *UnitQuaternion::new_normalize(self.orientation)
            .to_rotation_matrix()
            .matrix()
    }

    fn base(&self) -> Transform {
        Transform::from_pose(&self.rotation(), &self.position)
    }

    fn joint_vector(&self) -> DVector<f64> {
        let mut full = DVector::zeros(DOFS);
        full.rows_mut(TRUNK_DOFS, 12).copy_from(&self.q);
        full
    }

    fn advanced(&self, d: &Derivative, h: f64) -> Generalized {
        Generalized {
            position: self.position + d.position * h,
            orientation: self.orientation + d.orientation * h,
            q: &self.q + &d.q * h,
            nu: &self.nu + &d.nu * h,
        }
    }
}

/// Per-evaluation quantities reused by reporting.
struct Evaluation {
    accel: DVector<f64>,
    applied: DVector<f64>,
    sensed: [Vector3<f64>; 4],
}

pub struct World {
    pub model: RobotModel,
    pub params: WorldParams,
    state: Generalized,
    time: f64,
    /// Tangential anchor of each foot in contact.
    anchors: [Option<Vector3<f64>>; 4],
    contact: ContactState,
    sensed: [Vector3<f64>; 4],
    imu_rng: ChaCha8Rng,
    /// Time, world velocity and attitude at the previous IMU read.
    imu_reference: (f64, Vector3<f64>, UnitQuaternion<f64>),
    /// Work done by joint torques (J).
    pub actuator_work: f64,
}

impl World {
    /// Trunk at `position` with identity orientation, limbs at `pose`, at rest.
    pub fn new(model: RobotModel, params: WorldParams, position: Vector3<f64>, pose: [JointAngles; 4]) -> Result<Self> {
        if !(params.gravity.is_finite() && params.gravity >= 0.0) {
            return Err(Error::Config(format!(
                "gravity must be finite and >= 0, got {}",
                params.gravity
            )));
        }
        let mut q = DVector::zeros(12);
        for leg in Leg::ALL {
            let p = pose[leg.index()];
            if !p.is_finite() {
                return Err(Error::InvalidPose(format!("{leg}: {p:?}")));
            }
            q.rows_mut(3 * leg.index(), 3).copy_from(&p.to_vector());
        }
        let imu_rng = ChaCha8Rng::seed_from_u64(params.imu.seed);
        let mut world = World {
            model,
            params,
            state: Generalized {
                position,
                orientation: Quaternion::identity(),
                q,
                nu: DVector::zeros(DOFS),
            },
            time: 0.0,
            anchors: [None; 4],
            contact: ContactState::default(),
            sensed: [Vector3::zeros(); 4],
            imu_rng,
            imu_reference: (0.0, Vector3::zeros(), UnitQuaternion::identity()),
            actuator_work: 0.0,
        };
        world.contact.feet = world.contacts_at(&world.state).1;
        world.reset_imu_reference();
        Ok(world)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.params.gravity)
    }

    pub fn contact(&self) -> &ContactState {
        &self.contact
    }

    pub fn set_trunk_pose(&mut self, position: Vector3<f64>, orientation: UnitQuaternion<f64>) {
        self.state.position = position;
        self.state.orientation = orientation.into_inner();
        self.anchors = [None; 4];
        self.reset_imu_reference();
    }

    fn reset_imu_reference(&mut self) {
        self.imu_reference = (self.time, self.state_velocity_world(), self.state.rotation_quaternion());
    }

    /// Set the trunk velocity (world frame linear, body frame angular).
    pub fn set_trunk_velocity(&mut self, linear: Vector3<f64>, angular: Vector3<f64>) {
        let body_linear = self.state.rotation().tr_mul(&linear);
        for i in 0..3 {
            self.state.nu[i] = angular[i];
            self.state.nu[3 + i] = body_linear[i];
        }
        self.reset_imu_reference();
    }

    pub fn set_joint_velocities(&mut self, leg: Leg, qd: Vector3<f64>) {
        let first = RobotModel::first_dof(leg);
        self.state.nu.rows_mut(first, 3).copy_from(&qd);
    }

    fn state_velocity_world(&self) -> Vector3<f64> {
        self.state.rotation() * Vector3::new(self.state.nu[3], self.state.nu[4], self.state.nu[5])
    }

    pub fn state(&self) -> RobotState {
        let s = &self.state;
        let limbs = Leg::ALL.map(|leg| {
            let i = 3 * leg.index();
            let first = RobotModel::first_dof(leg);
            LimbState {
                q: JointAngles::new(s.q[i], s.q[i + 1], s.q[i + 2]),
                qd: Vector3::new(s.nu[first], s.nu[first + 1], s.nu[first + 2]),
                tau: self.sensed[leg.index()],
            }
        });
        RobotState {
            time: self.time,
            position: s.position,
            orientation: UnitQuaternion::new_normalize(s.orientation),
            velocity: self.state_velocity_world(),
            angular_velocity: Vector3::new(s.nu[0], s.nu[1], s.nu[2]),
            limbs,
        }
    }

    pub fn frames(&self) -> Frames {
        self.model
            .multibody
            .frames(&self.state.base(), &self.state.joint_vector())
    }

    /// World position of a foot.
    pub fn foot_position(&self, leg: Leg) -> Vector3<f64> {
        let frames = self.frames();
        let b = self.model.limb_bodies(leg);
        self.model.multibody.point_world(&frames, b.foot_body, &b.foot_point)
    }

    /// Kinetic plus potential energy (ground at zero height).
    pub fn mechanical_energy(&self) -> f64 {
        let frames = self.frames();
        let mb = &self.model.multibody;
        mb.kinetic_energy(&frames, &self.state.nu) + mb.potential_energy(&frames, &self.gravity_vector())
    }

    pub fn center_of_mass(&self) -> Vector3<f64> {
        self.model.multibody.center_of_mass(&self.frames())
    }

    fn contact_force(&self, leg: Leg, position: &Vector3<f64>, velocity: &Vector3<f64>) -> FootContact {
        let c = &self.params.contact;
        let penetration = -position.z;
        if !c.enabled || penetration <= 0.0 {
            return FootContact {
                position: *position,
                ..FootContact::default()
            };
        }
        let normal = (c.stiffness * penetration - c.damping * velocity.z).max(0.0);
        let anchor = self.anchors[leg.index()].unwrap_or(*position);
        let mut tangential = Vector3::new(
            -c.tangential_stiffness * (position.x - anchor.x) - c.tangential_damping * velocity.x,
            -c.tangential_stiffness * (position.y - anchor.y) - c.tangential_damping * velocity.y,
            0.0,
        );
        let cap = c.friction * normal;
        let magnitude = tangential.norm();
        if magnitude > cap {
            tangential *= cap / magnitude;
        }
        FootContact {
            in_contact: true,
            penetration,
            force: Vector3::new(tangential.x, tangential.y, normal),
            position: *position,
        }
    }

    /// Frames and foot contacts at a generalized state.
    fn contacts_at(&self, s: &Generalized) -> (Frames, [FootContact; 4]) {
        let mb = &self.model.multibody;
        let frames = mb.frames(&s.base(), &s.joint_vector());
        let velocities = mb.velocities(&frames, &s.nu);
        let contacts = Leg::ALL.map(|leg| {
            let b = self.model.limb_bodies(leg);
            let p = mb.point_world(&frames, b.foot_body, &b.foot_point);
            let v = mb.point_velocity_world(&frames, &velocities, b.foot_body, &b.foot_point);
            self.contact_force(leg, &p, &v)
        });
        (frames, contacts)
    }

    fn evaluate(&self, s: &Generalized, commands: &Commands) -> Evaluation {
        let mb = &self.model.multibody;
        let (frames, contacts) = self.contacts_at(s);
        let mut external = vec![Force::zeros(); mb.bodies().len()];
        for leg in Leg::ALL {
            let b = self.model.limb_bodies(leg);
            let contact = &contacts[leg.index()];
            if contact.in_contact {
                external[b.foot_body] += mb.point_force(&frames, b.foot_body, &b.foot_point, &contact.force);
            }
        }

        let limit = self.model.actuator.max_output_torque();
        let mut applied = DVector::zeros(DOFS);
        let mut sensed = [Vector3::zeros(); 4];
        for leg in Leg::ALL {
            for j in 0..3 {
                let dof = RobotModel::first_dof(leg) + j;
                let cmd = &commands[leg.index()][j];
                let out = impedance_torque(
                    &cmd.gains,
                    cmd.q_des,
                    s.q[dof - TRUNK_DOFS],
                    cmd.qd_des,
                    s.nu[dof],
                    limit,
                );
                sensed[leg.index()][j] = out.torque;
                applied[dof] =
                    self.params.transmission_scale[j] * out.torque + self.params.joint_friction.torque(s.nu[dof]);
            }
        }
        let accel = mb
            .forward_dynamics(&frames, &s.nu, &applied, &self.gravity_vector(), Some(&external))
            .unwrap_or_else(|| DVector::from_element(DOFS, f64::NAN));
        Evaluation { accel, applied, sensed }
    }

    fn derivative(&self, s: &Generalized, commands: &Commands) -> (Derivative, Evaluation) {
        let eval = self.evaluate(s, commands);
        let omega = Quaternion::new(0.0, s.nu[0], s.nu[1], s.nu[2]);
        let rot = s.rotation();
        let d = Derivative {
            position: rot * Vector3::new(s.nu[3], s.nu[4], s.nu[5]),
            orientation: s.orientation * omega * 0.5,
            q: s.nu.rows(TRUNK_DOFS, 12).into_owned(),
            nu: eval.accel.clone(),
        };
        (d, eval)
    }

    /// Advance by `dt` holding `commands`.
    pub fn step(&mut self, commands: &Commands, dt: f64) -> Result<(RobotState, ContactState)> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(Error::Config(format!("time step {dt} outside (0, {MAX_DT}]")));
        }
        let before = self.state.clone();
        let (next, eval) = match self.params.integrator {
            Integrator::Rk4 => {
                let (k1, eval) = self.derivative(&before, commands);
                let (k2, _) = self.derivative(&before.advanced(&k1, 0.5 * dt), commands);
                let (k3, _) = self.derivative(&before.advanced(&k2, 0.5 * dt), commands);
                let (k4, _) = self.derivative(&before.advanced(&k3, dt), commands);
                let combined = Derivative {
                    position: (k1.position + k2.position * 2.0 + k3.position * 2.0 + k4.position) / 6.0,
                    orientation: (k1.orientation + k2.orientation * 2.0 + k3.orientation * 2.0 + k4.orientation) / 6.0,
                    q: (&k1.q + &k2.q * 2.0 + &k3.q * 2.0 + &k4.q) / 6.0,
                    nu: (&k1.nu + &k2.nu * 2.0 + &k3.nu * 2.0 + &k4.nu) / 6.0,
                };
                (before.advanced(&combined, dt), eval)
            }
            Integrator::SemiImplicitEuler => {
                let eval = self.evaluate(&before, commands);
                let nu = &before.nu + &eval.accel * dt;
                let omega = Vector3::new(nu[0], nu[1], nu[2]);
                let rot = UnitQuaternion::new_normalize(before.orientation);
                let next = Generalized {
                    position: before.position + rot * Vector3::new(nu[3], nu[4], nu[5]) * dt,
                    orientation: (rot * UnitQuaternion::from_scaled_axis(omega * dt)).into_inner(),
                    q: &before.q + nu.rows(TRUNK_DOFS, 12) * dt,
                    nu,
                };
                (next, eval)
            }
        };
        let mut next = next;
        next.orientation = UnitQuaternion::new_normalize(next.orientation).into_inner();

        let finite = next.position.iter().all(|v| v.is_finite())
            && next.orientation.coords.iter().all(|v| v.is_finite())
            && next.q.iter().all(|v| v.is_finite())
            && next.nu.iter().all(|v| v.is_finite() && v.abs() < 1e4);
        if !finite {
            return Err(Error::Diverged {
                time: self.time,
                last_state: Box::new(self.state()),
            });
        }

        // Work over the step from the applied torques at its start.
        for dof in TRUNK_DOFS..DOFS {
            self.actuator_work += eval.applied[dof] * 0.5 * (before.nu[dof] + next.nu[dof]) * dt;
        }
        self.state = next;
        self.time += dt;
        self.sensed = eval.sensed;

        // Report contact at the new state and update the friction anchors.
        let (_, contacts) = self.contacts_at(&self.state);
        let c = self.params.contact.clone();
        for leg in Leg::ALL {
            let i = leg.index();
            let foot = contacts[i];
            self.anchors[i] = if foot.in_contact {
                let anchor = self.anchors[i].unwrap_or(foot.position);
                let offset = Vector3::new(foot.position.x - anchor.x, foot.position.y - anchor.y, 0.0);
                let spring = c.tangential_stiffness * offset.norm();
                let cap = c.friction * foot.force.z;
                if spring > cap && spring > 0.0 {
                    // Slip: drag the anchor so the spring sits on the cone.
                    let kept = cap / spring;
                    Some(Vector3::new(
                        foot.position.x - offset.x * kept,
                        foot.position.y - offset.y * kept,
                        0.0,
                    ))
                } else {
                    Some(anchor)
                }
            } else {
                None
            };
        }
        self.contact.feet = contacts;
        Ok((self.state(), self.contact))
    }

    /// Body-frame specific force and body rate averaged since the previous
    /// read (delta-velocity and delta-angle over the interval), with
    /// configured noise and bias. The first read after a state reset reports
    /// the instantaneous rate.
    pub fn imu_read(&mut self) -> ImuSample {
        let v = self.state_velocity_world();
        let attitude = self.state.rotation_quaternion();
        let (t0, v0, a0) = self.imu_reference;
        let (accel_world, mut gyro) = if self.time > t0 {
            let dt = self.time - t0;
            ((v - v0) / dt, (a0.inverse() * attitude).scaled_axis() / dt)
        } else {
            (
                Vector3::zeros(),
                Vector3::new(self.state.nu[0], self.state.nu[1], self.state.nu[2]),
            )
        };
        self.imu_reference = (self.time, v, attitude);
        let mut accel = attitude.inverse_transform_vector(&(accel_world - self.gravity_vector()));
        let p = &self.params.imu;
        accel += Vector3::from(p.accel_bias);
        gyro += Vector3::from(p.gyro_bias);
        if p.accel_noise > 0.0 {
            let n = Normal::new(0.0, p.accel_noise).expect("finite noise");
            accel += Vector3::from_fn(|_, _| n.sample(&mut self.imu_rng));
        }
        if p.gyro_noise > 0.0 {
            let n = Normal::new(0.0, p.gyro_noise).expect("finite noise");
            gyro += Vector3::from_fn(|_, _| n.sample(&mut self.imu_rng));
        }
        ImuSample {
            accel,
            gyro,
            timestamp: self.time,
        }
    }

    /// Spatial velocity of every body (body coordinates).
    pub fn body_velocities(&self) -> Vec<Motion> {
        self.model.multibody.velocities(&self.frames(), &self.state.nu)
    }

    /// World-frame velocity of a foot.
    pub fn foot_velocity(&self, leg: Leg) -> Vector3<f64> {
        let frames = self.frames();
        let vel = self.model.multibody.velocities(&frames, &self.state.nu);
        let b = self.model.limb_bodies(leg);
        self.model
            .multibody
            .point_velocity_world(&frames, &vel, b.foot_body, &b.foot_point)
    }
}

/// Relative tolerance on timestamp spacing accepted by [`integrate_velocity`].
pub const TIMESTAMP_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedTrace {
    /// World-frame velocity after each sample.
    pub velocities: Vec<Vector3<f64>>,
    /// Euclidean norm of each velocity.
    pub speeds: Vec<f64>,
    pub mean_speed: f64,
}

/// Dead-reckon velocity from interval-averaged IMU samples: each sample
/// after the first covers the interval since its predecessor. Attitude
/// advances by the sample's delta-angle, then the gravity-compensated
/// world-frame acceleration is applied over the interval.
/// `initial_orientation` is the attitude at the first sample.
pub fn integrate_velocity(
    samples: &[ImuSample],
    initial_velocity: Vector3<f64>,
    initial_orientation: UnitQuaternion<f64>,
    gravity: f64,
) -> Result<SpeedTrace> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no IMU samples".into()));
    }
    if samples.len() > 2 {
        let dt0 = samples[1].timestamp - samples[0].timestamp;
        for (i, w) in samples.windows(2).enumerate() {
            let dt = w[1].timestamp - w[0].timestamp;
            if !(dt > 0.0) || (dt - dt0).abs() > TIMESTAMP_TOLERANCE * dt0.abs().max(1e-9) {
                return Err(Error::NonUniformTimestamps { index: i + 1 });
            }
        }
    }
    let g = Vector3::new(0.0, 0.0, -gravity);
    let mut attitude = initial_orientation;
    let mut velocity = initial_velocity;
    let mut velocities = vec![velocity];
    for w in samples.windows(2) {
        let dt = w[1].timestamp - w[0].timestamp;
        attitude *= UnitQuaternion::from_scaled_axis(w[1].gyro * dt);
        velocity += (attitude * w[1].accel + g) * dt;
        velocities.push(velocity);
    }
    let speeds: Vec<f64> = velocities.iter().map(|v| v.norm()).collect();
    let mean_speed = speeds.iter().sum::<f64>() / speeds.len() as f64;
    Ok(SpeedTrace {
        velocities,
        speeds,
        mean_speed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::inverse_kinematics;

    fn standing_pose(morph: &BodyMorphology, height: f64) -> [JointAngles; 4] {
        Leg::ALL.map(|leg| {
            let limb = morph.limb(leg);
            let target = Vector3::new(0.0, leg.side().sign() * limb.lateral_offset(), -height);
            inverse_kinematics(limb, leg.side(), &target, &JointAngles::default()).unwrap()
        })
    }

    fn world(params: WorldParams, height: f64) -> World {
        let morph = BodyMorphology::default();
        let model = RobotModel::new(&morph, &ActuatorParams::default()).unwrap();
        let pose = standing_pose(&morph, 0.28);
        World::new(model, params, Vector3::new(0.0, 0.0, height), pose).unwrap()
    }

    fn hold(pose: &[JointAngles; 4], stiffness: f64, damping: f64) -> Commands {
        pose.map(|q| {
            let v = q.to_vector();
            [0, 1, 2].map(|j| JointCommand {
                q_des: v[j],
                qd_des: 0.0,
                gains: ImpedanceGains {
                    stiffness,
                    damping,
                    feedforward: 0.0,
                },
            })
        })
    }

    #[test]
    fn rest_without_gravity_is_stationary() {
        let mut w = world(
            WorldParams {
                gravity: 0.0,
                ..WorldParams::ideal()
            },
            1.0,
        );
        let before = w.state();
        for _ in 0..100 {
            w.step(&[[JointCommand::default(); 3]; 4], 0.001).unwrap();
        }
        let after = w.state();
        assert_eq!(before.position, after.position);
        assert_eq!(before.limbs, after.limbs);
    }

    #[test]
    fn ballistic_trunk_follows_parabola() {
        let mut params = WorldParams::ideal();
        params.contact.enabled = false;
        let mut w = world(params, 1.0);
        let v0 = Vector3::new(0.4, -0.1, 1.5);
        w.set_trunk_velocity(v0, Vector3::zeros());
        let c0 = w.center_of_mass();
        let commands = [[JointCommand::default(); 3]; 4];
        let dt = 0.001;
        for _ in 0..500 {
            w.step(&commands, dt).unwrap();
        }
        let t = w.time();
        let expected: Vector3<f64> = c0 + v0 * t + Vector3::new(0.0, 0.0, -9.81) * (0.5 * t * t);
        assert!(
            (w.center_of_mass() - expected).norm() < 1e-9,
            "{}",
            w.center_of_mass() - expected
        );
    }

    #[test]
    fn contact_free_energy_drift_is_small() {
        let mut params = WorldParams::ideal();
        params.contact.enabled = false;
        let mut w = world(params, 1.0);
        w.set_trunk_velocity(Vector3::new(0.3, 0.0, 0.5), Vector3::new(0.5, -1.0, 0.3));
        for leg in Leg::ALL {
            w.set_joint_velocities(leg, Vector3::new(1.0, -2.0, 3.0));
        }
        let e0 = w.mechanical_energy();
        let commands = [[JointCommand::default(); 3]; 4];
        for _ in 0..1000 {
            w.step(&commands, 0.001).unwrap();
        }
        let drift = (w.mechanical_energy() - e0).abs() / e0.abs();
        assert!(drift < 1e-3, "drift {drift}");
    }

    #[test]
    fn dropped_robot_settles_on_its_weight() {
        let mut w = world(WorldParams::default(), 0.281);
        let pose = standing_pose(&BodyMorphology::default(), 0.28);
        let commands = hold(&pose, 60.0, 1.5);
        let t0 = std::time::Instant::now();
        for _ in 0..1500 {
            w.step(&commands, 0.001).unwrap();
        }
        eprintln!("1500 steps in {:?}", t0.elapsed());
        let weight = w.model.total_mass() * 9.81;
        let fz = w.contact().total_force().z;
        assert!((fz - weight).abs() < 0.01 * weight, "{fz} vs {weight}");
        for foot in &w.contact().feet {
            assert!(foot.force.z >= 0.0);
        }
        let imu = w.imu_read();
        assert!(
            (imu.accel - Vector3::new(0.0, 0.0, 9.81)).norm() < 0.05,
            "{}",
            imu.accel
        );
    }

    #[test]
    fn step_rejects_oversized_dt() {
        let mut w = world(WorldParams::default(), 1.0);
        assert!(w.step(&[[JointCommand::default(); 3]; 4], 0.003).is_err());
    }

    #[test]
    fn constant_velocity_imu_matches_static() {
        let mut params = WorldParams::ideal();
        params.contact.enabled = false;
        params.gravity = 0.0;
        let mut w = world(params, 1.0);
        w.set_trunk_velocity(Vector3::new(0.3, 0.0, 0.0), Vector3::zeros());
        let mut samples = Vec::new();
        for _ in 0..200 {
            w.step(&[[JointCommand::default(); 3]; 4], 0.001).unwrap();
            samples.push(w.imu_read());
        }
        assert!(samples.iter().all(|s| s.accel.norm() < 1e-12 && s.gyro.norm() < 1e-12));
        let trace = integrate_velocity(&samples, Vector3::new(0.3, 0.0, 0.0), UnitQuaternion::identity(), 0.0).unwrap();
        assert!((trace.mean_speed - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dead_reckoning_of_a_tumbling_fall_is_exact() {
        let mut params = WorldParams::ideal();
        params.contact.enabled = false;
        let mut w = world(params, 2.0);
        let v0 = Vector3::new(0.3, -0.1, 0.5);
        w.set_trunk_velocity(v0, Vector3::new(1.5, -2.0, 0.7));
        let mut samples = vec![w.imu_read()];
        let mut truth = vec![v0];
        for i in 1..=400 {
            w.step(&[[JointCommand::default(); 3]; 4], 0.001).unwrap();
            if i % 2 == 0 {
                samples.push(w.imu_read());
                truth.push(w.state().velocity);
            }
        }
        let trace = integrate_velocity(&samples, v0, UnitQuaternion::identity(), 9.81).unwrap();
        let err = trace
            .velocities
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn seeded_imu_noise_repeats() {
        let read = || {
            let mut params = WorldParams::default();
            params.imu.accel_noise = 0.05;
            params.imu.gyro_noise = 0.01;
            params.imu.seed = 9;
            let mut w = world(params, 0.5);
            (0..20)
                .map(|_| {
                    w.step(&[[JointCommand::default(); 3]; 4], 0.001).unwrap();
                    w.imu_read()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(read(), read());
    }

    #[test]
    fn integrate_velocity_examples() {
        let still = |t: f64, bias: Vector3<f64>| ImuSample {
            accel: Vector3::new(0.0, 0.0, 9.81) + bias,
            gyro: Vector3::zeros(),
            timestamp: t,
        };
        let v0 = Vector3::new(0.1, 0.2, 0.0);
        let samples: Vec<_> = (0..100).map(|i| still(i as f64 * 0.002, Vector3::zeros())).collect();
        let trace = integrate_velocity(&samples, v0, UnitQuaternion::identity(), 9.81).unwrap();
        assert!(trace.speeds.iter().all(|s| (s - v0.norm()).abs() < 1e-12));

        let bias = Vector3::new(0.03, -0.04, 0.0);
        let samples: Vec<_> = (0..=500).map(|i| still(i as f64 * 0.002, bias)).collect();
        let trace = integrate_velocity(&samples, Vector3::zeros(), UnitQuaternion::identity(), 9.81).unwrap();
        assert!((trace.speeds.last().unwrap() - bias.norm() * 1.0).abs() < 1e-9);

        let mut uneven = samples.clone();
        uneven[10].timestamp += 0.0005;
        assert!(matches!(
            integrate_velocity(&uneven, Vector3::zeros(), UnitQuaternion::identity(), 9.81),
            Err(Error::NonUniformTimestamps { .. })
        ));
    }
}
