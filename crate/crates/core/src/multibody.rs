//! Kinematic trees of rigid bodies with recursive Newton–Euler dynamics.
//!
//! Bodies are stored parent-before-child. A revolute body's joint rate is
//! `multiplier · q̇[dof]`, which lets a body mimic another joint (the tarsus
//! of a four-link limb follows the knee with multiplier -1). A floating root
//! owns generalized velocities `0..6`: its spatial velocity in body
//! coordinates, angular part first.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};

use crate::spatial::{angular, cross_force, cross_motion, join, linear, Force, Motion, SpatialInertia, Transform};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JointKind {
    Floating,
    Revolute { axis: Vector3<f64> },
}

#[derive(Clone, Debug)]
pub struct Body {
    pub name: String,
    pub parent: Option<usize>,
    pub joint: JointKind,
    pub dof: usize,
    pub multiplier: f64,
    /// Parent frame to joint frame at zero joint angle.
    pub tree: Transform,
    pub inertia: SpatialInertia,
}

#[derive(Clone, Debug)]
pub struct Multibody {
    bodies: Vec<Body>,
    nv: usize,
    armature: Vec<f64>,
    /// Cached spatial inertia matrices, one per body.
    inertia: Vec<Matrix6<f64>>,
}

/// Per-body transforms for one configuration.
#[derive(Clone, Debug)]
pub struct Frames {
    /// Parent (or world, for the root) to body.
    pub local: Vec<Transform>,
    /// World to body.
    pub world: Vec<Transform>,
}

impl Multibody {
    pub fn new(nv: usize) -> Self {
        Multibody {
            bodies: Vec::new(),
            nv,
            armature: vec![0.0; nv],
            inertia: Vec::new(),
        }
    }

    /// Append a body and return its index. Parents must already exist.
    pub fn add_body(&mut self, body: Body) -> usize {
        if let Some(p) = body.parent {
            assert!(p < self.bodies.len(), "parent {p} must precede its child");
        } else {
            assert!(self.bodies.is_empty(), "only the first body may be a root");
        }
        match body.joint {
            JointKind::Floating => assert!(self.nv >= 6 && body.parent.is_none()),
            JointKind::Revolute { .. } => assert!(body.dof < self.nv),
        }
        self.inertia.push(body.inertia.to_matrix());
        self.bodies.push(body);
        self.bodies.len() - 1
    }

    pub fn set_armature(&mut self, dof: usize, value: f64) {
        self.armature[dof] = value;
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn is_floating(&self) -> bool {
        matches!(self.bodies.first().map(|b| b.joint), Some(JointKind::Floating))
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.inertia.mass).sum()
    }

    /// Body transforms. `base` is the world-to-root transform of a floating
    /// root (ignored for fixed-base trees); `q` is indexed by dof.
    pub fn frames(&self, base: &Transform, q: &DVector<f64>) -> Frames {
        let mut local = Vec::with_capacity(self.bodies.len());
        let mut world: Vec<Transform> = Vec::with_capacity(self.bodies.len());
        for body in &self.bodies {
            let x = match body.joint {
                JointKind::Floating => *base,
                JointKind::Revolute { axis } => {
                    Transform::rotation(&axis, body.multiplier * q[body.dof]).compose(&body.tree)
                }
            };
            let w = match body.parent {
                Some(p) => x.compose(&world[p]),
                None => x,
            };
            local.push(x);
            world.push(w);
        }
        Frames { local, world }
    }

    fn joint_motion(&self, body: &Body, qd: &DVector<f64>) -> Motion {
        match body.joint {
            JointKind::Floating => Vector6::from_iterator(qd.rows(0, 6).iter().copied()),
            JointKind::Revolute { axis } => join(&(axis * body.multiplier * qd[body.dof]), &Vector3::zeros()),
        }
    }

    /// Spatial velocity of every body, body coordinates.
    pub fn velocities(&self, frames: &Frames, qd: &DVector<f64>) -> Vec<Motion> {
        let mut vel: Vec<Motion> = Vec::with_capacity(self.bodies.len());
        for (k, body) in self.bodies.iter().enumerate() {
            let parent = body
                .parent
                .map_or(Motion::zeros(), |p| frames.local[k].apply_motion(&vel[p]));
            vel.push(parent + self.joint_motion(body, qd));
        }
        vel
    }

    /// Generalized forces `τ = M q̈ + h(q, q̇) − Jᵀ f_ext`.
    ///
    /// `gravity` is the world-frame gravitational acceleration; `external`
    /// holds one spatial force per body in body coordinates.
    pub fn inverse_dynamics(
        &self,
        frames: &Frames,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        gravity: &Vector3<f64>,
        external: Option<&[Force]>,
    ) -> DVector<f64> {
        let n = self.bodies.len();
        let mut vel: Vec<Motion> = Vec::with_capacity(n);
        let mut acc: Vec<Motion> = Vec::with_capacity(n);
        let mut force: Vec<Force> = Vec::with_capacity(n);
        let world_acc = join(&Vector3::zeros(), &(-gravity));

        for (k, body) in self.bodies.iter().enumerate() {
            let x = &frames.local[k];
            let (v_parent, a_parent) = match body.parent {
                Some(p) => (x.apply_motion(&vel[p]), x.apply_motion(&acc[p])),
                None => (Motion::zeros(), x.apply_motion(&world_acc)),
            };
            let vj = self.joint_motion(body, qd);
            let aj = self.joint_motion(body, qdd);
            let v = v_parent + vj;
            let a = a_parent + aj + cross_motion(&v, &vj);
            let inertia = &self.inertia[k];
            let mut f = inertia * a + cross_force(&v, &(inertia * v));
            if let Some(ext) = external {
                f -= ext[k];
            }
            vel.push(v);
            acc.push(a);
            force.push(f);
        }

        let mut tau = DVector::zeros(self.nv);
        for k in (0..n).rev() {
            let body = &self.bodies[k];
            let f = force[k];
            match body.joint {
                JointKind::Floating => {
                    for i in 0..6 {
                        tau[i] += f[i];
                    }
                }
                JointKind::Revolute { axis } => {
                    tau[body.dof] += body.multiplier * axis.dot(&angular(&f));
                }
            }
            if let Some(p) = body.parent {
                let fp = frames.local[k].apply_force_to_parent(&f);
                force[p] += fp;
            }
        }
        for i in 0..self.nv {
            tau[i] += self.armature[i] * qdd[i];
        }
        tau
    }

    /// Joint rate columns of a body: `(dof, motion subspace vector)`.
    fn columns(body: &Body) -> impl Iterator<Item = (usize, Motion)> + '_ {
        let count = match body.joint {
            JointKind::Floating => 6,
            JointKind::Revolute { .. } => 1,
        };
        (0..count).map(move |i| match body.joint {
            JointKind::Floating => {
                let mut s = Motion::zeros();
                s[i] = 1.0;
                (i, s)
            }
            JointKind::Revolute { axis } => (body.dof, join(&(axis * body.multiplier), &Vector3::zeros())),
        })
    }

    /// Joint-space inertia matrix by the composite-rigid-body method.
    pub fn mass_matrix(&self, frames: &Frames) -> DMatrix<f64> {
        let n = self.bodies.len();
        let mut composite = self.inertia.clone();
        for k in (0..n).rev() {
            if let Some(p) = self.bodies[k].parent {
                let x = frames.local[k].motion_matrix();
                let shifted = x.transpose() * composite[k] * x;
                composite[p] += shifted;
            }
        }
        let mut m = DMatrix::zeros(self.nv, self.nv);
        for (k, body) in self.bodies.iter().enumerate() {
            for (dk, sk) in Self::columns(body) {
                let mut f = composite[k] * sk;
                for (dj, sj) in Self::columns(body) {
                    m[(dj, dk)] += sj.dot(&f);
                }
                let mut child = k;
                while let Some(p) = self.bodies[child].parent {
                    f = frames.local[child].apply_force_to_parent(&f);
                    for (dj, sj) in Self::columns(&self.bodies[p]) {
                        let v = sj.dot(&f);
                        m[(dj, dk)] += v;
                        m[(dk, dj)] += v;
                    }
                    child = p;
                }
            }
        }
        for i in 0..self.nv {
            m[(i, i)] += self.armature[i];
        }
        m
    }

    /// Solve `M q̈ = τ − h` for the generalized accelerations.
    pub fn forward_dynamics(
        &self,
        frames: &Frames,
        qd: &DVector<f64>,
        tau: &DVector<f64>,
        gravity: &Vector3<f64>,
        external: Option<&[Force]>,
    ) -> Option<DVector<f64>> {
        let zero = DVector::zeros(self.nv);
        let bias = self.inverse_dynamics(frames, qd, &zero, gravity, external);
        let m = self.mass_matrix(frames);
        let rhs = tau - bias;
        m.cholesky().map(|c| c.solve(&rhs))
    }

    pub fn kinetic_energy(&self, frames: &Frames, qd: &DVector<f64>) -> f64 {
        let vel = self.velocities(frames, qd);
        let bodies: f64 = self.inertia.iter().zip(&vel).map(|(i, v)| 0.5 * v.dot(&(i * v))).sum();
        let rotors: f64 = (0..self.nv).map(|i| 0.5 * self.armature[i] * qd[i] * qd[i]).sum();
        bodies + rotors
    }

    pub fn potential_energy(&self, frames: &Frames, gravity: &Vector3<f64>) -> f64 {
        self.bodies
            .iter()
            .enumerate()
            .map(|(k, b)| -b.inertia.mass * gravity.dot(&frames.world[k].point_to_parent(&b.inertia.com)))
            .sum()
    }

    /// World position of a point fixed in `body`.
    pub fn point_world(&self, frames: &Frames, body: usize, local: &Vector3<f64>) -> Vector3<f64> {
        frames.world[body].point_to_parent(local)
    }

    /// World velocity of a point fixed in `body`.
    pub fn point_velocity_world(
        &self,
        frames: &Frames,
        velocities: &[Motion],
        body: usize,
        local: &Vector3<f64>,
    ) -> Vector3<f64> {
        let v = &velocities[body];
        let body_frame = angular(v).cross(local) + linear(v);
        frames.world[body].rot.tr_mul(&body_frame)
    }

    /// Whole-tree center of mass in world coordinates.
    pub fn center_of_mass(&self, frames: &Frames) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        let mut mass = 0.0;
        for (k, b) in self.bodies.iter().enumerate() {
            sum += b.inertia.mass * frames.world[k].point_to_parent(&b.inertia.com);
            mass += b.inertia.mass;
        }
        if mass > 0.0 {
            sum / mass
        } else {
            sum
        }
    }

    /// Spatial force in body coordinates for a world-frame force applied at a
    /// body-fixed point.
    pub fn point_force(&self, frames: &Frames, body: usize, local: &Vector3<f64>, force_world: &Vector3<f64>) -> Force {
        let f = frames.world[body].rot * force_world;
        join(&local.cross(&f), &f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    /// Planar double pendulum about -y, links along -z.
    fn double_pendulum() -> Multibody {
        let mut mb = Multibody::new(2);
        let axis = Vector3::new(0.0, -1.0, 0.0);
        let rod = |m: f64, l: f64| SpatialInertia {
            mass: m,
            com: Vector3::new(0.0, 0.0, -l / 2.0),
            inertia_com: Matrix3::from_diagonal(&Vector3::new(m * l * l / 12.0, m * l * l / 12.0, 0.0)),
        };
        mb.add_body(Body {
            name: "upper".into(),
            parent: None,
            joint: JointKind::Revolute { axis },
            dof: 0,
            multiplier: 1.0,
            tree: Transform::identity(),
            inertia: rod(1.0, 0.4),
        });
        mb.add_body(Body {
            name: "lower".into(),
            parent: Some(0),
            joint: JointKind::Revolute { axis },
            dof: 1,
            multiplier: 1.0,
            tree: Transform::translation(Vector3::new(0.0, 0.0, -0.4)),
            inertia: rod(0.5, 0.3),
        });
        mb
    }

    #[test]
    fn static_gravity_torque_of_horizontal_rod() {
        let mb = double_pendulum();
        let q = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]);
        let frames = mb.frames(&Transform::identity(), &q);
        let zero = DVector::zeros(2);
        let g = Vector3::new(0.0, 0.0, -9.81);
        let tau = mb.inverse_dynamics(&frames, &zero, &zero, &g, None);
        // Upper rod COM at 0.2 m, lower rod COM at 0.55 m, both horizontal.
        let expected = 9.81 * (1.0 * 0.2 + 0.5 * 0.55);
        assert!((tau[0] - expected).abs() < 1e-12, "{tau}");
        assert!((tau[1] - 9.81 * 0.5 * 0.15).abs() < 1e-12);
    }

    #[test]
    fn mass_matrix_matches_closed_form() {
        let mb = double_pendulum();
        let q2: f64 = 0.7;
        let q = DVector::from_vec(vec![0.3, q2]);
        let m = mb.mass_matrix(&mb.frames(&Transform::identity(), &q));
        let (m1, l1, m2, l2) = (1.0, 0.4, 0.5, 0.3);
        let c2 = l2 / 2.0;
        let i2 = m2 * l2 * l2 / 12.0;
        let m11 = m1 * l1 * l1 / 3.0 + i2 + m2 * (l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * q2.cos());
        let m12 = i2 + m2 * (c2 * c2 + l1 * c2 * q2.cos());
        let m22 = i2 + m2 * c2 * c2;
        assert!((m[(0, 0)] - m11).abs() < 1e-12);
        assert!((m[(0, 1)] - m12).abs() < 1e-12);
        assert!((m[(1, 1)] - m22).abs() < 1e-12);
    }

    #[test]
    fn composite_mass_matrix_matches_unit_acceleration_columns() {
        let mut mb = Multibody::new(9);
        mb.add_body(Body {
            name: "trunk".into(),
            parent: None,
            joint: JointKind::Floating,
            dof: 0,
            multiplier: 1.0,
            tree: Transform::identity(),
            inertia: SpatialInertia {
                mass: 3.0,
                com: Vector3::new(0.01, -0.02, 0.03),
                inertia_com: Matrix3::from_diagonal(&Vector3::new(0.05, 0.1, 0.12)),
            },
        });
        let rod = SpatialInertia {
            mass: 0.4,
            com: Vector3::new(0.0, 0.0, -0.1),
            inertia_com: Matrix3::from_diagonal(&Vector3::new(1e-3, 1e-3, 0.0)),
        };
        let a = mb.add_body(Body {
            name: "a".into(),
            parent: Some(0),
            joint: JointKind::Revolute { axis: Vector3::x() },
            dof: 6,
            multiplier: 1.0,
            tree: Transform::translation(Vector3::new(0.2, 0.1, 0.0)),
            inertia: rod,
        });
        let b = mb.add_body(Body {
            name: "b".into(),
            parent: Some(a),
            joint: JointKind::Revolute { axis: -Vector3::y() },
            dof: 7,
            multiplier: 1.0,
            tree: Transform::translation(Vector3::new(0.0, 0.05, 0.0)),
            inertia: rod,
        });
        let c = mb.add_body(Body {
            name: "c".into(),
            parent: Some(b),
            joint: JointKind::Revolute { axis: -Vector3::y() },
            dof: 8,
            multiplier: 1.0,
            tree: Transform::translation(Vector3::new(0.0, 0.0, -0.2)),
            inertia: rod,
        });
        mb.add_body(Body {
            name: "mimic".into(),
            parent: Some(c),
            joint: JointKind::Revolute { axis: -Vector3::y() },
            dof: 8,
            multiplier: -1.0,
            tree: Transform::translation(Vector3::new(0.0, 0.0, -0.2)),
            inertia: rod,
        });
        mb.set_armature(7, 0.01);
        let base = Transform::rotation(&Vector3::new(0.3, 1.0, -0.2), 0.4)
            .compose(&Transform::translation(Vector3::new(0.1, 0.2, 0.5)));
        let q = DVector::from_fn(9, |i, _| 0.3 * i as f64 - 0.7);
        let frames = mb.frames(&base, &q);
        let fast = mb.mass_matrix(&frames);
        let zero = DVector::zeros(9);
        for j in 0..9 {
            let mut unit = DVector::zeros(9);
            unit[j] = 1.0;
            let col = mb.inverse_dynamics(&frames, &zero, &unit, &Vector3::zeros(), None);
            assert!((fast.column(j) - col).norm() < 1e-12, "column {j}");
        }
    }
}
