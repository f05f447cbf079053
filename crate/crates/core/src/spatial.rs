//! Spatial (6D) vector algebra in the angular-first convention.

use nalgebra::{Matrix3, Matrix6, Rotation3, Unit, Vector3, Vector6};

pub type Motion = Vector6<f64>;
pub type Force = Vector6<f64>;

pub fn angular(v: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

pub fn linear(v: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(v[3], v[4], v[5])
}

pub fn join(angular: &Vector3<f64>, linear: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(angular.x, angular.y, angular.z, linear.x, linear.y, linear.z)
}

/// Motion cross product `v ×ᵐ m`.
pub fn cross_motion(v: &Motion, m: &Motion) -> Motion {
    let (w, vl) = (angular(v), linear(v));
    let (mw, ml) = (angular(m), linear(m));
    join(&w.cross(&mw), &(w.cross(&ml) + vl.cross(&mw)))
}

/// Force cross product `v ×ᶠ f`.
pub fn cross_force(v: &Motion, f: &Force) -> Force {
    let (w, vl) = (angular(v), linear(v));
    let (n, fl) = (angular(f), linear(f));
    join(&(w.cross(&n) + vl.cross(&fl)), &w.cross(&fl))
}

/// Coordinate transform from a parent frame to a child frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    /// Rotates parent coordinates into child coordinates.
    pub rot: Matrix3<f64>,
    /// Child origin expressed in parent coordinates.
    pub trans: Vector3<f64>,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn translation(trans: Vector3<f64>) -> Self {
        Transform {
            rot: Matrix3::identity(),
            trans,
        }
    }

    /// Child frame rotated by `angle` about `axis` (parent coordinates).
    pub fn rotation(axis: &Vector3<f64>, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Transform {
            rot: r.matrix().transpose(),
            trans: Vector3::zeros(),
        }
    }

    /// Frame with orientation `orientation` (child-to-parent rotation) at `position`.
    pub fn from_pose(orientation: &Matrix3<f64>, position: &Vector3<f64>) -> Self {
        Transform {
            rot: orientation.transpose(),
            trans: *position,
        }
    }

    /// `self ∘ inner`: first `inner` (a → b), then `self` (b → c).
    pub fn compose(&self, inner: &Transform) -> Transform {
        Transform {
            rot: self.rot * inner.rot,
            trans: inner.trans + inner.rot.tr_mul(&self.trans),
        }
    }

    /// Child-to-parent rotation, i.e. the child's orientation in the parent.
    pub fn orientation(&self) -> Matrix3<f64> {
        self.rot.transpose()
    }

    pub fn apply_motion(&self, v: &Motion) -> Motion {
        let w = angular(v);
        let vl = linear(v);
        join(&(self.rot * w), &(self.rot * (vl - self.trans.cross(&w))))
    }

    /// 6×6 motion transform matrix (parent to child).
    pub fn motion_matrix(&self) -> Matrix6<f64> {
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rot);
        out.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-self.rot * self.trans.cross_matrix()));
        out
    }

    /// Map a force expressed in the child frame back to the parent frame.
    pub fn apply_force_to_parent(&self, f: &Force) -> Force {
        let n = self.rot.tr_mul(&angular(f));
        let fl = self.rot.tr_mul(&linear(f));
        join(&(n + self.trans.cross(&fl)), &fl)
    }

    /// Point given in child coordinates, expressed in parent coordinates.
    pub fn point_to_parent(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.trans + self.rot.tr_mul(p)
    }
}

/// Rigid-body inertia about the body frame origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialInertia {
    pub mass: f64,
    /// Center of mass in body coordinates.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass.
    pub inertia_com: Matrix3<f64>,
}

impl SpatialInertia {
    pub fn zero() -> Self {
        SpatialInertia {
            mass: 0.0,
            com: Vector3::zeros(),
            inertia_com: Matrix3::zeros(),
        }
    }

    pub fn point(mass: f64, at: Vector3<f64>) -> Self {
        SpatialInertia {
            mass,
            com: at,
            inertia_com: Matrix3::zeros(),
        }
    }

    /// Sum of two inertias expressed in the same frame.
    pub fn combine(&self, other: &SpatialInertia) -> SpatialInertia {
        let mass = self.mass + other.mass;
        if mass == 0.0 {
            return SpatialInertia {
                inertia_com: self.inertia_com + other.inertia_com,
                ..SpatialInertia::zero()
            };
        }
        let com = (self.com * self.mass + other.com * other.mass) / mass;
        let shift = |si: &SpatialInertia| {
            let d = si.com - com;
            si.inertia_com + si.mass * (d.dot(&d) * Matrix3::identity() - d * d.transpose())
        };
        SpatialInertia {
            mass,
            com,
            inertia_com: shift(self) + shift(other),
        }
    }

    pub fn to_matrix(&self) -> Matrix6<f64> {
        let cx = self.com.cross_matrix();
        let mut out = Matrix6::zeros();
        let upper_left = self.inertia_com + self.mass * cx * cx.transpose();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&upper_left);
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(self.mass * cx));
        out.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(self.mass * cx.transpose()));
        out.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(self.mass * Matrix3::identity()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_matches_sequential_application() {
        let a = Transform::rotation(&Vector3::new(1.0, 2.0, 0.5), 0.7)
            .compose(&Transform::translation(Vector3::new(0.1, -0.3, 0.2)));
        let b = Transform::translation(Vector3::new(0.0, 0.4, -1.0))
            .compose(&Transform::rotation(&Vector3::new(0.0, 1.0, 0.0), -1.2));
        let v = Motion::new(0.3, -0.2, 0.9, 1.0, 2.0, -0.5);
        let lhs = b.compose(&a).apply_motion(&v);
        let rhs = b.apply_motion(&a.apply_motion(&v));
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn force_transform_is_dual_of_motion_transform() {
        let x = Transform::rotation(&Vector3::new(0.2, 1.0, -0.4), 1.1)
            .compose(&Transform::translation(Vector3::new(0.5, 0.1, -0.2)));
        let v = Motion::new(0.3, -0.2, 0.9, 1.0, 2.0, -0.5);
        let f = Force::new(-1.0, 0.4, 0.2, 3.0, -0.7, 1.5);
        // Power is frame independent.
        let p_child = x.apply_motion(&v).dot(&f);
        let p_parent = v.dot(&x.apply_force_to_parent(&f));
        assert!((p_child - p_parent).abs() < 1e-13);
    }

    #[test]
    fn combine_preserves_spatial_matrix_sum() {
        let a = SpatialInertia {
            mass: 1.2,
            com: Vector3::new(0.1, 0.0, -0.2),
            inertia_com: Matrix3::from_diagonal(&Vector3::new(0.01, 0.02, 0.03)),
        };
        let b = SpatialInertia::point(0.4, Vector3::new(-0.3, 0.2, 0.1));
        let sum = a.combine(&b).to_matrix();
        assert!((sum - (a.to_matrix() + b.to_matrix())).norm() < 1e-14);
    }
}
