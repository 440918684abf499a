//! Mobile serial-chain manipulators: a holonomic planar base (two prismatic
//! joints) carrying a chain of revolute joints, plus grasp kinematics and the
//! coupled object–robot dynamics.

mod chain;
mod grasp;

pub use chain::{Frames, JointFrame};
pub use grasp::{
    block_diagonal, coupled_object_dynamics, grasp_matrix, object_jacobian, taskspace_to_jointspace, GraspSpec,
    ObjectModel, ObjectState,
};

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, Primitive};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RobotError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("rank-deficient grasp configuration")]
    RankDeficient,
    #[error("grasp constraint violated by {residual:.3e} (tolerance {tolerance:.1e})")]
    GraspInconsistent { residual: f64, tolerance: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Rigid transform with a rotation matrix block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut h = nalgebra::Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        h
    }
}

/// Rigid body attached to a joint frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub mass: f64,
    /// Centre of mass in the body frame.
    #[serde(default = "Vector3::zeros")]
    pub com: Vector3<f64>,
    /// Inertia tensor about the centre of mass, body frame.
    pub inertia: Matrix3<f64>,
    /// Collision primitives in the body frame.
    #[serde(default)]
    pub collision: Vec<Primitive>,
}

/// Revolute link: `T = T_parent · Trans(offset) · Rot(axis, θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub offset: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub limits: [f64; 2],
    pub body: Body,
    /// Reflected rotor inertia added to the joint's diagonal of `M`.
    #[serde(default)]
    pub armature: f64,
}

/// Mobile manipulator: base prismatic joints `(x, y)` then revolute links.
/// Configuration layout is `q = [b_x, b_y, θ_1, …, θ_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialChainModel {
    pub base: Body,
    pub links: Vec<Link>,
    /// End-effector frame relative to the last link frame.
    pub tool: Pose,
    /// Bounds on the base position, `[[x_min, x_max], [y_min, y_max]]`.
    #[serde(default = "default_base_limits")]
    pub base_limits: [[f64; 2]; 2],
}

/// Armature of the desk-scale arm joints, kg·m².
const ARMATURE: f64 = 0.1;

fn default_base_limits() -> [[f64; 2]; 2] {
    [[-1e3, 1e3], [-1e3, 1e3]]
}

fn check_inertia(i: &Matrix3<f64>, what: &str) -> Result<(), RobotError> {
    if (i - i.transpose()).abs().max() > 1e-9 * i.abs().max().max(1.0) {
        return Err(RobotError::InvalidModel(format!("{what} inertia is not symmetric")));
    }
    if i.cholesky().is_none() {
        return Err(RobotError::InvalidModel(format!(
            "{what} inertia is not positive definite"
        )));
    }
    Ok(())
}

impl SerialChainModel {
    pub fn validate(&self) -> Result<(), RobotError> {
        if !(self.base.mass > 0.0) {
            return Err(RobotError::InvalidModel("base mass must be positive".into()));
        }
        check_inertia(&self.base.inertia, "base")?;
        if self.links.is_empty() {
            return Err(RobotError::InvalidModel("arm needs at least one link".into()));
        }
        for (i, l) in self.links.iter().enumerate() {
            if (l.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(RobotError::InvalidModel(format!("link {i} axis is not a unit vector")));
            }
            if !(l.body.mass > 0.0) {
                return Err(RobotError::InvalidModel(format!("link {i} mass must be positive")));
            }
            check_inertia(&l.body.inertia, &format!("link {i}"))?;
            if !(l.limits[0] < l.limits[1]) {
                return Err(RobotError::InvalidModel(format!("link {i} limits are inverted")));
            }
            if !(l.armature >= 0.0) {
                return Err(RobotError::InvalidModel(format!(
                    "link {i} armature must be non-negative"
                )));
            }
            for p in &l.body.collision {
                p.validate()?;
            }
        }
        for p in &self.base.collision {
            p.validate()?;
        }
        let r = &self.tool.rotation;
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(RobotError::InvalidModel("tool rotation is not proper".into()));
        }
        Ok(())
    }

    /// Degrees of freedom `n_i = 2 + arm joints`.
    pub fn dof(&self) -> usize {
        2 + self.links.len()
    }

    /// Number of rigid bodies: the base followed by one per link.
    pub fn body_count(&self) -> usize {
        1 + self.links.len()
    }

    pub fn body(&self, k: usize) -> &Body {
        if k == 0 {
            &self.base
        } else {
            &self.links[k - 1].body
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.base.mass + self.links.iter().map(|l| l.body.mass).sum::<f64>()
    }

    /// Lower and upper bounds on every coordinate of `q`.
    pub fn limits(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dof();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for a in 0..2 {
            lo[a] = self.base_limits[a][0];
            hi[a] = self.base_limits[a][1];
        }
        for (i, l) in self.links.iter().enumerate() {
            lo[2 + i] = l.limits[0];
            hi[2 + i] = l.limits[1];
        }
        (lo, hi)
    }

    pub fn within_limits(&self, q: &DVector<f64>) -> bool {
        let (lo, hi) = self.limits();
        q.len() == self.dof() && (0..q.len()).all(|i| q[i] >= lo[i] && q[i] <= hi[i])
    }

    pub(crate) fn check_dim(&self, v: &DVector<f64>) -> Result<(), RobotError> {
        if v.len() != self.dof() {
            return Err(RobotError::Dimension {
                expected: self.dof(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Desk-scale mobile manipulator: a box base and a yaw, shoulder pitch,
    /// elbow pitch, wrist pitch, wrist yaw, wrist roll arm with the shoulder at
    /// 0.4 m, 0.45 m upper and fore arms and a 0.1 m wrist (`n = 8`). At `q = 0` the
    /// arm points along +x and the tool sits at `(1.0, 0, 0.4)`.
    pub fn desk_scale() -> Self {
        let cyl = |m: f64, len: f64, r: f64| {
            // rod along x
            let ixx = 0.5 * m * r * r;
            let iyy = m * (3.0 * r * r + len * len) / 12.0;
            Matrix3::from_diagonal(&Vector3::new(ixx, iyy, iyy))
        };
        let link =
            |offset: Vector3<f64>, axis: Vector3<f64>, mass: f64, len: f64, limits: [f64; 2], radius: f64| Link {
                offset,
                axis,
                limits,
                armature: ARMATURE,
                body: Body {
                    mass,
                    com: Vector3::new(0.5 * len, 0.0, 0.0),
                    inertia: cyl(mass, len.max(0.05), 0.04),
                    collision: if len > 0.0 {
                        vec![Primitive::capsule(
                            Vector3::zeros(),
                            Vector3::new(len, 0.0, 0.0),
                            radius,
                        )]
                    } else {
                        Vec::new()
                    },
                },
            };
        let half = Vector3::new(0.18, 0.18, 0.12);
        let mb = 20.0;
        let base_inertia = Matrix3::from_diagonal(&Vector3::new(
            mb * (half.y * half.y + half.z * half.z) / 3.0,
            mb * (half.x * half.x + half.z * half.z) / 3.0,
            mb * (half.x * half.x + half.y * half.y) / 3.0,
        ));
        let pi = std::f64::consts::PI;
        Self {
            base: Body {
                mass: mb,
                com: Vector3::new(0.0, 0.0, half.z),
                inertia: base_inertia,
                collision: vec![Primitive::aabb(Vector3::new(0.0, 0.0, half.z), half)],
            },
            links: vec![
                Link {
                    offset: Vector3::new(0.0, 0.0, 0.4),
                    axis: Vector3::z(),
                    limits: [-pi, pi],
                    armature: ARMATURE,
                    body: Body {
                        mass: 1.0,
                        com: Vector3::zeros(),
                        inertia: Matrix3::from_diagonal(&Vector3::new(4e-3, 4e-3, 4e-3)),
                        collision: Vec::new(),
                    },
                },
                link(Vector3::zeros(), Vector3::y(), 2.0, 0.45, [-2.0, 2.0], 0.04),
                link(
                    Vector3::new(0.45, 0.0, 0.0),
                    Vector3::y(),
                    1.5,
                    0.45,
                    [-2.6, 2.6],
                    0.035,
                ),
                link(Vector3::new(0.45, 0.0, 0.0), Vector3::y(), 0.4, 0.08, [-2.0, 2.0], 0.03),
                link(Vector3::new(0.08, 0.0, 0.0), Vector3::z(), 0.2, 0.0, [-1.5, 1.5], 0.0),
                link(Vector3::zeros(), Vector3::x(), 0.3, 0.02, [-pi, pi], 0.025),
            ],
            tool: Pose::new(Matrix3::identity(), Vector3::new(0.02, 0.0, 0.0)),
            base_limits: default_base_limits(),
        }
    }
}

/// Rotation vector of `r`. Tolerates the slightly non-orthonormal matrices of
/// intermediate integrator stages, where an `acos` of the trace would not be
/// defined near the identity.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = v.norm();
    let angle = s.atan2(0.5 * (r.trace() - 1.0));
    if angle > 3.0 {
        // the antisymmetric part loses the axis near a half turn
        return nalgebra::Rotation3::from_matrix(r).scaled_axis();
    }
    if s == 0.0 {
        return Vector3::zeros();
    }
    v * (angle / s)
}

/// End-effector pose `ᵂX^E`.
pub fn forward_kinematics(m: &SerialChainModel, q: &DVector<f64>) -> Result<Pose, RobotError> {
    Ok(Frames::new(m, q)?.ee)
}

/// `6×n` geometric Jacobian of the end effector, rows `[linear; angular]`.
pub fn geometric_jacobian(m: &SerialChainModel, q: &DVector<f64>) -> Result<nalgebra::DMatrix<f64>, RobotError> {
    let f = Frames::new(m, q)?;
    Ok(f.point_jacobian(m.links.len(), &f.ee.translation))
}

/// Recursive Newton–Euler inverse dynamics. `gravity` is the gravitational
/// acceleration vector, e.g. `(0, 0, −9.81)`.
pub fn inverse_dynamics(
    m: &SerialChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, RobotError> {
    m.check_dim(qd)?;
    m.check_dim(qdd)?;
    Ok(Frames::new(m, q)?.rnea(m, qd, qdd, gravity))
}

pub fn mass_matrix(m: &SerialChainModel, q: &DVector<f64>) -> Result<nalgebra::DMatrix<f64>, RobotError> {
    Ok(Frames::new(m, q)?.mass_matrix(m))
}

/// `C(q, q̇)q̇`.
pub fn coriolis_times_qdot(
    m: &SerialChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<DVector<f64>, RobotError> {
    let zero = DVector::zeros(m.dof());
    inverse_dynamics(m, q, qd, &zero, &Vector3::zeros())
}

/// Coriolis matrix from the Christoffel symbols of `M`.
pub fn coriolis_matrix(
    m: &SerialChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<nalgebra::DMatrix<f64>, RobotError> {
    m.check_dim(qd)?;
    Ok(Frames::new(m, q)?.coriolis_matrix(m, qd))
}

pub fn gravity_vector(
    m: &SerialChainModel,
    q: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, RobotError> {
    let zero = DVector::zeros(m.dof());
    inverse_dynamics(m, q, &zero, &zero, gravity)
}

/// `q̈ = M⁻¹(τ − C q̇ − g)`.
pub fn forward_dynamics(
    m: &SerialChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, RobotError> {
    m.check_dim(tau)?;
    let f = Frames::new(m, q)?;
    Ok(f.forward_dynamics(m, qd, tau, gravity)?)
}

pub fn kinetic_energy(m: &SerialChainModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64, RobotError> {
    m.check_dim(qd)?;
    let mm = mass_matrix(m, q)?;
    Ok(0.5 * qd.dot(&(mm * qd)))
}

pub fn potential_energy(m: &SerialChainModel, q: &DVector<f64>, gravity: &Vector3<f64>) -> Result<f64, RobotError> {
    let f = Frames::new(m, q)?;
    Ok(f.bodies.iter().map(|b| -b.mass * gravity.dot(&b.com)).sum())
}

/// World-frame collision primitives tagged with their body index.
pub fn collision_geometry(m: &SerialChainModel, q: &DVector<f64>) -> Result<Vec<(usize, Primitive)>, RobotError> {
    Ok(Frames::new(m, q)?.collision_geometry(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn rotation_log_inverts_the_exponential() {
        for w in [
            Vector3::new(0.3, -0.2, 0.1),
            Vector3::new(0.0, 0.0, 3.1),
            Vector3::new(1e-9, 0.0, 0.0),
        ] {
            let r = Rotation3::from_scaled_axis(w).into_inner();
            assert!((rotation_log(&r) - w).amax() <= 1e-12, "{w}");
        }
        assert_eq!(rotation_log(&Matrix3::identity()), Vector3::zeros());
    }

    #[test]
    fn rotation_log_is_finite_off_the_rotation_group() {
        // an integrator stage: identity plus a small skew step, trace above 3
        let r = Matrix3::identity()
            + Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -4e-6, 0.0, 4e-6, 0.0)
            + Matrix3::identity() * 1e-12;
        let w = rotation_log(&r);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.x - 4e-6).abs() <= 1e-12);
    }
}
