use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::{Pose, RobotError, SerialChainModel};
use crate::geometry::Primitive;

/// World-frame description of one joint at a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointFrame {
    pub prismatic: bool,
    /// Unit axis in world coordinates.
    pub axis: Vector3<f64>,
    /// A point on the axis in world coordinates.
    pub origin: Vector3<f64>,
}

/// World-frame description of one body at a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyFrame {
    pub pose: Pose,
    pub com: Vector3<f64>,
    /// Inertia about the centre of mass in world coordinates.
    pub inertia: Matrix3<f64>,
    pub mass: f64,
    /// Index of the last joint that moves this body.
    pub joint: usize,
}

/// All world-frame quantities of a chain at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub joints: Vec<JointFrame>,
    pub bodies: Vec<BodyFrame>,
    pub ee: Pose,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    // Rodrigues
    let k = skew(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

impl Pose {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation)),
        )
    }
}

impl Frames {
    pub fn new(m: &SerialChainModel, q: &DVector<f64>) -> Result<Self, RobotError> {
        m.check_dim(q)?;
        let n = m.dof();
        let mut joints = Vec::with_capacity(n);
        let mut bodies = Vec::with_capacity(m.body_count());
        let base_origin = Vector3::new(q[0], q[1], 0.0);
        joints.push(JointFrame {
            prismatic: true,
            axis: Vector3::x(),
            origin: Vector3::new(0.0, q[1], 0.0),
        });
        joints.push(JointFrame {
            prismatic: true,
            axis: Vector3::y(),
            origin: base_origin,
        });
        let mut frame = Pose::new(Matrix3::identity(), base_origin);
        let body_frame = |pose: Pose, body: &super::Body, joint: usize| BodyFrame {
            pose,
            com: pose.transform_point(&body.com),
            inertia: pose.rotation * body.inertia * pose.rotation.transpose(),
            mass: body.mass,
            joint,
        };
        bodies.push(body_frame(frame, &m.base, 1));
        for (i, l) in m.links.iter().enumerate() {
            let origin = frame.transform_point(&l.offset);
            let axis = frame.rotation * l.axis;
            joints.push(JointFrame {
                prismatic: false,
                axis,
                origin,
            });
            frame = Pose::new(frame.rotation * axis_angle(&l.axis, q[2 + i]), origin);
            bodies.push(body_frame(frame, &l.body, 2 + i));
        }
        let ee = frame.compose(&m.tool);
        Ok(Self { joints, bodies, ee })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// `6×n` Jacobian of a point rigidly attached to body `k`, rows `[linear; angular]`.
    pub fn point_jacobian(&self, k: usize, p: &Vector3<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(6, self.dof());
        for (j, jf) in self.joints.iter().enumerate().take(self.bodies[k].joint + 1) {
            if jf.prismatic {
                jac.fixed_view_mut::<3, 1>(0, j).copy_from(&jf.axis);
            } else {
                jac.fixed_view_mut::<3, 1>(0, j)
                    .copy_from(&jf.axis.cross(&(p - jf.origin)));
                jac.fixed_view_mut::<3, 1>(3, j).copy_from(&jf.axis);
            }
        }
        jac
    }

    /// Angular velocity, angular acceleration and the acceleration of the
    /// joint origin preceding each body, given base acceleration `a0`.
    fn forward_pass(
        &self,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        a0: Vector3<f64>,
    ) -> Vec<(Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
        let mut out = Vec::with_capacity(self.bodies.len());
        let mut w = Vector3::zeros();
        let mut alpha = Vector3::zeros();
        let mut a = a0;
        let mut reference = self.joints[0].origin;
        for (j, jf) in self.joints.iter().enumerate() {
            let r = jf.origin - reference;
            a += alpha.cross(&r) + w.cross(&w.cross(&r));
            reference = jf.origin;
            if jf.prismatic {
                let rel = jf.axis * qd[j];
                a += jf.axis * qdd[j] + 2.0 * w.cross(&rel);
            } else {
                alpha += jf.axis * qdd[j] + w.cross(&(jf.axis * qd[j]));
                w += jf.axis * qd[j];
            }
            if j >= 1 {
                out.push((w, alpha, a, reference));
            }
        }
        out
    }

    /// Classical acceleration bias `J̇q̇` of a point on body `k`, `[linear; angular]`.
    pub fn point_bias_acceleration(&self, k: usize, p: &Vector3<f64>, qd: &DVector<f64>) -> nalgebra::Vector6<f64> {
        let zero = DVector::zeros(self.dof());
        let (w, alpha, a, reference) = self.forward_pass(qd, &zero, Vector3::zeros())[k];
        let r = p - reference;
        let lin = a + alpha.cross(&r) + w.cross(&w.cross(&r));
        nalgebra::Vector6::new(lin.x, lin.y, lin.z, alpha.x, alpha.y, alpha.z)
    }

    /// Recursive Newton–Euler in world coordinates.
    pub fn rnea(
        &self,
        m: &SerialChainModel,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        gravity: &Vector3<f64>,
    ) -> DVector<f64> {
        let kin = self.forward_pass(qd, qdd, -gravity);
        let wrenches: Vec<(Vector3<f64>, Vector3<f64>)> = self
            .bodies
            .iter()
            .zip(&kin)
            .map(|(b, (w, alpha, a, reference))| {
                let d = b.com - reference;
                let ac = a + alpha.cross(&d) + w.cross(&w.cross(&d));
                let f = ac * b.mass;
                let n = b.inertia * alpha + w.cross(&(b.inertia * w));
                (f, n)
            })
            .collect();
        let mut tau = DVector::zeros(self.dof());
        for (j, jf) in self.joints.iter().enumerate() {
            let mut f = Vector3::zeros();
            let mut n = Vector3::zeros();
            for (b, (fk, nk)) in self.bodies.iter().zip(&wrenches) {
                if b.joint >= j {
                    f += fk;
                    n += nk + (b.com - jf.origin).cross(fk);
                }
            }
            tau[j] = if jf.prismatic { jf.axis.dot(&f) } else { jf.axis.dot(&n) };
        }
        for (i, l) in m.links.iter().enumerate() {
            tau[2 + i] += l.armature * qdd[2 + i];
        }
        tau
    }

    /// `M = Σ m Jvᵀ Jv + Jωᵀ I Jω` over body centres of mass.
    pub fn mass_matrix(&self, m: &SerialChainModel) -> DMatrix<f64> {
        let n = self.dof();
        let mut mm = DMatrix::zeros(n, n);
        for (k, b) in self.bodies.iter().enumerate() {
            let jac = self.point_jacobian(k, &b.com);
            let jv = jac.rows(0, 3);
            let jw = jac.rows(3, 3);
            mm += jv.transpose() * jv * b.mass + jw.transpose() * b.inertia * jw;
        }
        for (i, l) in m.links.iter().enumerate() {
            mm[(2 + i, 2 + i)] += l.armature;
        }
        0.5 * (&mm + mm.transpose())
    }

    /// Derivative of a world vector moving with frame `after` joint `j`.
    fn rotate_if(&self, j: usize, moves: bool, v: &Vector3<f64>) -> Vector3<f64> {
        let jf = &self.joints[j];
        if moves && !jf.prismatic {
            jf.axis.cross(v)
        } else {
            Vector3::zeros()
        }
    }

    /// `∂M/∂q_j` for every `j`, from the analytic derivatives of the body Jacobians.
    pub fn mass_matrix_derivatives(&self) -> Vec<DMatrix<f64>> {
        let n = self.dof();
        let mut out = vec![DMatrix::zeros(n, n); n];
        for (k, b) in self.bodies.iter().enumerate() {
            let jac = self.point_jacobian(k, &b.com);
            let jv = jac.rows(0, 3).into_owned();
            let jw = jac.rows(3, 3).into_owned();
            for (j, dm) in out.iter_mut().enumerate().take(b.joint + 1) {
                let jj = &self.joints[j];
                // derivative of the COM position
                let dp = if jj.prismatic {
                    jj.axis
                } else {
                    jj.axis.cross(&(b.com - jj.origin))
                };
                let mut djv = DMatrix::zeros(3, n);
                let mut djw = DMatrix::zeros(3, n);
                for i in 0..=b.joint {
                    let ji = &self.joints[i];
                    let after = i > j;
                    if ji.prismatic {
                        djv.fixed_view_mut::<3, 1>(0, i)
                            .copy_from(&self.rotate_if(j, after, &ji.axis));
                    } else {
                        let dz = self.rotate_if(j, after, &ji.axis);
                        let r = b.com - ji.origin;
                        let dorigin = if after {
                            if jj.prismatic {
                                jj.axis
                            } else {
                                jj.axis.cross(&(ji.origin - jj.origin))
                            }
                        } else {
                            Vector3::zeros()
                        };
                        let dr = dp - dorigin;
                        djv.fixed_view_mut::<3, 1>(0, i)
                            .copy_from(&(dz.cross(&r) + ji.axis.cross(&dr)));
                        djw.fixed_view_mut::<3, 1>(0, i).copy_from(&dz);
                    }
                }
                let di = if jj.prismatic {
                    Matrix3::zeros()
                } else {
                    let s = skew(&jj.axis);
                    s * b.inertia - b.inertia * s
                };
                let tv = djv.transpose() * &jv * b.mass;
                let tw = djw.transpose() * b.inertia * &jw;
                *dm += &tv + tv.transpose() + &tw + tw.transpose() + jw.transpose() * di * &jw;
            }
        }
        out
    }

    /// Christoffel-consistent Coriolis matrix, so that `Ṁ − 2C` is skew.
    pub fn coriolis_matrix(&self, _m: &SerialChainModel, qd: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let dm = self.mass_matrix_derivatives();
        let mut c = DMatrix::zeros(n, n);
        for k in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += 0.5 * (dm[i][(k, l)] + dm[l][(k, i)] - dm[k][(i, l)]) * qd[i];
                }
                c[(k, l)] = s;
            }
        }
        c
    }

    pub fn forward_dynamics(
        &self,
        m: &SerialChainModel,
        qd: &DVector<f64>,
        tau: &DVector<f64>,
        gravity: &Vector3<f64>,
    ) -> Result<DVector<f64>, RobotError> {
        let zero = DVector::zeros(self.dof());
        let bias = self.rnea(m, qd, &zero, gravity);
        let chol: Cholesky<f64, Dyn> = self.mass_matrix(m).cholesky().ok_or(RobotError::NotPositiveDefinite)?;
        Ok(chol.solve(&(tau - bias)))
    }

    /// World-frame collision primitives tagged with their body index.
    pub fn collision_geometry(&self, m: &SerialChainModel) -> Vec<(usize, Primitive)> {
        let mut out = Vec::new();
        for (k, b) in self.bodies.iter().enumerate() {
            let body = m.body(k);
            if body.collision.is_empty() {
                continue;
            }
            let iso = b.pose.to_isometry();
            for p in &body.collision {
                out.push((k, p.transformed(&iso)));
            }
        }
        out
    }
}
