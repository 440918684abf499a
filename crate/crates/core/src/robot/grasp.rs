use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::chain::Frames;
use super::{Pose, RobotError, SerialChainModel};
use crate::geometry::Primitive;

/// Constant end-effector pose in the object frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspSpec {
    /// Grasp point relative to the object origin, object frame.
    pub offset: Vector3<f64>,
    /// End-effector orientation relative to the object frame, `ᴼR^E`.
    pub rotation: Matrix3<f64>,
}

impl GraspSpec {
    pub fn validate(&self) -> Result<(), RobotError> {
        let r = &self.rotation;
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(RobotError::InvalidModel("grasp rotation is not proper".into()));
        }
        if self.offset.iter().any(|v| !v.is_finite()) {
            return Err(RobotError::InvalidModel("grasp offset is not finite".into()));
        }
        Ok(())
    }

    pub fn relative(&self) -> Pose {
        Pose::new(self.rotation, self.offset)
    }

    /// End-effector pose implied by an object pose.
    pub fn ee_from_object(&self, object: &Pose) -> Pose {
        object.compose(&self.relative())
    }

    /// Object pose implied by an end-effector pose.
    pub fn object_from_ee(&self, ee: &Pose) -> Pose {
        ee.compose(&self.relative().inverse())
    }
}

/// Rigid carried object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub mass: f64,
    /// Inertia about the centre of mass, object frame.
    pub inertia: Matrix3<f64>,
    /// Collision primitive in the object frame.
    pub collision: Primitive,
}

impl ObjectModel {
    pub fn validate(&self) -> Result<(), RobotError> {
        if !(self.mass > 0.0) {
            return Err(RobotError::InvalidModel("object mass must be positive".into()));
        }
        let i = &self.inertia;
        if (i - i.transpose()).abs().max() > 1e-9 || i.cholesky().is_none() {
            return Err(RobotError::InvalidModel(
                "object inertia must be symmetric positive definite".into(),
            ));
        }
        self.collision.validate()?;
        Ok(())
    }

    /// Radius of a ball about the object origin enclosing the collision shape.
    pub fn bounding_radius(&self) -> f64 {
        let (c, r) = self.collision.bounding_sphere();
        c.norm() + r
    }

    /// `M_o = diag(m I, R I Rᵀ)`.
    pub fn mass_matrix(&self, rotation: &Matrix3<f64>) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * self.mass));
        m.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(rotation * self.inertia * rotation.transpose()));
        m
    }
}

/// Object pose and world-frame twist `v_o = [v; ω]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pose: Pose,
    pub twist: Vector6<f64>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `J_{o_i} = [[I, S(−p)], [0, I]]`, mapping the object twist to the twist of
/// a point displaced by `p` from the object origin.
pub fn object_jacobian(p: &Vector3<f64>) -> Matrix6<f64> {
    let mut j = Matrix6::identity();
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&(-p)));
    j
}

/// `G = [J_{o_1}ᵀ … J_{o_N}ᵀ]` (6 × 6N) with `p_i = p_{E_i} − x_o`.
pub fn grasp_matrix(ee_positions: &[Vector3<f64>], object_position: &Vector3<f64>) -> Result<DMatrix<f64>, RobotError> {
    if ee_positions.is_empty() {
        return Err(RobotError::RankDeficient);
    }
    let mut g = DMatrix::zeros(6, 6 * ee_positions.len());
    for (i, p) in ee_positions.iter().enumerate() {
        let jo = object_jacobian(&(p - object_position));
        g.view_mut((0, 6 * i), (6, 6)).copy_from(&jo.transpose());
    }
    if !g.iter().all(|v| v.is_finite()) || g.clone().svd(false, false).singular_values.min() < 1e-9 {
        return Err(RobotError::RankDeficient);
    }
    Ok(g)
}

pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `τ = Jᵀ G⁺ u` with the Moore–Penrose pseudo-inverse `G⁺ = Gᵀ(GGᵀ)⁻¹`;
/// `u` is the desired object wrench and `G⁺u` its distribution over the grasps.
pub fn taskspace_to_jointspace(
    j: &DMatrix<f64>,
    g: &DMatrix<f64>,
    u: &Vector6<f64>,
) -> Result<DVector<f64>, RobotError> {
    if g.nrows() != 6 || j.nrows() != g.ncols() {
        return Err(RobotError::Dimension {
            expected: g.ncols(),
            got: j.nrows(),
        });
    }
    let ggt = g * g.transpose();
    let chol = ggt.cholesky().ok_or(RobotError::RankDeficient)?;
    let lambda = g.transpose() * chol.solve(&DVector::from_column_slice(u.as_slice()));
    Ok(j.transpose() * lambda)
}

/// Object acceleration from the coupled object–robot dynamics
/// `M̃ v̇_o + C̃ v_o + g̃ = G u` with `M̃ = M_o + G M̄ Gᵀ`, where `u` stacks the
/// task-space wrenches of all robots.
///
/// The task-space robot terms are `M̄ = (J M⁻¹ Jᵀ)⁻¹`,
/// `C̄ v = M̄ (J M⁻¹ C q̇ − J̇ q̇)` and `ḡ = M̄ J M⁻¹ g`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_object_dynamics(
    models: &[SerialChainModel],
    qs: &[DVector<f64>],
    qds: &[DVector<f64>],
    object: &ObjectModel,
    state: &ObjectState,
    u: &[Vector6<f64>],
    gravity: &Vector3<f64>,
    tolerance: f64,
) -> Result<Vector6<f64>, RobotError> {
    let n = models.len();
    if qs.len() != n || qds.len() != n || u.len() != n {
        return Err(RobotError::Dimension {
            expected: n,
            got: qs.len().min(qds.len()).min(u.len()),
        });
    }
    let r = state.pose.rotation;
    let w = Vector3::new(state.twist[3], state.twist[4], state.twist[5]);
    let inertia_w = r * object.inertia * r.transpose();
    let mut m_tilde = object.mass_matrix(&r);
    let mut rhs = Vector6::zeros();
    rhs.fixed_rows_mut::<3>(0).copy_from(&(gravity * object.mass));
    rhs.fixed_rows_mut::<3>(3).copy_from(&(-w.cross(&(inertia_w * w))));

    for i in 0..n {
        let m = &models[i];
        m.check_dim(&qds[i])?;
        let f = Frames::new(m, &qs[i])?;
        let k = m.links.len();
        let jac = f.point_jacobian(k, &f.ee.translation);
        let p = f.ee.translation - state.pose.translation;
        let jo = object_jacobian(&p);
        let v_i = &jac * &qds[i];
        let expected = jo * state.twist;
        let residual = (v_i.clone() - DVector::from_column_slice(expected.as_slice())).amax();
        if residual > tolerance {
            return Err(RobotError::GraspInconsistent { residual, tolerance });
        }
        let mm = f.mass_matrix(m);
        let chol = mm.cholesky().ok_or(RobotError::NotPositiveDefinite)?;
        let minv_jt = chol.solve(&jac.transpose());
        let op = &jac * &minv_jt;
        let lambda = op.cholesky().ok_or(RobotError::RankDeficient)?.inverse();
        let zero = DVector::zeros(m.dof());
        let cqd = f.rnea(m, &qds[i], &zero, &Vector3::zeros());
        let g = f.rnea(m, &zero, &zero, gravity);
        let bias = f.point_bias_acceleration(k, &f.ee.translation, &qds[i]);
        let mu = &lambda * (&jac * chol.solve(&cqd) - DVector::from_column_slice(bias.as_slice()));
        let gbar = &lambda * (&jac * chol.solve(&g));
        let lam6 = Matrix6::from_iterator(lambda.iter().copied());
        // rigid-grasp acceleration offset d/dt(J_o) v_o
        let mut centripetal = Vector6::zeros();
        centripetal.fixed_rows_mut::<3>(0).copy_from(&w.cross(&w.cross(&p)));
        m_tilde += jo.transpose() * lam6 * jo;
        let mu6 = Vector6::from_column_slice(mu.as_slice());
        let g6 = Vector6::from_column_slice(gbar.as_slice());
        rhs += jo.transpose() * (u[i] - mu6 - g6 - lam6 * centripetal);
    }
    let chol = m_tilde.cholesky().ok_or(RobotError::NotPositiveDefinite)?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::{forward_kinematics, geometric_jacobian, kinetic_energy};
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use std::f64::consts::PI;

    fn object() -> ObjectModel {
        ObjectModel {
            mass: 2.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.05, 0.05, 0.08)),
            collision: Primitive::aabb(Vector3::zeros(), Vector3::new(0.2, 0.2, 0.05)),
        }
    }

    /// Three robots around the object with an arm configuration that keeps
    /// the Jacobian square and regular.
    pub(super) fn layout() -> (Vec<SerialChainModel>, Vec<DVector<f64>>, Vec<GraspSpec>, Pose) {
        let m = SerialChainModel::desk_scale();
        let q_arm = [0.0, -0.3, 0.9, -0.6, 0.0, 0.1];
        let mut models = Vec::new();
        let mut qs = Vec::new();
        let mut grasps = Vec::new();
        let mut ee = Vec::new();
        for i in 0..3 {
            let a = 2.0 * PI * i as f64 / 3.0;
            let mut q = DVector::zeros(m.dof());
            q[2] = a + PI;
            q.rows_mut(3, q_arm.len() - 1).copy_from_slice(&q_arm[1..]);
            let mut probe = q.clone();
            probe[0] = 0.0;
            probe[1] = 0.0;
            let local = forward_kinematics(&m, &probe).unwrap();
            // place the base so the tool sits 0.2 m from the origin along `a`
            let target = Vector3::new(0.2 * a.cos(), 0.2 * a.sin(), local.translation.z);
            q[0] = target.x - local.translation.x;
            q[1] = target.y - local.translation.y;
            let pose = forward_kinematics(&m, &q).unwrap();
            models.push(m.clone());
            qs.push(q);
            ee.push(pose);
        }
        let obj_pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, ee[0].translation.z));
        for e in &ee {
            let rel = obj_pose.inverse().compose(e);
            grasps.push(GraspSpec {
                offset: rel.translation,
                rotation: rel.rotation,
            });
        }
        (models, qs, grasps, obj_pose)
    }

    #[test]
    fn object_jacobian_cases() {
        assert_eq!(object_jacobian(&Vector3::zeros()), Matrix6::identity());
        let j = object_jacobian(&Vector3::new(0.0, 0.0, 1.0));
        let block = j.fixed_view::<3, 3>(0, 3).into_owned();
        assert_eq!(block, skew(&Vector3::new(0.0, 0.0, -1.0)));
    }

    #[test]
    fn grasp_matrix_rank_for_three_robots() {
        let (models, qs, _, obj) = layout();
        let ee: Vec<Vector3<f64>> = models
            .iter()
            .zip(&qs)
            .map(|(m, q)| forward_kinematics(m, q).unwrap().translation)
            .collect();
        let g = grasp_matrix(&ee, &obj.translation).unwrap();
        assert_eq!(g.shape(), (6, 18));
        assert_eq!(g.clone().rank(1e-9), 6);
        assert!(grasp_matrix(&[], &Vector3::zeros()).is_err());
    }

    #[test]
    fn taskspace_mapping() {
        let j = DMatrix::from_fn(6, 6, |r, c| if r == c { 2.0 } else { 0.1 * (r + c) as f64 });
        let g = grasp_matrix(&[Vector3::zeros()], &Vector3::zeros()).unwrap();
        let u = Vector6::new(1.0, -2.0, 0.5, 0.1, 0.2, -0.3);
        let tau = taskspace_to_jointspace(&j, &g, &u).unwrap();
        let expected = j.transpose() * DVector::from_column_slice(u.as_slice());
        assert!((tau - expected).amax() < 1e-12);
        assert_eq!(taskspace_to_jointspace(&j, &g, &Vector6::zeros()).unwrap().amax(), 0.0);

        let g3 = grasp_matrix(
            &[
                Vector3::new(0.3, 0.1, 0.2),
                Vector3::new(-0.2, 0.4, 0.0),
                Vector3::new(0.0, -0.3, -0.1),
            ],
            &Vector3::new(0.05, 0.0, 0.1),
        )
        .unwrap();
        let gp_t = (&g3 * g3.transpose()).try_inverse().unwrap() * &g3;
        assert!((gp_t * g3.transpose() - DMatrix::identity(6, 6)).amax() < 1e-10);
    }

    fn consistent_twist(
        models: &[SerialChainModel],
        qs: &[DVector<f64>],
        obj: &Pose,
        twist: &Vector6<f64>,
    ) -> Vec<DVector<f64>> {
        models
            .iter()
            .zip(qs)
            .map(|(m, q)| {
                let j = geometric_jacobian(m, q).unwrap();
                let p = forward_kinematics(m, q).unwrap().translation - obj.translation;
                let v = object_jacobian(&p) * twist;
                j.clone().pseudo_inverse(1e-12).unwrap() * DVector::from_column_slice(v.as_slice())
            })
            .collect()
    }

    #[test]
    fn equilibrium_when_gravity_is_balanced() {
        let (models, qs, _, obj_pose) = layout();
        let obj = object();
        let gvec = Vector3::new(0.0, 0.0, -9.81);
        let state = ObjectState {
            pose: obj_pose,
            twist: Vector6::zeros(),
        };
        let qds: Vec<DVector<f64>> = models.iter().map(|m| DVector::zeros(m.dof())).collect();
        // u_i = ḡ_i + share of the object weight
        let ee: Vec<Vector3<f64>> = models
            .iter()
            .zip(&qs)
            .map(|(m, q)| forward_kinematics(m, q).unwrap().translation)
            .collect();
        let g = grasp_matrix(&ee, &obj_pose.translation).unwrap();
        let mut go = Vector6::zeros();
        go.fixed_rows_mut::<3>(0).copy_from(&(-gvec * obj.mass));
        let share =
            g.transpose() * (&g * g.transpose()).try_inverse().unwrap() * DVector::from_column_slice(go.as_slice());
        let mut u = Vec::new();
        for (i, (m, q)) in models.iter().zip(&qs).enumerate() {
            let f = Frames::new(m, q).unwrap();
            let jac = f.point_jacobian(m.links.len(), &f.ee.translation);
            let gq = crate::robot::gravity_vector(m, q, &gvec).unwrap();
            // ḡ = M̄ J M⁻¹ g
            let mm = crate::robot::mass_matrix(m, q).unwrap();
            let minv = mm.try_inverse().unwrap();
            let lam = (&jac * &minv * jac.transpose()).try_inverse().unwrap();
            let gbar = lam * &jac * minv * gq;
            u.push(Vector6::from_iterator((0..6).map(|r| gbar[r] + share[6 * i + r])));
        }
        let acc = coupled_object_dynamics(&models, &qs, &qds, &obj, &state, &u, &gvec, 1e-9).unwrap();
        assert!(acc.amax() < 1e-9, "{acc}");
    }

    #[test]
    fn inconsistent_grasp_velocity_is_rejected() {
        let (models, qs, _, obj_pose) = layout();
        let state = ObjectState {
            pose: obj_pose,
            twist: Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0),
        };
        let qds: Vec<DVector<f64>> = models.iter().map(|m| DVector::zeros(m.dof())).collect();
        let u = vec![Vector6::zeros(); 3];
        let err = coupled_object_dynamics(&models, &qs, &qds, &object(), &state, &u, &Vector3::zeros(), 1e-6);
        assert!(matches!(err, Err(RobotError::GraspInconsistent { .. })));
    }

    /// Gap between the coupled and the object-only acceleration when every
    /// robot body has mass `eps`.
    fn light_arm_gap(eps: f64) -> f64 {
        let (mut models, qs, _, obj_pose) = layout();
        for m in &mut models {
            m.base.mass = eps;
            m.base.inertia = Matrix3::identity() * eps;
            for l in &mut m.links {
                l.body.mass = eps;
                l.body.inertia = Matrix3::identity() * eps;
                l.armature = eps;
            }
        }
        let twist = Vector6::new(0.1, -0.2, 0.05, 0.2, -0.1, 0.3);
        let rot = Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        let state = ObjectState {
            pose: Pose::new(rot, obj_pose.translation),
            twist,
        };
        let qds = consistent_twist(&models, &qs, &state.pose, &twist);
        let obj = object();
        let gvec = Vector3::new(0.0, 0.0, -9.81);
        let u: Vec<Vector6<f64>> = (0..3)
            .map(|i| Vector6::from_fn(|r, _| 0.3 * (r as f64 - i as f64)))
            .collect();
        let acc = coupled_object_dynamics(&models, &qs, &qds, &obj, &state, &u, &gvec, 1e-9).unwrap();

        let ee: Vec<Vector3<f64>> = models
            .iter()
            .zip(&qs)
            .map(|(m, q)| forward_kinematics(m, q).unwrap().translation)
            .collect();
        let g = grasp_matrix(&ee, &state.pose.translation).unwrap();
        let ustack = DVector::from_iterator(18, u.iter().flat_map(|v| v.iter().copied()));
        let gu = &g * ustack;
        let w = Vector3::new(twist[3], twist[4], twist[5]);
        let iw = rot * obj.inertia * rot.transpose();
        let mut rhs = Vector6::from_column_slice(gu.as_slice());
        rhs.fixed_rows_mut::<3>(0).zip_apply(&(gvec * obj.mass), |a, b| *a += b);
        rhs.fixed_rows_mut::<3>(3)
            .zip_apply(&w.cross(&(iw * w)), |a, b| *a -= b);
        let expected = obj.mass_matrix(&rot).try_inverse().unwrap() * rhs;
        (acc - expected).amax()
    }

    #[test]
    fn massless_arm_reduces_to_object_dynamics() {
        // the gap is first order in the arm mass
        let coarse = light_arm_gap(1e-9);
        let fine = light_arm_gap(1e-12);
        assert!(light_arm_gap(1e-13) < 1e-8);
        let ratio = coarse / fine;
        assert!((500.0..2000.0).contains(&ratio), "{ratio}");
    }

    /// Single non-redundant robot carrying the object, integrated in joint
    /// space with RK4.
    #[test]
    fn power_balance_under_zero_gravity() {
        let mut m = SerialChainModel::desk_scale();
        // drop the wrist pitch and wrist yaw so the Jacobian is square
        m.links.remove(4);
        m.links.remove(3);
        m.links[3].offset = Vector3::new(0.45, 0.0, 0.0);
        let obj = object();
        let grasp = GraspSpec {
            offset: Vector3::new(-0.2, 0.0, 0.0),
            rotation: Matrix3::identity(),
        };
        let u = Vector6::new(0.5, -0.3, 0.2, 0.05, -0.02, 0.04);
        let zero_g = Vector3::zeros();
        let accel = |q: &DVector<f64>, qd: &DVector<f64>| -> DVector<f64> {
            let f = Frames::new(&m, q).unwrap();
            let ee = f.ee;
            let obj_pose = grasp.object_from_ee(&ee);
            let jac = f.point_jacobian(m.links.len(), &ee.translation);
            let p = ee.translation - obj_pose.translation;
            let jo = object_jacobian(&p);
            let v_ee = &jac * qd;
            let twist = jo.try_inverse().unwrap() * Vector6::from_column_slice(v_ee.as_slice());
            let state = ObjectState { pose: obj_pose, twist };
            let acc = coupled_object_dynamics(
                std::slice::from_ref(&m),
                std::slice::from_ref(q),
                std::slice::from_ref(qd),
                &obj,
                &state,
                &[u],
                &zero_g,
                1e-8,
            )
            .unwrap();
            let w = Vector3::new(twist[3], twist[4], twist[5]);
            let mut a_ee = jo * acc;
            a_ee.fixed_rows_mut::<3>(0)
                .zip_apply(&w.cross(&w.cross(&p)), |a, b| *a += b);
            let bias = f.point_bias_acceleration(m.links.len(), &ee.translation, qd);
            jac.lu()
                .solve(&DVector::from_column_slice((a_ee - bias).as_slice()))
                .unwrap()
        };
        let energy = |q: &DVector<f64>, qd: &DVector<f64>| -> f64 {
            let f = Frames::new(&m, q).unwrap();
            let jac = f.point_jacobian(m.links.len(), &f.ee.translation);
            let obj_pose = grasp.object_from_ee(&f.ee);
            let jo = object_jacobian(&(f.ee.translation - obj_pose.translation));
            let v_ee = &jac * qd;
            let twist = jo.try_inverse().unwrap() * Vector6::from_column_slice(v_ee.as_slice());
            kinetic_energy(&m, q, qd).unwrap() + 0.5 * twist.dot(&(obj.mass_matrix(&obj_pose.rotation) * twist))
        };
        let power = |q: &DVector<f64>, qd: &DVector<f64>| -> f64 {
            let jac = geometric_jacobian(&m, q).unwrap();
            let v = &jac * qd;
            u.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
        };
        let mut q = DVector::from_vec(vec![0.0, 0.0, 0.2, -0.3, 0.9, 0.1]);
        let mut qd = DVector::from_vec(vec![0.05, -0.02, 0.1, 0.05, -0.05, -0.03]);
        let e0 = energy(&q, &qd);
        let dt = 1e-3;
        let mut work = 0.0;
        for _ in 0..200 {
            let (q1, v1) = (q.clone(), qd.clone());
            let a1 = accel(&q1, &v1);
            let p1 = power(&q1, &v1);
            let (q2, v2) = (&q + &v1 * (0.5 * dt), &qd + &a1 * (0.5 * dt));
            let a2 = accel(&q2, &v2);
            let p2 = power(&q2, &v2);
            let (q3, v3) = (&q + &v2 * (0.5 * dt), &qd + &a2 * (0.5 * dt));
            let a3 = accel(&q3, &v3);
            let p3 = power(&q3, &v3);
            let (q4, v4) = (&q + &v3 * dt, &qd + &a3 * dt);
            let a4 = accel(&q4, &v4);
            let p4 = power(&q4, &v4);
            q += (&v1 + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
            qd += (&a1 + &a2 * 2.0 + &a3 * 2.0 + &a4) * (dt / 6.0);
            work += (p1 + 2.0 * p2 + 2.0 * p3 + p4) * (dt / 6.0);
        }
        let e1 = energy(&q, &qd);
        assert_relative_eq!(e1 - e0, work, epsilon = 1e-6 * e1.abs().max(1.0));
    }

    #[test]
    fn grasp_pose_round_trip() {
        let g = GraspSpec {
            offset: Vector3::new(0.2, -0.1, 0.05),
            rotation: Rotation3::from_euler_angles(0.3, -0.2, 1.0).into_inner(),
        };
        g.validate().unwrap();
        let obj = Pose::new(
            Rotation3::from_euler_angles(0.1, 0.0, -0.4).into_inner(),
            Vector3::new(1.0, 2.0, 0.6),
        );
        let back = g.object_from_ee(&g.ee_from_object(&obj));
        assert!((back.translation - obj.translation).norm() < 1e-12);
        assert!((back.rotation - obj.rotation).abs().max() < 1e-12);
    }
}
