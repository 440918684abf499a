//! Fixed-budget inverse kinematics for the grasping team.
//!
//! Each solve pulls every arm toward its reference posture, places the
//! object implied by each end-effector on the desired object position, keeps
//! the rigid-grasp relations through quadratic penalties, and pushes robot
//! geometry away from obstacles through a smooth signed-distance potential.
//! Bases are boxed around their footprint references and joints are clamped
//! to their limits by projection. The terms of different robots do not
//! interact, so each robot is solved independently with the same budget.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{distance_lower_bound, proximity, signed_distance, Primitive};
use crate::robot::Frames;
use crate::robot::{rotation_log, GraspSpec, ObjectModel, Pose, RobotError, SerialChainModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IkError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("warm start of robot {robot} violates joint limits")]
    WarmStartOutOfLimits { robot: usize },
    #[error(transparent)]
    Robot(#[from] RobotError),
}

/// Shaping of the collision potential
/// `φ(d) = w(d)·exp(−α(d − d_safe)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionShaping {
    /// Shaping parameter `α` in 1/m².
    pub alpha: f64,
    pub d_safe: f64,
    /// Overall scale of the collision term in the merit.
    pub weight: f64,
}

impl Default for CollisionShaping {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            d_safe: 0.1,
            weight: 1.0,
        }
    }
}

impl CollisionShaping {
    /// Distance beyond which the potential is exactly zero.
    pub fn cutoff(&self) -> f64 {
        self.d_safe + 4.0 / self.alpha.sqrt()
    }

    fn raw(&self, d: f64) -> (f64, f64) {
        let s = self.d_safe;
        if d <= s {
            // linear continuation keeps the cost increasing under the margin
            (1.0 + (s - d) / s, -1.0 / s)
        } else {
            let e = (-self.alpha * (d - s).powi(2) - (d - s) / s).exp();
            (e, e * (-2.0 * self.alpha * (d - s) - 1.0 / s))
        }
    }

    /// Potential and its derivative with respect to `d`.
    ///
    /// The bell is multiplied by `exp(−(d − d_safe)/d_safe)` above the margin
    /// and continued linearly below it, then shifted by its first-order
    /// expansion at the cutoff so that value and slope vanish there.
    pub fn potential(&self, d: f64) -> (f64, f64) {
        let c = self.cutoff();
        if d >= c {
            return (0.0, 0.0);
        }
        let (v, g) = self.raw(d);
        let (vc, gc) = self.raw(c);
        (self.weight * (v - vc - gc * (d - c)), self.weight * (g - gc))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    /// Half-width of the base box around the footprint reference, m.
    pub base_tolerance: f64,
    pub shaping: CollisionShaping,
    pub tracking_weight: f64,
    pub posture_weight: f64,
    pub grasp_position_weight: f64,
    pub grasp_orientation_weight: f64,
    /// Factor applied once to both grasp weights at mid-budget.
    pub escalation: f64,
    pub budget: usize,
    pub damping: f64,
    pub max_joint_step: f64,
    pub max_base_step: f64,
    pub position_tol: f64,
    pub orientation_tol: f64,
    /// Hysteresis band on the collision activation threshold.
    pub hysteresis: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            base_tolerance: 0.1,
            shaping: CollisionShaping::default(),
            tracking_weight: 1.0,
            posture_weight: 1e-2,
            grasp_position_weight: 1e3,
            grasp_orientation_weight: 1e2,
            escalation: 10.0,
            budget: 50,
            damping: 1e-6,
            max_joint_step: 0.2,
            max_base_step: 0.1,
            position_tol: 1e-3,
            orientation_tol: 1e-2,
            hysteresis: 0.1,
        }
    }
}

impl IkConfig {
    pub fn validate(&self) -> Result<(), IkError> {
        let bad = |m: &str| Err(IkError::InvalidProblem(m.to_string()));
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if !(self.shaping.alpha > 0.0 && self.shaping.d_safe > 0.0 && self.shaping.weight >= 0.0) {
            return bad("collision shaping needs alpha > 0 and d_safe > 0");
        }
        if !(self.base_tolerance >= 0.0) {
            return bad("base tolerance must be non-negative");
        }
        let w = [
            self.tracking_weight,
            self.posture_weight,
            self.grasp_position_weight,
            self.grasp_orientation_weight,
        ];
        if w.iter().any(|v| !(*v >= 0.0)) || !(self.escalation >= 1.0) {
            return bad("weights must be non-negative and escalation at least 1");
        }
        if !(self.max_joint_step > 0.0 && self.max_base_step > 0.0 && self.damping >= 0.0) {
            return bad("trust caps must be positive");
        }
        Ok(())
    }
}

/// The team: models, grasps and reference postures, one per robot.
#[derive(Debug, Clone, PartialEq)]
pub struct IkProblem {
    pub models: Vec<SerialChainModel>,
    pub grasps: Vec<GraspSpec>,
    pub reference: Vec<DVector<f64>>,
    /// Orientation the object is held at; the tracked reference is position only.
    pub object_rotation: Matrix3<f64>,
    pub config: IkConfig,
}

impl IkProblem {
    pub fn validate(&self) -> Result<(), IkError> {
        self.config.validate()?;
        let n = self.models.len();
        if n == 0 || self.grasps.len() != n || self.reference.len() != n {
            return Err(IkError::InvalidProblem(
                "one model, grasp and reference posture per robot".into(),
            ));
        }
        for (m, q0) in self.models.iter().zip(&self.reference) {
            m.validate()?;
            m.check_dim(q0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkResult {
    pub q_des: Vec<DVector<f64>>,
    pub position_residual: f64,
    pub orientation_residual: f64,
    pub collision_cost: f64,
    pub iterations: usize,
    pub certified: bool,
    pub collision_active: bool,
    /// Merit after each accepted step, per robot, tagged with the penalty
    /// phase (0 before escalation, 1 after).
    pub merit_history: Vec<Vec<(u8, f64)>>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Largest grasp position (m) and orientation (rad) deviation across robots,
/// measured in the frame of the target object pose.
pub fn grasp_residual(
    models: &[SerialChainModel],
    qs: &[DVector<f64>],
    object: &Pose,
    grasps: &[GraspSpec],
) -> Result<(f64, f64), IkError> {
    let mut pos: f64 = 0.0;
    let mut ori: f64 = 0.0;
    for ((m, q), g) in models.iter().zip(qs).zip(grasps) {
        let ee = crate::robot::forward_kinematics(m, q)?;
        let rel = object.inverse().compose(&ee);
        pos = pos.max((rel.translation - g.offset).norm());
        ori = ori.max(rotation_log(&(rel.rotation * g.rotation.transpose())).norm());
    }
    Ok((pos, ori))
}

fn robot_collision(
    m: &SerialChainModel,
    frames: &Frames,
    scene: &[Primitive],
    shaping: &CollisionShaping,
    grad: Option<&mut DVector<f64>>,
) -> f64 {
    let cutoff = shaping.cutoff();
    let mut value = 0.0;
    let mut g = grad;
    for (k, prim) in frames.collision_geometry(m) {
        for obs in scene {
            if distance_lower_bound(&prim, obs) >= cutoff {
                continue;
            }
            let px = proximity(&prim, obs);
            if px.distance >= cutoff {
                continue;
            }
            let (phi, dphi) = shaping.potential(px.distance);
            value += phi;
            if let Some(g) = g.as_deref_mut() {
                let jac = frames.point_jacobian(k, &px.point_a);
                let jv = jac.rows(0, 3);
                *g -= jv.transpose() * px.normal * dphi;
            }
        }
    }
    value
}

/// Collision potential summed over every robot body and scene obstacle, with
/// its gradient with respect to each robot's configuration.
pub fn collision_cost(
    models: &[SerialChainModel],
    qs: &[DVector<f64>],
    scene: &[Primitive],
    shaping: &CollisionShaping,
) -> Result<(f64, Vec<DVector<f64>>), IkError> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(qs.len());
    for (m, q) in models.iter().zip(qs) {
        let frames = Frames::new(m, q)?;
        let mut g = DVector::zeros(q.len());
        total += robot_collision(m, &frames, scene, shaping, Some(&mut g));
        grads.push(g);
    }
    Ok((total, grads))
}

/// Per-robot subproblem.
struct Terms<'a> {
    model: &'a SerialChainModel,
    grasp: &'a GraspSpec,
    posture: DVector<f64>,
    target: Pose,
    x_od: Vector3<f64>,
    scene: &'a [Primitive],
    collision: bool,
    cfg: &'a IkConfig,
    grasp_scale: f64,
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl Terms<'_> {
    /// Weighted residual stack `r`, Jacobian `J` (merit is `rᵀr + c`), and
    /// the collision term.
    fn evaluate(
        &self,
        q: &DVector<f64>,
        jacobian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>, f64, Option<DVector<f64>>), IkError> {
        let n = q.len();
        let frames = Frames::new(self.model, q)?;
        let ee = frames.ee;
        let c = self.cfg;
        let wp = c.posture_weight.sqrt();
        let wt = c.tracking_weight.sqrt();
        let wgp = (c.grasp_position_weight * self.grasp_scale).sqrt();
        let wgo = (c.grasp_orientation_weight * self.grasp_scale).sqrt();

        let target_ee = self.grasp.ee_from_object(&self.target);
        let object_in_ee = -(self.grasp.rotation.transpose() * self.grasp.offset);
        let lever = ee.rotation * object_in_ee;
        let r_track = ee.translation + lever - self.x_od;
        let r_pos = ee.translation - target_ee.translation;
        let r_ori = rotation_log(&(target_ee.rotation.transpose() * ee.rotation));

        let mut r = DVector::zeros(n + 9);
        r.rows_mut(0, n).copy_from(&((q - &self.posture) * wp));
        r.fixed_rows_mut::<3>(n).copy_from(&(r_track * wt));
        r.fixed_rows_mut::<3>(n + 3).copy_from(&(r_pos * wgp));
        r.fixed_rows_mut::<3>(n + 6).copy_from(&(r_ori * wgo));

        let jac = if jacobian {
            let last = frames.bodies.len() - 1;
            let je = frames.point_jacobian(last, &ee.translation);
            let jv = je.rows(0, 3).into_owned();
            let jw = je.rows(3, 3).into_owned();
            let mut j = DMatrix::zeros(n + 9, n);
            j.view_mut((0, 0), (n, n)).fill_diagonal(wp);
            j.view_mut((n, 0), (3, n)).copy_from(&((&jv - skew(&lever) * &jw) * wt));
            j.view_mut((n + 3, 0), (3, n)).copy_from(&(&jv * wgp));
            j.view_mut((n + 6, 0), (3, n))
                .copy_from(&((target_ee.rotation.transpose() * &jw) * wgo));
            Some(j)
        } else {
            None
        };

        let (cc, cg) = if self.collision {
            let mut g = DVector::zeros(n);
            let v = robot_collision(
                self.model,
                &frames,
                self.scene,
                &self.cfg.shaping,
                jacobian.then_some(&mut g),
            );
            (v, jacobian.then_some(g))
        } else {
            (0.0, None)
        };
        Ok((r, jac, cc, cg))
    }

    fn merit(&self, q: &DVector<f64>) -> Result<f64, IkError> {
        let (r, _, cc, _) = self.evaluate(q, false)?;
        Ok(r.norm_squared() + cc)
    }

    fn project(&self, q: &mut DVector<f64>) {
        for i in 0..q.len() {
            q[i] = q[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    /// One damped Gauss–Newton step with projection and backtracking.
    /// Returns the new merit, or `None` when no decrease was found.
    fn step(&self, q: &mut DVector<f64>, merit: f64) -> Result<Option<f64>, IkError> {
        let n = q.len();
        let (r, j, _, cg) = self.evaluate(q, true)?;
        let j = j.expect("jacobian requested");
        let mut grad = j.transpose() * &r * 2.0;
        if let Some(cg) = cg {
            grad += cg;
        }
        let mut h = j.transpose() * &j * 2.0;
        let scale = h.diagonal().max().max(1.0);
        for i in 0..n {
            h[(i, i)] += self.cfg.damping * scale;
        }
        // variables held at a bound by the gradient are frozen
        let bound = 1e-12;
        for i in 0..n {
            let at_lo = q[i] <= self.lo[i] + bound && grad[i] > 0.0;
            let at_hi = q[i] >= self.hi[i] - bound && grad[i] < 0.0;
            if at_lo || at_hi {
                for k in 0..n {
                    h[(i, k)] = 0.0;
                    h[(k, i)] = 0.0;
                }
                h[(i, i)] = 1.0;
                grad[i] = 0.0;
            }
        }
        let Some(chol) = h.cholesky() else {
            return Ok(None);
        };
        let mut d = -chol.solve(&grad);
        // trust cap on base translation and joint rotation
        let base = d.rows(0, 2).amax();
        let joint = if n > 2 { d.rows(2, n - 2).amax() } else { 0.0 };
        let shrink = (self.cfg.max_base_step / base.max(1e-300))
            .min(self.cfg.max_joint_step / joint.max(1e-300))
            .min(1.0);
        d *= shrink;
        if d.amax() < 1e-15 {
            return Ok(None);
        }
        let mut t = 1.0;
        for _ in 0..30 {
            let mut cand = &*q + &d * t;
            self.project(&mut cand);
            let delta = &cand - &*q;
            if delta.amax() == 0.0 {
                return Ok(None);
            }
            let m = self.merit(&cand)?;
            if m <= merit + 1e-4 * grad.dot(&delta) && m <= merit {
                *q = cand;
                return Ok(Some(m));
            }
            t *= 0.5;
        }
        Ok(None)
    }
}

/// Solves the team IK for one object target and base references.
///
/// Terminates after at most `budget` iterations per robot; an uncertified
/// result is returned (not an error) when the grasp residuals remain above
/// tolerance.
pub fn solve_ik(
    problem: &IkProblem,
    x_od: &Vector3<f64>,
    b_bar: &[Vector2<f64>],
    q_warm: &[DVector<f64>],
    scene: &[Primitive],
    collision_active: bool,
) -> Result<IkResult, IkError> {
    problem.validate()?;
    let cfg = &problem.config;
    let n_robots = problem.models.len();
    if b_bar.len() != n_robots || q_warm.len() != n_robots {
        return Err(IkError::InvalidProblem(
            "base references and warm starts must match the robot count".into(),
        ));
    }
    let target = Pose::new(problem.object_rotation, *x_od);
    let mut q_des = Vec::with_capacity(n_robots);
    let mut histories = Vec::with_capacity(n_robots);
    let mut iterations = 0;
    for i in 0..n_robots {
        let model = &problem.models[i];
        model.check_dim(&q_warm[i])?;
        if !model.within_limits(&q_warm[i]) {
            return Err(IkError::WarmStartOutOfLimits { robot: i });
        }
        let (mut lo, mut hi) = model.limits();
        for a in 0..2 {
            lo[a] = lo[a].max(b_bar[i][a] - cfg.base_tolerance);
            hi[a] = hi[a].min(b_bar[i][a] + cfg.base_tolerance);
            if lo[a] > hi[a] {
                return Err(IkError::InvalidProblem(format!(
                    "base reference of robot {i} lies outside the base limits"
                )));
            }
        }
        let mut posture = problem.reference[i].clone();
        posture[0] = b_bar[i].x;
        posture[1] = b_bar[i].y;
        let mut terms = Terms {
            model,
            grasp: &problem.grasps[i],
            posture,
            target,
            x_od: *x_od,
            scene,
            collision: collision_active,
            cfg,
            grasp_scale: 1.0,
            lo,
            hi,
        };
        let mut q = q_warm[i].clone();
        terms.project(&mut q);
        let mut merit = terms.merit(&q)?;
        let mut history = vec![(0u8, merit)];
        let escalate_at = cfg.budget / 2;
        let mut used = 0;
        let mut phase = 0u8;
        for it in 0..cfg.budget {
            if it == escalate_at && cfg.escalation > 1.0 && phase == 0 {
                terms.grasp_scale = cfg.escalation;
                phase = 1;
                merit = terms.merit(&q)?;
                history.push((phase, merit));
            }
            used = it + 1;
            match terms.step(&mut q, merit)? {
                Some(m) => {
                    merit = m;
                    history.push((phase, m));
                }
                None => {
                    // stalled before escalation: jump to the escalated phase
                    if phase == 0 && cfg.escalation > 1.0 {
                        terms.grasp_scale = cfg.escalation;
                        phase = 1;
                        merit = terms.merit(&q)?;
                        history.push((phase, merit));
                        if terms.step(&mut q, merit)?.is_none() {
                            break;
                        }
                        merit = terms.merit(&q)?;
                        history.push((phase, merit));
                    } else {
                        break;
                    }
                }
            }
        }
        iterations = iterations.max(used);
        histories.push(history);
        q_des.push(q);
    }
    let (position_residual, orientation_residual) = grasp_residual(&problem.models, &q_des, &target, &problem.grasps)?;
    let collision = if collision_active {
        collision_cost(&problem.models, &q_des, scene, &cfg.shaping)?.0
    } else {
        0.0
    };
    Ok(IkResult {
        certified: position_residual <= cfg.position_tol && orientation_residual <= cfg.orientation_tol,
        q_des,
        position_residual,
        orientation_residual,
        collision_cost: collision,
        iterations,
        collision_active,
        merit_history: histories,
    })
}

/// Receding-horizon IK: warm starts from the previous solution and switches
/// the collision term on when the object nears an obstacle.
#[derive(Debug, Clone)]
pub struct IkSession {
    pub problem: IkProblem,
    pub object: ObjectModel,
    pub warm: Vec<DVector<f64>>,
    pub collision_active: bool,
    pub uncertified_streak: usize,
}

impl IkSession {
    pub fn new(problem: IkProblem, object: ObjectModel, initial: Vec<DVector<f64>>) -> Result<Self, IkError> {
        problem.validate()?;
        Ok(Self {
            problem,
            object,
            warm: initial,
            collision_active: false,
            uncertified_streak: 0,
        })
    }

    /// Clearance between the object at its target and the scene.
    pub fn object_clearance(&self, x_od: &Vector3<f64>, scene: &[Primitive]) -> f64 {
        let iso = Pose::new(self.problem.object_rotation, *x_od).to_isometry();
        let shape = self.object.collision.transformed(&iso);
        scene
            .iter()
            .map(|o| signed_distance(&shape, o))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve(
        &mut self,
        x_od: &Vector3<f64>,
        b_bar: &[Vector2<f64>],
        scene: &[Primitive],
    ) -> Result<IkResult, IkError> {
        let cfg = &self.problem.config;
        let threshold = 2.0 * cfg.shaping.d_safe;
        let clearance = self.object_clearance(x_od, scene);
        self.collision_active = if self.collision_active {
            clearance < threshold * (1.0 + cfg.hysteresis)
        } else {
            clearance < threshold
        };
        let result = solve_ik(&self.problem, x_od, b_bar, &self.warm, scene, self.collision_active)?;
        self.warm = result.q_des.clone();
        if result.certified {
            self.uncertified_streak = 0;
        } else {
            self.uncertified_streak += 1;
        }
        Ok(result)
    }
}
