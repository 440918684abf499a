//! Deterministic multirate closed-loop simulation.
//!
//! The team of mobile manipulators and the carried object are integrated as
//! separate rigid bodies joined by spring–damper bushings at the grasps. IK
//! runs at a slow rate, PD control at a fast rate, and physics substeps run
//! between control ticks with all references held constant (zero-order hold).

use std::sync::mpsc;

use nalgebra::{DVector, Matrix3, Rotation3, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{pd_torque, ControlError, GainSet};
use crate::footprint::FootprintPlan;
use crate::geometry::{signed_distance, CollisionPairs, GeometryError, Primitive};
use crate::ik::{collision_cost, CollisionShaping, IkError, IkResult, IkSession};
use crate::robot::{rotation_log, Frames, GraspSpec, ObjectModel, ObjectState, Pose, RobotError, SerialChainModel};
use crate::smoothing::HermiteTrajectory;
use crate::stl::{eval_robustness, Environment, Formula, SampledSignal, StlError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("simulation diverged at t = {time:.4} s")]
    Diverged { time: f64, last_good: Box<SystemState> },
    #[error("log is empty")]
    EmptyLog,
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("ik: {0}")]
    Ik(#[from] IkError),
    #[error("evaluation: {0}")]
    Stl(#[from] StlError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    SemiImplicitEuler,
    Rk4,
}

/// Bushing stiffness; damping defaults to the critical value for the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BushingConfig {
    pub k_t: f64,
    pub k_r: f64,
    pub c_t: Option<f64>,
    pub c_r: Option<f64>,
}

impl Default for BushingConfig {
    fn default() -> Self {
        Self {
            k_t: 1e4,
            k_r: 100.0,
            c_t: None,
            c_r: None,
        }
    }
}

/// Resolved bushing coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bushing {
    pub k_t: f64,
    pub k_r: f64,
    pub c_t: f64,
    pub c_r: f64,
}

impl BushingConfig {
    pub fn resolve(&self, object: &ObjectModel) -> Bushing {
        let i_max = object.inertia.symmetric_eigenvalues().max();
        Bushing {
            k_t: self.k_t,
            k_r: self.k_r,
            c_t: self.c_t.unwrap_or(2.0 * (self.k_t * object.mass).sqrt()),
            c_r: self.c_r.unwrap_or(2.0 * (self.k_r * i_max).sqrt()),
        }
    }
}

/// Sinusoidal joint-torque disturbance `w_j(t) = A sin(2π f t + φ_j)` with
/// seeded phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub control_rate: f64,
    pub ik_rate: f64,
    pub dt: f64,
    pub integrator: Integrator,
    pub bushing: BushingConfig,
    pub disturbance: Option<Disturbance>,
    pub seed: u64,
    /// Closed-loop settling before `t = 0` with the initial reference held.
    pub settle_time: f64,
    /// Log every n-th control tick.
    pub log_every: usize,
    pub divergence_limit: f64,
    /// Run IK on a producer thread with a single-slot handoff.
    pub threaded: bool,
    pub gravity: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_rate: 1000.0,
            ik_rate: 10.0,
            dt: 1e-4,
            integrator: Integrator::Rk4,
            bushing: BushingConfig::default(),
            disturbance: None,
            seed: 0,
            settle_time: 1.0,
            log_every: 1,
            divergence_limit: 1e9,
            threaded: false,
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.control_rate > 0.0 && self.ik_rate > 0.0 && self.dt > 0.0) {
            return bad("rates and dt must be positive");
        }
        if self.ik_rate > self.control_rate {
            return bad("IK rate must not exceed the control rate");
        }
        if self.dt > 1.0 / (10.0 * self.control_rate) * (1.0 + 1e-9) {
            return bad("physics dt must be at most 1/(10 control rate)");
        }
        let ratio = self.control_rate / self.ik_rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("control rate must be an integer multiple of the IK rate");
        }
        let sub = 1.0 / (self.control_rate * self.dt);
        if (sub - sub.round()).abs() > 1e-6 {
            return bad("control period must be an integer number of physics steps");
        }
        if self.log_every == 0 || !(self.settle_time >= 0.0) || !(self.divergence_limit > 0.0) {
            return bad("log_every, settle_time and divergence_limit must be positive");
        }
        if !(self.bushing.k_t > 0.0 && self.bushing.k_r > 0.0) {
            return bad("bushing stiffness must be positive");
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    fn substeps(&self) -> usize {
        (1.0 / (self.control_rate * self.dt)).round() as usize
    }

    fn ik_every(&self) -> usize {
        (self.control_rate / self.ik_rate).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    pub robots: Vec<JointState>,
    pub object: ObjectState,
}

/// Robots, grasps and object, with the bushings that join them.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub models: Vec<SerialChainModel>,
    pub grasps: Vec<GraspSpec>,
    pub object: ObjectModel,
    pub bushing: Bushing,
    pub gravity: Vector3<f64>,
    /// When false the object flies free of the robots.
    pub attached: bool,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Spring–damper wrench `[force; torque]` acting on the end effector.
///
/// `relative_twist` is the end-effector twist minus the target twist,
/// `[v; ω]` in world coordinates.
pub fn bushing_wrench(ee: &Pose, target: &Pose, bushing: &Bushing, relative_twist: &Vector6<f64>) -> Vector6<f64> {
    let dv = relative_twist.fixed_rows::<3>(0);
    let dw = relative_twist.fixed_rows::<3>(3);
    let f = (target.translation - ee.translation) * bushing.k_t - dv * bushing.c_t;
    let m = rotation_log(&(target.rotation * ee.rotation.transpose())) * bushing.k_r - dw * bushing.c_r;
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&f);
    out.fixed_rows_mut::<3>(3).copy_from(&m);
    out
}

/// Orthonormal polar factor of a near-rotation.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Per-robot coupling quantities at one state.
pub struct Coupling {
    /// Wrench on each end effector, `[force; torque]`.
    pub on_ee: Vec<Vector6<f64>>,
    /// Wrench on the object about its origin from each bushing.
    pub on_object: Vec<Vector6<f64>>,
}

impl Plant {
    pub fn robots(&self) -> usize {
        self.models.len()
    }

    fn flat_len(&self) -> usize {
        self.models.iter().map(|m| 2 * m.dof()).sum::<usize>() + 18
    }

    fn pack(&self, s: &SystemState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.flat_len());
        for r in &s.robots {
            x.extend(r.q.iter());
            x.extend(r.qd.iter());
        }
        let o = &s.object;
        x.extend(o.pose.translation.iter());
        x.extend(o.pose.rotation.iter());
        x.extend(o.twist.iter());
        x
    }

    fn unpack(&self, x: &[f64], time: f64) -> SystemState {
        let mut robots = Vec::with_capacity(self.robots());
        let mut at = 0;
        for m in &self.models {
            let n = m.dof();
            robots.push(JointState {
                q: DVector::from_column_slice(&x[at..at + n]),
                qd: DVector::from_column_slice(&x[at + n..at + 2 * n]),
            });
            at += 2 * n;
        }
        let translation = Vector3::from_column_slice(&x[at..at + 3]);
        let rotation = Matrix3::from_column_slice(&x[at + 3..at + 12]);
        let twist = Vector6::from_column_slice(&x[at + 12..at + 18]);
        SystemState {
            time,
            robots,
            object: ObjectState {
                pose: Pose::new(rotation, translation),
                twist,
            },
        }
    }

    /// Bushing wrenches at a state. Forces act at the end-effector point on
    /// both bodies, so each object wrench is exactly the negated end-effector
    /// wrench transported to the object origin.
    pub fn coupling(&self, s: &SystemState) -> Result<Coupling, SimError> {
        let mut frames = Vec::with_capacity(self.robots());
        for (m, r) in self.models.iter().zip(&s.robots) {
            frames.push(Frames::new(m, &r.q)?);
        }
        Ok(self.coupling_with(s, &frames))
    }

    fn coupling_with(&self, s: &SystemState, frames: &[Frames]) -> Coupling {
        let n = self.robots();
        let mut on_ee = Vec::with_capacity(n);
        let mut on_object = Vec::with_capacity(n);
        let o = &s.object;
        let v_o = o.twist.fixed_rows::<3>(0).into_owned();
        let w_o = o.twist.fixed_rows::<3>(3).into_owned();
        for i in 0..n {
            if !self.attached {
                on_ee.push(Vector6::zeros());
                on_object.push(Vector6::zeros());
                continue;
            }
            let f = &frames[i];
            let ee = f.ee;
            let last = f.bodies.len() - 1;
            let jac = f.point_jacobian(last, &ee.translation);
            let ee_twist = &jac * &s.robots[i].qd;
            let target = self.grasps[i].ee_from_object(&o.pose);
            let target_v = v_o + w_o.cross(&(target.translation - o.pose.translation));
            let mut rel = Vector6::zeros();
            rel.fixed_rows_mut::<3>(0)
                .copy_from(&(ee_twist.fixed_rows::<3>(0) - target_v));
            rel.fixed_rows_mut::<3>(3)
                .copy_from(&(ee_twist.fixed_rows::<3>(3) - w_o));
            let w = bushing_wrench(&ee, &target, &self.bushing, &rel);
            let force = w.fixed_rows::<3>(0).into_owned();
            let torque = w.fixed_rows::<3>(3).into_owned();
            let lever = ee.translation - o.pose.translation;
            let mut ow = Vector6::zeros();
            ow.fixed_rows_mut::<3>(0).copy_from(&(-force));
            ow.fixed_rows_mut::<3>(3).copy_from(&(lever.cross(&(-force)) - torque));
            on_ee.push(w);
            on_object.push(ow);
        }
        Coupling { on_ee, on_object }
    }

    fn derivative(&self, x: &[f64], taus: &[DVector<f64>]) -> Result<Vec<f64>, SimError> {
        let s = self.unpack(x, 0.0);
        let mut frames = Vec::with_capacity(self.robots());
        for (m, r) in self.models.iter().zip(&s.robots) {
            frames.push(Frames::new(m, &r.q)?);
        }
        let c = self.coupling_with(&s, &frames);
        let mut dx = Vec::with_capacity(x.len());
        let mut force = self.gravity * self.object.mass;
        let mut torque = Vector3::zeros();
        for (i, m) in self.models.iter().enumerate() {
            let f = &frames[i];
            let r = &s.robots[i];
            let mut tau = taus[i].clone();
            if self.attached {
                let last = f.bodies.len() - 1;
                let jac = f.point_jacobian(last, &f.ee.translation);
                tau += jac.transpose() * DVector::from_column_slice(c.on_ee[i].as_slice());
            }
            let qdd = f.forward_dynamics(m, &r.qd, &tau, &self.gravity)?;
            dx.extend(r.qd.iter());
            dx.extend(qdd.iter());
            force += c.on_object[i].fixed_rows::<3>(0);
            torque += c.on_object[i].fixed_rows::<3>(3);
        }
        let o = &s.object;
        let v = o.twist.fixed_rows::<3>(0).into_owned();
        let w = o.twist.fixed_rows::<3>(3).into_owned();
        let rot = o.pose.rotation;
        let iw = rot * self.object.inertia * rot.transpose();
        let acc = force / self.object.mass;
        let alpha = iw
            .cholesky()
            .ok_or(RobotError::NotPositiveDefinite)?
            .solve(&(torque - w.cross(&(iw * w))));
        dx.extend(v.iter());
        dx.extend((skew(&w) * rot).iter());
        dx.extend(acc.iter());
        dx.extend(alpha.iter());
        Ok(dx)
    }
}

fn axpy(x: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Advances the state by one physics step of length `dt`.
pub fn step_dynamics(
    plant: &Plant,
    state: &SystemState,
    taus: &[DVector<f64>],
    dt: f64,
    integrator: Integrator,
    divergence_limit: f64,
) -> Result<SystemState, SimError> {
    let x = plant.pack(state);
    let next = match integrator {
        Integrator::Rk4 => {
            let k1 = plant.derivative(&x, taus)?;
            let k2 = plant.derivative(&axpy(&x, &k1, 0.5 * dt), taus)?;
            let k3 = plant.derivative(&axpy(&x, &k2, 0.5 * dt), taus)?;
            let k4 = plant.derivative(&axpy(&x, &k3, dt), taus)?;
            (0..x.len())
                .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect::<Vec<f64>>()
        }
        Integrator::SemiImplicitEuler => {
            // velocities first, then positions with the new velocities
            let k = plant.derivative(&x, taus)?;
            let mut y = x.clone();
            let mut at = 0;
            for m in &plant.models {
                let n = m.dof();
                for j in 0..n {
                    y[at + n + j] += dt * k[at + n + j];
                }
                for j in 0..n {
                    y[at + j] += dt * y[at + n + j];
                }
                at += 2 * n;
            }
            for j in 0..6 {
                y[at + 12 + j] += dt * k[at + 12 + j];
            }
            for j in 0..3 {
                y[at + j] += dt * y[at + 12 + j];
            }
            let w = Vector3::new(y[at + 15], y[at + 16], y[at + 17]);
            let rot = Matrix3::from_column_slice(&y[at + 3..at + 12]);
            let r = Rotation3::from_scaled_axis(w * dt).into_inner() * rot;
            y[at + 3..at + 12].copy_from_slice(r.as_slice());
            y
        }
    };
    if next.iter().any(|v| !v.is_finite() || v.abs() > divergence_limit) {
        return Err(SimError::Diverged {
            time: state.time,
            last_good: Box::new(state.clone()),
        });
    }
    let mut s = plant.unpack(&next, state.time + dt);
    s.object.pose.rotation = orthonormalize(&s.object.pose.rotation);
    Ok(s)
}

/// One logged control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub q: Vec<DVector<f64>>,
    pub qd: Vec<DVector<f64>>,
    pub q_des: Vec<DVector<f64>>,
    pub tau: Vec<DVector<f64>>,
    /// Bushing wrench on the object about its origin, per robot.
    pub wrench: Vec<Vector6<f64>>,
    pub object_position: Vector3<f64>,
    pub object_rotation: Matrix3<f64>,
    pub object_twist: Vector6<f64>,
    pub x_od: Vector3<f64>,
    pub b_des: Vec<Vector2<f64>>,
    pub collision_cost: f64,
    #[serde(with = "crate::serde_float")]
    pub min_clearance: f64,
    pub object_error: f64,
    pub base_error: f64,
    pub grasp_position_error: f64,
    pub grasp_orientation_error: f64,
}

/// Per-solve IK diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkRecord {
    pub t: f64,
    pub iterations: usize,
    pub certified: bool,
    pub position_residual: f64,
    pub orientation_residual: f64,
    pub collision_active: bool,
    pub collision_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub rows: Vec<LogRow>,
    pub ik: Vec<IkRecord>,
    pub warnings: Vec<String>,
    pub control_rate: f64,
    pub log_every: usize,
}

impl SimLog {
    pub fn duration(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Executed object positions as a signal.
    pub fn object_signal(&self) -> Result<SampledSignal, SimError> {
        if self.rows.is_empty() {
            return Err(SimError::EmptyLog);
        }
        Ok(SampledSignal::new(
            self.rows.iter().map(|r| r.t).collect(),
            self.rows.iter().map(|r| r.object_position).collect(),
        )?)
    }

    /// CSV header, one column per logged scalar.
    pub fn csv_header(&self) -> Vec<String> {
        let Some(r) = self.rows.first() else {
            return vec!["t".into()];
        };
        let mut h = vec!["t".to_string()];
        for (i, q) in r.q.iter().enumerate() {
            for name in ["q", "qd", "q_des", "tau"] {
                for j in 0..q.len() {
                    h.push(format!("r{i}_{name}{j}"));
                }
            }
        }
        for i in 0..r.wrench.len() {
            for c in ["fx", "fy", "fz", "mx", "my", "mz"] {
                h.push(format!("r{i}_{c}"));
            }
        }
        for c in ["x", "y", "z"] {
            h.push(format!("obj_{c}"));
        }
        for c in ["rx", "ry", "rz"] {
            h.push(format!("obj_{c}"));
        }
        for c in ["vx", "vy", "vz", "wx", "wy", "wz"] {
            h.push(format!("obj_{c}"));
        }
        for c in ["x", "y", "z"] {
            h.push(format!("xod_{c}"));
        }
        for i in 0..r.b_des.len() {
            h.push(format!("r{i}_bdes_x"));
            h.push(format!("r{i}_bdes_y"));
        }
        for c in [
            "collision_cost",
            "min_clearance",
            "object_error",
            "base_error",
            "grasp_position_error",
            "grasp_orientation_error",
        ] {
            h.push(c.to_string());
        }
        h
    }

    pub fn csv_row(r: &LogRow) -> Vec<f64> {
        let mut v = vec![r.t];
        for i in 0..r.q.len() {
            for d in [&r.q[i], &r.qd[i], &r.q_des[i], &r.tau[i]] {
                v.extend(d.iter());
            }
        }
        for w in &r.wrench {
            v.extend(w.iter());
        }
        v.extend(r.object_position.iter());
        v.extend(rotation_log(&r.object_rotation).iter());
        v.extend(r.object_twist.iter());
        v.extend(r.x_od.iter());
        for b in &r.b_des {
            v.push(b.x);
            v.push(b.y);
        }
        v.extend([
            r.collision_cost,
            r.min_clearance,
            r.object_error,
            r.base_error,
            r.grasp_position_error,
            r.grasp_orientation_error,
        ]);
        v
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header().join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = Self::csv_row(r).iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Everything the closed loop needs besides the plans.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub plant: Plant,
    pub gains: Vec<GainSet>,
    pub scene: Vec<Primitive>,
    pub initial: Vec<DVector<f64>>,
    pub config: SimConfig,
    /// Shaping of the logged collision cost.
    pub shaping: CollisionShaping,
}

/// Clearance of every robot body and the object to the scene.
pub fn scene_clearance(
    plant: &Plant,
    qs: &[DVector<f64>],
    object: &Pose,
    scene: &[Primitive],
) -> Result<f64, SimError> {
    let mut best = f64::INFINITY;
    for (m, q) in plant.models.iter().zip(qs) {
        for (_, prim) in crate::robot::collision_geometry(m, q)? {
            for o in scene {
                best = best.min(signed_distance(&prim, o));
            }
        }
    }
    let shape = plant.object.collision.transformed(&object.to_isometry());
    for o in scene {
        best = best.min(signed_distance(&shape, o));
    }
    Ok(best)
}

fn grasp_errors(plant: &Plant, s: &SystemState) -> Result<(f64, f64), SimError> {
    let mut p: f64 = 0.0;
    let mut r: f64 = 0.0;
    for ((m, js), g) in plant.models.iter().zip(&s.robots).zip(&plant.grasps) {
        let ee = crate::robot::forward_kinematics(m, &js.q)?;
        let target = g.ee_from_object(&s.object.pose);
        p = p.max((ee.translation - target.translation).norm());
        r = r.max(rotation_log(&(target.rotation * ee.rotation.transpose())).norm());
    }
    Ok((p, r))
}

fn disturbance_phases(seed: u64, plant: &Plant) -> Vec<Vec<f64>> {
    // named sub-seed for the disturbance stream
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6469_7374_7572_6221);
    plant
        .models
        .iter()
        .map(|m| {
            (0..m.dof())
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect()
        })
        .collect()
}

/// Torques at one control tick.
fn control(
    cl: &ClosedLoop,
    s: &SystemState,
    q_des: &[DVector<f64>],
    w: Option<&[Vec<f64>]>,
    t: f64,
) -> Result<Vec<DVector<f64>>, SimError> {
    let g = cl.config.gravity();
    let mut out = Vec::with_capacity(s.robots.len());
    for (i, r) in s.robots.iter().enumerate() {
        let mut tau = pd_torque(&cl.plant.models[i], &r.q, &r.qd, &q_des[i], &cl.gains[i], &g)?;
        if let (Some(d), Some(phases)) = (cl.config.disturbance, w) {
            for j in 0..tau.len() {
                tau[j] += d.amplitude * (std::f64::consts::TAU * d.frequency * t + phases[i][j]).sin();
            }
        }
        out.push(tau);
    }
    Ok(out)
}

/// Initial state: robots at rest at their initial postures, object at the
/// pose implied by the first robot's grasp.
pub fn initial_state(cl: &ClosedLoop, object_pose: Pose) -> SystemState {
    SystemState {
        time: 0.0,
        robots: cl
            .initial
            .iter()
            .map(|q| JointState {
                q: q.clone(),
                qd: DVector::zeros(q.len()),
            })
            .collect(),
        object: ObjectState {
            pose: object_pose,
            twist: Vector6::zeros(),
        },
    }
}

/// Holds a fixed reference for `duration` seconds from `state`.
pub fn regulate(
    cl: &ClosedLoop,
    mut state: SystemState,
    q_des: &[DVector<f64>],
    duration: f64,
) -> Result<SystemState, SimError> {
    let cfg = &cl.config;
    let ticks = (duration * cfg.control_rate).round() as usize;
    let sub = cfg.substeps();
    let t0 = state.time;
    for k in 0..ticks {
        let t = t0 + k as f64 / cfg.control_rate;
        let taus = control(cl, &state, q_des, None, t)?;
        for _ in 0..sub {
            state = step_dynamics(&cl.plant, &state, &taus, cfg.dt, cfg.integrator, cfg.divergence_limit)?;
        }
    }
    Ok(state)
}

/// Joint-error history of a regulation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulationTrace {
    pub times: Vec<f64>,
    /// Stacked `‖q − q_des‖` over all robots at each control tick.
    pub error: Vec<f64>,
}

impl RegulationTrace {
    /// Largest error from `t0` on.
    pub fn ultimate_bound(&self, t0: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.error)
            .filter(|(t, _)| **t >= t0)
            .fold(0.0, |m, (_, e)| m.max(*e))
    }

    pub fn final_error(&self) -> f64 {
        self.error.last().copied().unwrap_or(f64::NAN)
    }

    /// Rate `λ` of the least-squares fit `ln‖e‖ ≈ c − λt` over samples
    /// with error above `floor`.
    pub fn decay_rate(&self, floor: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.error)
            .filter(|(_, e)| **e > floor)
            .map(|(t, e)| (*t, e.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
        let (sty, stt) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| {
            (a + (t - mt) * (y - my), b + (t - mt) * (t - mt))
        });
        (stt > 0.0).then(|| -sty / stt)
    }
}

/// Holds `q_des` from `state` for `duration` seconds under the configured
/// disturbance, recording the joint error at every control tick.
pub fn regulation_trace(
    cl: &ClosedLoop,
    mut state: SystemState,
    q_des: &[DVector<f64>],
    duration: f64,
) -> Result<RegulationTrace, SimError> {
    let cfg = &cl.config;
    cfg.validate()?;
    let phases = disturbance_phases(cfg.seed, &cl.plant);
    let ticks = (duration * cfg.control_rate).round() as usize;
    let sub = cfg.substeps();
    let error = |s: &SystemState| {
        s.robots
            .iter()
            .zip(q_des)
            .map(|(r, q)| (&r.q - q).norm_squared())
            .sum::<f64>()
            .sqrt()
    };
    let mut trace = RegulationTrace {
        times: vec![0.0],
        error: vec![error(&state)],
    };
    for k in 0..ticks {
        let t = k as f64 / cfg.control_rate;
        let taus = control(cl, &state, q_des, Some(&phases), t)?;
        for _ in 0..sub {
            state = step_dynamics(&cl.plant, &state, &taus, cfg.dt, cfg.integrator, cfg.divergence_limit)?;
        }
        trace.times.push((k + 1) as f64 / cfg.control_rate);
        trace.error.push(error(&state));
    }
    Ok(trace)
}

/// Runs the multirate loop along the object trajectory and footprint plan.
pub fn run_closed_loop(
    cl: &ClosedLoop,
    session: IkSession,
    object_traj: &HermiteTrajectory,
    footprint: &FootprintPlan,
) -> Result<SimLog, SimError> {
    let cfg = &cl.config;
    cfg.validate()?;
    if cl.gains.len() != cl.plant.robots() || cl.initial.len() != cl.plant.robots() {
        return Err(SimError::InvalidConfig(
            "gains and initial postures must match the robot count".into(),
        ));
    }
    let t0 = object_traj.start();
    let t_end = object_traj.end();
    let start_pose = Pose::new(session.problem.object_rotation, object_traj.position(t0));
    let mut state = initial_state(cl, start_pose);
    state.time = -cfg.settle_time;
    state = regulate(cl, state, &cl.initial, cfg.settle_time)?;
    state.time = 0.0;

    let ticks = ((t_end - t0) * cfg.control_rate + 1e-9).floor() as usize;
    let ik_every = cfg.ik_every();
    let ik_ticks: Vec<usize> = (0..=ticks).step_by(ik_every).collect();
    let phases = cfg.disturbance.map(|_| disturbance_phases(cfg.seed, &cl.plant));
    let time_of = |k: usize| t0 + k as f64 / cfg.control_rate;

    let solve = |session: &mut IkSession, k: usize| -> Result<IkResult, SimError> {
        let t = time_of(k);
        let x = object_traj.position(t.min(t_end));
        let b = footprint.at(t);
        Ok(session.solve(&x, &b, &cl.scene)?)
    };

    let consume = |next: &mut dyn FnMut() -> Result<IkResult, SimError>| -> Result<SimLog, SimError> {
        let mut state = state.clone();
        let mut log = SimLog {
            rows: Vec::new(),
            ik: Vec::new(),
            warnings: Vec::new(),
            control_rate: cfg.control_rate,
            log_every: cfg.log_every,
        };
        let mut q_des: Vec<DVector<f64>> = cl.initial.clone();
        let mut streak = 0;
        let sub = cfg.substeps();
        for k in 0..=ticks {
            let t = time_of(k);
            state.time = t;
            if k % ik_every == 0 {
                let r = next()?;
                log.ik.push(IkRecord {
                    t,
                    iterations: r.iterations,
                    certified: r.certified,
                    position_residual: r.position_residual,
                    orientation_residual: r.orientation_residual,
                    collision_active: r.collision_active,
                    collision_cost: r.collision_cost,
                });
                if r.certified {
                    streak = 0;
                } else {
                    streak += 1;
                    if streak == 4 {
                        log.warnings.push(format!(
                            "IK uncertified for more than 3 consecutive solves at t = {t:.3}"
                        ));
                    }
                }
                q_des = r.q_des;
            }
            let taus = control(cl, &state, &q_des, phases.as_deref(), t)?;
            if k % cfg.log_every == 0 {
                log.rows
                    .push(log_row(cl, &state, &q_des, &taus, object_traj, footprint, t)?);
            }
            if k == ticks {
                break;
            }
            for _ in 0..sub {
                state = step_dynamics(&cl.plant, &state, &taus, cfg.dt, cfg.integrator, cfg.divergence_limit)?;
            }
        }
        Ok(log)
    };

    if cfg.threaded {
        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::sync_channel::<Result<IkResult, SimError>>(1);
            let ik_ticks = ik_ticks.clone();
            let mut session = session;
            scope.spawn(move || {
                for k in ik_ticks {
                    let r = solve(&mut session, k);
                    let failed = r.is_err();
                    if tx.send(r).is_err() || failed {
                        break;
                    }
                }
            });
            let mut next = || {
                rx.recv()
                    .unwrap_or_else(|_| Err(SimError::InvalidConfig("IK producer stopped".into())))
            };
            consume(&mut next)
        })
    } else {
        let mut session = session;
        let mut it = ik_ticks.into_iter();
        let mut next = || {
            let k = it.next().expect("one IK solve per IK tick");
            solve(&mut session, k)
        };
        consume(&mut next)
    }
}

fn log_row(
    cl: &ClosedLoop,
    s: &SystemState,
    q_des: &[DVector<f64>],
    taus: &[DVector<f64>],
    traj: &HermiteTrajectory,
    footprint: &FootprintPlan,
    t: f64,
) -> Result<LogRow, SimError> {
    let plant = &cl.plant;
    let qs: Vec<DVector<f64>> = s.robots.iter().map(|r| r.q.clone()).collect();
    let coupling = plant.coupling(s)?;
    let x_od = traj.position(t.min(traj.end()));
    let b_des = footprint.at(t);
    let base_error = qs
        .iter()
        .zip(&b_des)
        .map(|(q, b)| (Vector2::new(q[0], q[1]) - b).norm())
        .fold(0.0, f64::max);
    let (cost, _) = collision_cost(&plant.models, &qs, &cl.scene, &cl.shaping)?;
    let (gp, go) = grasp_errors(plant, s)?;
    Ok(LogRow {
        t,
        q: qs.clone(),
        qd: s.robots.iter().map(|r| r.qd.clone()).collect(),
        q_des: q_des.to_vec(),
        tau: taus.to_vec(),
        wrench: coupling.on_object,
        object_position: s.object.pose.translation,
        object_rotation: s.object.pose.rotation,
        object_twist: s.object.twist,
        x_od,
        b_des,
        collision_cost: cost,
        min_clearance: scene_clearance(plant, &qs, &s.object.pose, &cl.scene)?,
        object_error: (s.object.pose.translation - x_od).norm(),
        base_error,
        grasp_position_error: gp,
        grasp_orientation_error: go,
    })
}

/// Inputs to [`evaluate_run`] besides the log.
pub struct EvalContext<'a> {
    pub formula: &'a Formula,
    pub env: &'a Environment,
    pub scene: &'a [Primitive],
    pub plant: &'a Plant,
    /// Bound on the base tracking error for a passing run, m.
    pub base_error_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    #[serde(with = "crate::serde_float")]
    pub robustness: f64,
    #[serde(with = "crate::serde_float")]
    pub min_clearance: f64,
    pub min_clearance_time: f64,
    #[serde(with = "crate::serde_float")]
    pub min_self_distance: f64,
    pub self_collision_free: bool,
    pub max_object_error: f64,
    pub rms_object_error: f64,
    pub max_base_error: f64,
    pub rms_base_error: f64,
    pub max_grasp_position_error: f64,
    pub max_grasp_orientation_error: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Self-collision pairs over all robot primitives followed by the object.
/// Contact is allowed between kinematically adjacent bodies of one robot and
/// between each robot's last two bodies with geometry and the object.
pub fn team_collision_pairs(plant: &Plant, qs: &[DVector<f64>]) -> Result<(Vec<Primitive>, CollisionPairs), SimError> {
    let mut prims = Vec::new();
    let mut tags = Vec::new();
    for (i, (m, q)) in plant.models.iter().zip(qs).enumerate() {
        for (k, p) in crate::robot::collision_geometry(m, q)? {
            prims.push(p);
            tags.push((i, k));
        }
    }
    let object_index = prims.len();
    let rank: Vec<Vec<usize>> = plant
        .models
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut ks: Vec<usize> = tags.iter().filter(|t| t.0 == i).map(|t| t.1).collect();
            ks.dedup();
            ks
        })
        .collect();
    let mut allowed = Vec::new();
    for a in 0..prims.len() {
        let (ia, ka) = tags[a];
        let pa = rank[ia].iter().position(|&k| k == ka).expect("tagged");
        if pa + 2 >= rank[ia].len() {
            allowed.push((a, object_index));
        }
        for b in a + 1..prims.len() {
            let (ib, kb) = tags[b];
            if ia != ib {
                continue;
            }
            let pb = rank[ib].iter().position(|&k| k == kb).expect("tagged");
            if pa.abs_diff(pb) <= 1 {
                allowed.push((a, b));
            }
        }
    }
    prims.push(plant.object.collision.clone());
    let pairs = CollisionPairs::new(prims.len(), allowed)?;
    Ok((prims, pairs))
}

/// Task verdict for an executed run.
pub fn evaluate_run(log: &SimLog, ctx: &EvalContext) -> Result<RunMetrics, SimError> {
    let signal = log.object_signal()?;
    let robustness = eval_robustness(ctx.formula, &signal, signal.start(), ctx.env)?;
    let mut min_clearance = f64::INFINITY;
    let mut min_clearance_time = 0.0;
    let mut min_self: f64 = f64::INFINITY;
    let mut grasp_p: f64 = 0.0;
    let mut grasp_o: f64 = 0.0;
    for r in &log.rows {
        let pose = Pose::new(r.object_rotation, r.object_position);
        let c = scene_clearance(ctx.plant, &r.q, &pose, ctx.scene)?;
        if c < min_clearance {
            min_clearance = c;
            min_clearance_time = r.t;
        }
        let (mut prims, pairs) = team_collision_pairs(ctx.plant, &r.q)?;
        let last = prims.len() - 1;
        prims[last] = ctx.plant.object.collision.transformed(&pose.to_isometry());
        min_self = min_self.min(crate::geometry::min_self_distance(&prims, &pairs)?);
        grasp_p = grasp_p.max(r.grasp_position_error);
        grasp_o = grasp_o.max(r.grasp_orientation_error);
    }
    let n = log.rows.len() as f64;
    let max_of = |f: &dyn Fn(&LogRow) -> f64| log.rows.iter().map(f).fold(0.0, f64::max);
    let rms_of = |f: &dyn Fn(&LogRow) -> f64| (log.rows.iter().map(|r| f(r).powi(2)).sum::<f64>() / n).sqrt();
    let max_base = max_of(&|r| r.base_error);
    let finite = log
        .rows
        .iter()
        .all(|r| r.base_error.is_finite() && r.object_error.is_finite());
    let checks = vec![
        Check {
            name: "robustness".into(),
            passed: robustness > 0.0,
            detail: format!("{robustness:.6}"),
        },
        Check {
            name: "clearance".into(),
            passed: min_clearance > 0.0,
            detail: format!("{min_clearance:.6} m at t = {min_clearance_time:.3} s"),
        },
        Check {
            name: "self_collision".into(),
            passed: min_self > 0.0,
            detail: format!("min forbidden-pair distance {min_self:.6} m"),
        },
        Check {
            name: "base_tracking".into(),
            passed: finite && max_base <= ctx.base_error_bound,
            detail: format!("max {max_base:.4} m, bound {:.4} m", ctx.base_error_bound),
        },
    ];
    Ok(RunMetrics {
        robustness,
        min_clearance,
        min_clearance_time,
        min_self_distance: min_self,
        self_collision_free: min_self > 0.0,
        max_object_error: max_of(&|r| r.object_error),
        rms_object_error: rms_of(&|r| r.object_error),
        max_base_error: max_base,
        rms_base_error: rms_of(&|r| r.base_error),
        max_grasp_position_error: grasp_p,
        max_grasp_orientation_error: grasp_o,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
