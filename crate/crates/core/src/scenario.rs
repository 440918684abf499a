//! Versioned JSON scenario files: workspace, obstacles, team, object, task
//! and every stage's parameter block, validated on load.

use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::GainSchedule;
use crate::footprint::{HeightModel, SolverConfig};
use crate::geometry::{point_distance, signed_distance, ObstacleSet, Primitive, SuperEllipse};
use crate::ik::{solve_ik, IkConfig, IkProblem};
use crate::robot::{forward_kinematics, GraspSpec, ObjectModel, Pose, SerialChainModel};
use crate::sim::{scene_clearance, team_collision_pairs, Disturbance, Plant, SimConfig};
use crate::stl::{parse_formula, Formula, StlError};
use crate::waypoint::{extract_fragment, PlannerConfig, ReachAvoidTask};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("invalid `task.formula`: {0}")]
    Formula(StlError),
    #[error("infeasible initial state: {0}")]
    InitialState(String),
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub name: String,
    pub shape: Primitive,
    /// Planar keep-out region for the bases. Derived from the planar bounding
    /// rectangle of `shape` grown by `footprint.inflate` when absent.
    #[serde(default)]
    pub footprint: Option<SuperEllipse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub model: ObjectModel,
    /// Initial object position; also the planner's start point.
    pub start: [f64; 3],
}

/// Robots are placed around the object at `angles`, each holding `posture`
/// with its tool `standoff` metres from the object centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamSpec {
    /// Robot description; the desk-scale default when absent.
    #[serde(default)]
    pub model: Option<SerialChainModel>,
    pub angles: Vec<f64>,
    /// Arm joint angles, one per link. The first entry is the arm yaw
    /// relative to facing the object.
    pub posture: Vec<f64>,
    pub standoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub formula: String,
}

/// Height model constants; calibrated from IK when `z_ref` and `kappa` are
/// both absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightSpec {
    pub delta: f64,
    #[serde(default)]
    pub z_ref: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootprintSpec {
    pub steps: usize,
    #[serde(default = "one")]
    pub weight: f64,
    pub centroid_tol: f64,
    pub step_bound: f64,
    /// Growth of obstacle rectangles before fitting super-ellipses, m.
    pub inflate: f64,
    pub height: HeightSpec,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSpec {
    /// Largest admissible base tracking error, m.
    pub base_error_bound: f64,
    /// Bound on the RMS object tracking error, m, when declared.
    pub object_rms_bound: Option<f64>,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            base_error_bound: 0.5,
            object_rms_bound: None,
        }
    }
}

/// Joint-space regulation experiment run on the first robot alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulationSpec {
    /// Norm of the initial joint error, rad and m.
    pub error_norm: f64,
    pub duration: f64,
    pub disturbance: Disturbance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub workspace: Workspace,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub object: ObjectSpec,
    pub team: TeamSpec,
    pub task: TaskSpec,
    #[serde(default)]
    pub planner: PlannerConfig,
    pub footprint: FootprintSpec,
    #[serde(default)]
    pub ik: IkConfig,
    #[serde(default)]
    pub control: GainSchedule,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub regulation: Option<RegulationSpec>,
}

/// Robots, grasps and a grasp-consistent initial configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Team {
    pub models: Vec<SerialChainModel>,
    pub grasps: Vec<GraspSpec>,
    /// Nominal postures before the object is moved to its start height.
    pub reference: Vec<DVector<f64>>,
    pub initial: Vec<DVector<f64>>,
    pub object_pose: Pose,
}

impl Team {
    /// Planar base offsets from the object at the initial configuration.
    pub fn formation(&self) -> Vec<Vector2<f64>> {
        let c = self.object_pose.translation;
        self.initial
            .iter()
            .map(|q| Vector2::new(q[0] - c.x, q[1] - c.y))
            .collect()
    }
}

/// Hex SHA-256 of the scenario file bytes.
pub fn scenario_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent seed for a named random stream derived from the scenario seed.
pub fn sub_seed(seed: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Reads, parses and validates a scenario file. Returns the scenario and the
/// hash of the file contents.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<(Scenario, String), ScenarioError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let s = Scenario::from_slice(&bytes)?;
    Ok((s, scenario_hash(&bytes)))
}

/// Planar axis-aligned bounds of a primitive.
pub fn planar_bounds(p: &Primitive) -> (Vector2<f64>, Vector2<f64>) {
    let xy = |v: &Vector3<f64>| Vector2::new(v.x, v.y);
    let fold = |pts: &mut dyn Iterator<Item = Vector2<f64>>, grow: f64| {
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for q in pts {
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
        (lo.add_scalar(-grow), hi.add_scalar(grow))
    };
    match p {
        Primitive::Sphere { center, radius } => fold(&mut std::iter::once(xy(center)), *radius),
        Primitive::Capsule { a, b, radius } => fold(&mut [xy(a), xy(b)].into_iter(), *radius),
        Primitive::Box {
            center,
            half_extents,
            rotation,
        } => {
            let corners = (0..8).map(|k| {
                let s = Vector3::new(
                    if k & 1 == 0 { -1.0 } else { 1.0 },
                    if k & 2 == 0 { -1.0 } else { 1.0 },
                    if k & 4 == 0 { -1.0 } else { 1.0 },
                );
                xy(&(center + rotation * half_extents.component_mul(&s)))
            });
            fold(&mut corners.into_iter(), 0.0)
        }
        Primitive::Prism { polygon, .. } => fold(&mut polygon.iter().copied(), 0.0),
    }
}

impl Scenario {
    /// Parses and validates scenario JSON.
    pub fn from_slice(bytes: &[u8]) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        s.validate()?;
        s.build_team()?;
        Ok(s)
    }

    pub fn model(&self) -> SerialChainModel {
        self.team.model.clone().unwrap_or_else(SerialChainModel::desk_scale)
    }

    pub fn formula(&self) -> Result<Formula, ScenarioError> {
        parse_formula(&self.task.formula).map_err(ScenarioError::Formula)
    }

    pub fn task(&self) -> Result<ReachAvoidTask, ScenarioError> {
        extract_fragment(&self.formula()?).map_err(|e| invalid("task.formula", e.to_string()))
    }

    pub fn scene(&self) -> Vec<Primitive> {
        self.obstacles.iter().map(|o| o.shape.clone()).collect()
    }

    pub fn obstacle_set(&self) -> ObstacleSet {
        ObstacleSet(self.scene())
    }

    /// Base keep-out regions, declared or derived.
    pub fn footprint_obstacles(&self) -> Vec<SuperEllipse> {
        self.obstacles
            .iter()
            .map(|o| {
                o.footprint.clone().unwrap_or_else(|| {
                    let (lo, hi) = planar_bounds(&o.shape);
                    SuperEllipse::enclosing_rect((lo + hi) * 0.5, (hi - lo) * 0.5, self.footprint.inflate)
                })
            })
            .collect()
    }

    /// Planner configuration with the object radius filled in.
    pub fn planner_config(&self) -> PlannerConfig {
        let mut cfg = self.planner.clone();
        if cfg.object_radius == 0.0 {
            cfg.object_radius = self.object.model.bounding_radius();
        }
        cfg
    }

    pub fn start(&self) -> Vector3<f64> {
        Vector3::from(self.object.start)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCHEMA_VERSION {
            return Err(ScenarioError::Version {
                found: self.version,
                expected: SCHEMA_VERSION,
            });
        }
        let w = &self.workspace;
        if !(w.min[0] < w.max[0] && w.min[1] < w.max[1]) {
            return Err(invalid("workspace", "min must be below max on both axes"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            o.shape
                .validate()
                .map_err(|e| invalid(&format!("obstacles[{i}].shape"), e.to_string()))?;
            if let Some(f) = &o.footprint {
                f.validate()
                    .map_err(|e| invalid(&format!("obstacles[{i}].footprint"), e.to_string()))?;
            }
        }
        self.object
            .model
            .validate()
            .map_err(|e| invalid("object.model", e.to_string()))?;
        let s = self.object.start;
        if !(s.iter().all(|v| v.is_finite())
            && s[0] > w.min[0]
            && s[0] < w.max[0]
            && s[1] > w.min[1]
            && s[1] < w.max[1])
        {
            return Err(invalid("object.start", "must lie inside the workspace"));
        }
        let model = self.model();
        model.validate().map_err(|e| invalid("team.model", e.to_string()))?;
        if self.team.angles.len() < 2 {
            return Err(invalid("team.angles", "need at least two robots"));
        }
        if self.team.posture.len() != model.links.len() {
            return Err(invalid(
                "team.posture",
                format!(
                    "has {} entries, the arm has {} joints",
                    self.team.posture.len(),
                    model.links.len()
                ),
            ));
        }
        if !(self.team.standoff > 0.0) {
            return Err(invalid("team.standoff", "must be positive"));
        }
        self.task()?;
        let f = &self.footprint;
        let positive = [
            ("footprint.steps", f.steps as f64 - 1.0),
            ("footprint.weight", f.weight),
            ("footprint.centroid_tol", f.centroid_tol),
            ("footprint.step_bound", f.step_bound),
            ("footprint.height.delta", f.height.delta),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be positive"));
            }
        }
        if !(f.inflate >= 0.0) {
            return Err(invalid("footprint.inflate", "must be non-negative"));
        }
        if f.height.z_ref.is_some() != f.height.kappa.is_some() {
            return Err(invalid(
                "footprint.height",
                "give both z_ref and kappa, or neither to calibrate",
            ));
        }
        if f.height.kappa == Some(0.0) {
            return Err(invalid("footprint.height.kappa", "must be non-zero"));
        }
        let p = &self.planner;
        if !(p.v_max > 0.0 && p.knot_spacing > 0.0 && p.rrt_step > 0.0) {
            return Err(invalid("planner", "v_max, knot_spacing and rrt_step must be positive"));
        }
        if p.bounds_min.x < w.min[0]
            || p.bounds_min.y < w.min[1]
            || p.bounds_max.x > w.max[0]
            || p.bounds_max.y > w.max[1]
        {
            return Err(invalid(
                "planner.bounds_min",
                "planner bounds must lie inside the workspace",
            ));
        }
        self.ik.validate().map_err(|e| invalid("ik", e.to_string()))?;
        self.sim.validate().map_err(|e| invalid("sim", e.to_string()))?;
        if !(self.evaluation.base_error_bound > 0.0) {
            return Err(invalid("evaluation.base_error_bound", "must be positive"));
        }
        if let Some(r) = &self.regulation {
            if !(r.error_norm > 0.0 && r.duration > 0.0 && r.disturbance.amplitude >= 0.0) {
                return Err(invalid("regulation", "error norm and duration must be positive"));
            }
        }
        Ok(())
    }

    /// Places the robots, derives the grasps and moves the object to its
    /// start height with IK. The result is checked for grasp consistency,
    /// obstacle clearance and self-collision.
    pub fn build_team(&self) -> Result<Team, ScenarioError> {
        let model = self.model();
        let start = self.start();
        let n = self.team.angles.len();
        let mut reference = Vec::with_capacity(n);
        let mut ees = Vec::with_capacity(n);
        for &a in &self.team.angles {
            let mut q = DVector::zeros(model.dof());
            q[2] = wrap(a + std::f64::consts::PI + self.team.posture[0]);
            for (k, v) in self.team.posture.iter().enumerate().skip(1) {
                q[2 + k] = *v;
            }
            let local = forward_kinematics(&model, &q).map_err(|e| invalid("team", e.to_string()))?;
            let dir = Vector2::new(a.cos(), a.sin());
            let target = Vector2::new(start.x, start.y) + dir * self.team.standoff;
            q[0] = target.x - local.translation.x;
            q[1] = target.y - local.translation.y;
            if !model.within_limits(&q) {
                return Err(invalid("team.posture", "violates joint or base limits"));
            }
            ees.push(forward_kinematics(&model, &q).map_err(|e| invalid("team", e.to_string()))?);
            reference.push(q);
        }
        let z0 = ees.iter().map(|e| e.translation.z).sum::<f64>() / n as f64;
        let nominal = Pose::new(Matrix3::identity(), Vector3::new(start.x, start.y, z0));
        let shape = self.object.model.collision.transformed(&nominal.to_isometry());
        let mut grasps = Vec::with_capacity(n);
        for (i, ee) in ees.iter().enumerate() {
            let gap = point_distance(&ee.translation, &shape);
            if gap.abs() > 0.05 {
                return Err(invalid(
                    &format!("team.angles[{i}]"),
                    format!("grasp point lies {gap:.3} m from the object surface"),
                ));
            }
            let rel = nominal.inverse().compose(ee);
            grasps.push(GraspSpec {
                offset: rel.translation,
                rotation: rel.rotation,
            });
        }
        let models = vec![model; n];
        let mut cfg = self.ik.clone();
        cfg.budget = cfg.budget.max(200);
        let problem = IkProblem {
            models: models.clone(),
            grasps: grasps.clone(),
            reference: reference.clone(),
            object_rotation: Matrix3::identity(),
            config: cfg,
        };
        let bases: Vec<Vector2<f64>> = reference.iter().map(|q| Vector2::new(q[0], q[1])).collect();
        let r = solve_ik(&problem, &start, &bases, &reference, &[], false)
            .map_err(|e| ScenarioError::InitialState(e.to_string()))?;
        if !r.certified {
            return Err(ScenarioError::InitialState(format!(
                "no grasp-consistent posture at the start height (residuals {:.2e} m, {:.2e} rad)",
                r.position_residual, r.orientation_residual
            )));
        }
        let object_pose = Pose::new(Matrix3::identity(), start);
        let team = Team {
            models,
            grasps,
            reference,
            initial: r.q_des,
            object_pose,
        };
        let plant = self.plant(&team);
        let clearance = scene_clearance(&plant, &team.initial, &team.object_pose, &self.scene())
            .map_err(|e| ScenarioError::InitialState(e.to_string()))?;
        if !(clearance > 0.0) {
            return Err(ScenarioError::InitialState(format!(
                "team intersects an obstacle (clearance {clearance:.3} m)"
            )));
        }
        let (mut prims, pairs) =
            team_collision_pairs(&plant, &team.initial).map_err(|e| ScenarioError::InitialState(e.to_string()))?;
        let last = prims.len() - 1;
        prims[last] = plant.object.collision.transformed(&team.object_pose.to_isometry());
        let worst = pairs
            .forbidden()
            .into_iter()
            .map(|(i, j)| (signed_distance(&prims[i], &prims[j]), i, j))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((gap, i, j)) = worst {
            if !(gap > 0.0) {
                return Err(ScenarioError::InitialState(format!(
                    "self-collision between primitives {i} and {j} of {} (distance {gap:.3} m)",
                    prims.len()
                )));
            }
        }
        Ok(team)
    }

    pub fn plant(&self, team: &Team) -> Plant {
        Plant {
            models: team.models.clone(),
            grasps: team.grasps.clone(),
            object: self.object.model.clone(),
            bushing: self.sim.bushing.resolve(&self.object.model),
            gravity: self.sim.gravity(),
            attached: true,
        }
    }

    /// Height model from the scenario constants, if declared.
    pub fn declared_height(&self) -> Option<HeightModel> {
        let h = &self.footprint.height;
        Some(HeightModel {
            z_ref: h.z_ref?,
            kappa: h.kappa?,
            delta: h.delta,
        })
    }
}

pub(crate) fn wrap(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(t) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r + t
    } else {
        r
    }
}
