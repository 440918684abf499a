//! Offline planning, closed-loop simulation and evaluation of a scenario,
//! with the JSON and CSV artifacts each stage reads and writes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::control::GainSchedule;
use crate::footprint::{
    check_feasibility, plan_footprints, spread_of, FeasibilityReport, FootprintError, FootprintPlan, FootprintProblem,
    HeightModel,
};
use crate::ik::{solve_ik, IkError, IkProblem, IkSession};
use crate::scenario::{sub_seed, Scenario, ScenarioError, Team};
use crate::sim::{
    evaluate_run, initial_state, regulation_trace, run_closed_loop, Check, ClosedLoop, Disturbance, EvalContext,
    RegulationTrace, RunMetrics, SimError, SimLog,
};
use crate::smoothing::{smooth_waypoints, HermiteTrajectory, SmoothingError};
use crate::waypoint::{plan_waypoints, task_environment, PlanError, WaypointTrajectory};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("waypoint planning: {0}")]
    Waypoints(#[from] PlanError),
    #[error("smoothing: {0}")]
    Smoothing(#[from] SmoothingError),
    #[error("footprint planning: {0}")]
    Footprint(#[from] FootprintError),
    #[error("height calibration: {0}")]
    Calibration(#[from] IkError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimError),
    #[error("artifact {path}: {message}")]
    Artifact { path: String, message: String },
}

impl PipelineError {
    /// True when the task itself could not be met, as opposed to a bad input
    /// or an internal failure.
    pub fn is_task_failure(&self) -> bool {
        matches!(
            self,
            PipelineError::Waypoints(
                PlanError::Validation { .. } | PlanError::Timeout { .. } | PlanError::InfeasibleWindow { .. }
            ) | PipelineError::Footprint(FootprintError::Infeasible { .. } | FootprintError::InfeasibleEndpoint { .. })
                | PipelineError::Simulation(SimError::Diverged { .. })
        )
    }

    /// True for bad scenarios, missing artifacts and mismatched inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Scenario(_)
                | PipelineError::Artifact { .. }
                | PipelineError::Simulation(SimError::Stl(_) | SimError::EmptyLog)
        )
    }
}

/// Command-line overrides of scenario values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ik_budget: Option<usize>,
    /// `(control_rate, ik_rate)` in Hz.
    pub rates: Option<(f64, f64)>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) -> Result<(), ScenarioError> {
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(b) = self.ik_budget {
            s.ik.budget = b;
            s.ik.validate().map_err(|e| ScenarioError::Invalid {
                field: "ik.budget".into(),
                message: e.to_string(),
            })?;
        }
        if let Some((control, ik)) = self.rates {
            s.sim.control_rate = control;
            s.sim.ik_rate = ik;
            s.sim.validate().map_err(|e| ScenarioError::Invalid {
                field: "sim".into(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
}

impl ArtifactMeta {
    pub fn new(s: &Scenario, hash: &str) -> Self {
        Self {
            scenario: s.name.clone(),
            scenario_hash: hash.to_string(),
            seed: s.seed,
        }
    }

    fn csv_comment(&self) -> String {
        format!(
            "# scenario={} scenario_hash={} seed={}\n",
            self.scenario, self.scenario_hash, self.seed
        )
    }
}

/// Offline plan: waypoints, smoothed object trajectory and base footprints.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub waypoints: WaypointTrajectory,
    pub trajectory: HermiteTrajectory,
    pub height: HeightModel,
    pub problem: FootprintProblem,
    pub footprint: FootprintPlan,
    pub feasibility: FeasibilityReport,
}

/// Formation scales sampled when calibrating the height model.
const CALIBRATION_SCALES: [f64; 5] = [0.7, 0.8, 0.9, 1.0, 1.1];

/// Fits the object-height model: for formations scaled about the object,
/// finds the object height at which the IK posture deviation is smallest and
/// regresses that height on the formation spread.
pub fn calibrate_height(s: &Scenario, team: &Team) -> Result<HeightModel, PipelineError> {
    let formation = team.formation();
    let start = team.object_pose.translation;
    let mut cfg = s.ik.clone();
    cfg.budget = cfg.budget.max(200);
    let problem = IkProblem {
        models: team.models.clone(),
        grasps: team.grasps.clone(),
        reference: team.initial.clone(),
        object_rotation: Matrix3::identity(),
        config: cfg,
    };
    let mut samples = Vec::new();
    for scale in CALIBRATION_SCALES {
        let bases: Vec<Vector2<f64>> = formation
            .iter()
            .map(|f| Vector2::new(start.x, start.y) + f * scale)
            .collect();
        let cost = |z: f64| -> Result<f64, PipelineError> {
            let target = Vector3::new(start.x, start.y, z);
            let r = solve_ik(&problem, &target, &bases, &team.initial, &[], false)?;
            // arm deviation only; the bases are free within their box
            let arm: f64 = r
                .q_des
                .iter()
                .zip(&team.initial)
                .map(|(q, q0)| {
                    let d: DVector<f64> = q - q0;
                    d.rows(2, d.len() - 2).norm_squared()
                })
                .sum();
            Ok(arm + 1e3 * r.position_residual.powi(2))
        };
        let z = golden_section(start.z - 0.3, start.z + 0.3, 40, cost)?;
        samples.push((spread_of(&bases), z));
    }
    Ok(HeightModel::fit(&samples, s.footprint.height.delta)?)
}

/// Minimizer of a unimodal function on `[a, b]`.
fn golden_section(
    mut a: f64,
    mut b: f64,
    iterations: usize,
    f: impl Fn(f64) -> Result<f64, PipelineError>,
) -> Result<f64, PipelineError> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iterations {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Footprint problem for the scenario's team and height model.
pub fn footprint_problem(s: &Scenario, team: &Team, height: HeightModel) -> FootprintProblem {
    let formation = team.formation();
    let n = formation.len();
    let m = s.footprint.inflate;
    let w = &s.workspace;
    FootprintProblem {
        steps: s.footprint.steps,
        weights: vec![s.footprint.weight; n],
        spacing: FootprintProblem::formation_spacing(&formation),
        centroid_tol: s.footprint.centroid_tol,
        step_bound: s.footprint.step_bound,
        height,
        obstacles: s.footprint_obstacles(),
        formation,
        workspace: [[w.min[0] + m, w.max[0] - m], [w.min[1] + m, w.max[1] - m]],
    }
}

/// Runs waypoint planning, smoothing and footprint planning.
pub fn plan(s: &Scenario, team: &Team) -> Result<Plan, PipelineError> {
    let task = s.task()?;
    let cfg = s.planner_config();
    let waypoints = plan_waypoints(&task, &s.scene(), s.start(), sub_seed(s.seed, "planner"), &cfg)?;
    let trajectory = smooth_waypoints(&waypoints, &cfg.smoothing)?;
    let height = match s.declared_height() {
        Some(h) => h,
        None => calibrate_height(s, team)?,
    };
    let problem = footprint_problem(s, team, height);
    let footprint = plan_footprints(
        &problem,
        &trajectory,
        sub_seed(s.seed, "footprint"),
        &s.footprint.solver,
    )?;
    footprint.require_certified()?;
    let feasibility = check_feasibility(&footprint, &problem, &trajectory);
    Ok(Plan {
        waypoints,
        trajectory,
        height,
        problem,
        footprint,
        feasibility,
    })
}

/// Closed loop assembled from the scenario.
pub fn closed_loop(s: &Scenario, team: &Team) -> ClosedLoop {
    let gains: GainSchedule = s.control;
    let mut config = s.sim.clone();
    config.seed = sub_seed(s.seed, "disturbance");
    ClosedLoop {
        plant: s.plant(team),
        gains: team.models.iter().map(|m| gains.gains_for(m)).collect(),
        scene: s.scene(),
        initial: team.initial.clone(),
        config,
        shaping: s.ik.shaping,
    }
}

/// Joint-space regulation of the first robot, detached from the object, from
/// an initial error of the declared norm along the all-ones direction. The
/// declared disturbance amplitude is multiplied by `disturbance_scale`.
pub fn regulation(s: &Scenario, team: &Team, disturbance_scale: f64) -> Result<RegulationTrace, PipelineError> {
    let spec = s.regulation.ok_or_else(|| ScenarioError::Invalid {
        field: "regulation".into(),
        message: "scenario declares no regulation experiment".into(),
    })?;
    let mut cl = closed_loop(s, team);
    cl.plant.models.truncate(1);
    cl.plant.grasps.truncate(1);
    cl.plant.attached = false;
    cl.gains.truncate(1);
    cl.initial.truncate(1);
    cl.config.disturbance = (disturbance_scale != 0.0).then_some(Disturbance {
        amplitude: spec.disturbance.amplitude * disturbance_scale,
        frequency: spec.disturbance.frequency,
    });
    let q_des = cl.initial.clone();
    let n = q_des[0].len();
    cl.initial[0] = &q_des[0] + DVector::from_element(n, spec.error_norm / (n as f64).sqrt());
    let state = initial_state(&cl, team.object_pose.clone());
    Ok(regulation_trace(&cl, state, &q_des, spec.duration)?)
}

/// IK session warm-started at the initial configuration.
pub fn ik_session(s: &Scenario, team: &Team) -> Result<IkSession, PipelineError> {
    let problem = IkProblem {
        models: team.models.clone(),
        grasps: team.grasps.clone(),
        reference: team.initial.clone(),
        object_rotation: Matrix3::identity(),
        config: s.ik.clone(),
    };
    Ok(IkSession::new(problem, s.object.model.clone(), team.initial.clone())?)
}

/// Simulates the team along a plan.
pub fn simulate(
    s: &Scenario,
    team: &Team,
    trajectory: &HermiteTrajectory,
    footprint: &FootprintPlan,
) -> Result<SimLog, PipelineError> {
    let cl = closed_loop(s, team);
    let session = ik_session(s, team)?;
    Ok(run_closed_loop(&cl, session, trajectory, footprint)?)
}

/// Task verdict for a log; a pure function of the log and the scenario.
pub fn evaluate(s: &Scenario, team: &Team, log: &SimLog) -> Result<RunMetrics, PipelineError> {
    let task = s.task()?;
    let formula = task.to_formula();
    let obstacles = s.obstacle_set();
    let env = task_environment(&task, &obstacles);
    let plant = s.plant(team);
    let scene = s.scene();
    let ctx = EvalContext {
        formula: &formula,
        env: &env,
        scene: &scene,
        plant: &plant,
        base_error_bound: s.evaluation.base_error_bound,
    };
    let mut m = evaluate_run(log, &ctx)?;
    if let Some(bound) = s.evaluation.object_rms_bound {
        m.checks.push(Check {
            name: "object_tracking".into(),
            passed: m.rms_object_error <= bound,
            detail: format!("rms {:.4} m, bound {bound:.4} m", m.rms_object_error),
        });
        m.passed = m.checks.iter().all(|c| c.passed);
    }
    Ok(m)
}

pub const WAYPOINTS: &str = "waypoints.json";
pub const TRAJECTORY: &str = "trajectory.json";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const FOOTPRINT: &str = "footprint.json";
pub const FOOTPRINT_CSV: &str = "footprint.csv";
pub const SIMLOG: &str = "simlog.json";
pub const SIMLOG_CSV: &str = "simlog.csv";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointsArtifact {
    pub meta: ArtifactMeta,
    /// Rows `[t, x, y, z]`.
    pub knots: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryArtifact {
    pub meta: ArtifactMeta,
    pub trajectory: HermiteTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintArtifact {
    pub meta: ArtifactMeta,
    pub height: HeightModel,
    pub feasibility: FeasibilityReport,
    pub plan: FootprintPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLogArtifact {
    pub meta: ArtifactMeta,
    pub log: SimLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub meta: ArtifactMeta,
    pub passed: bool,
    pub metrics: RunMetrics,
}

fn artifact_error(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Artifact {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| artifact_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| artifact_error(path, e))?;
    text.push('\n');
    write_file(path, &text)
}

/// Reads an artifact and checks that it was produced from this scenario.
pub fn read_artifact<T: DeserializeOwned>(
    path: &Path,
    meta: &ArtifactMeta,
    meta_of: impl Fn(&T) -> &ArtifactMeta,
) -> Result<T, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| artifact_error(path, format!("missing or unreadable ({e})")))?;
    let value: T = serde_json::from_str(&text).map_err(|e| artifact_error(path, e))?;
    let found = meta_of(&value);
    if found.scenario_hash != meta.scenario_hash || found.seed != meta.seed {
        return Err(artifact_error(
            path,
            format!(
                "produced from scenario {} seed {}, expected {} seed {}",
                found.scenario_hash, found.seed, meta.scenario_hash, meta.seed
            ),
        ));
    }
    Ok(value)
}

fn csv_table(meta: &ArtifactMeta, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = meta.csv_comment();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let mut first = true;
        for v in r {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_plan(dir: &Path, meta: &ArtifactMeta, plan: &Plan) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| artifact_error(dir, e))?;
    write_json(
        &dir.join(WAYPOINTS),
        &WaypointsArtifact {
            meta: meta.clone(),
            knots: plan.waypoints.clone().into(),
        },
    )?;
    write_json(
        &dir.join(TRAJECTORY),
        &TrajectoryArtifact {
            meta: meta.clone(),
            trajectory: plan.trajectory.clone(),
        },
    )?;
    let header: Vec<String> = ["t", "x", "y", "z", "vx", "vy", "vz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_file(
        &dir.join(TRAJECTORY_CSV),
        &csv_table(meta, &header, plan.trajectory.table().into_iter().map(|r| r.to_vec())),
    )?;
    write_json(
        &dir.join(FOOTPRINT),
        &FootprintArtifact {
            meta: meta.clone(),
            height: plan.height,
            feasibility: plan.feasibility,
            plan: plan.footprint.clone(),
        },
    )?;
    let mut header = vec!["k".to_string(), "t".to_string()];
    for i in 0..plan.problem.robots() {
        header.push(format!("b{i}_x"));
        header.push(format!("b{i}_y"));
    }
    write_file(
        &dir.join(FOOTPRINT_CSV),
        &csv_table(meta, &header, plan.footprint.table().into_iter()),
    )
}

/// Reads the trajectory and footprint written by [`write_plan`].
pub fn read_plan(dir: &Path, meta: &ArtifactMeta) -> Result<(HermiteTrajectory, FootprintPlan), PipelineError> {
    let t: TrajectoryArtifact = read_artifact(&dir.join(TRAJECTORY), meta, |a: &TrajectoryArtifact| &a.meta)?;
    let f: FootprintArtifact = read_artifact(&dir.join(FOOTPRINT), meta, |a: &FootprintArtifact| &a.meta)?;
    Ok((t.trajectory, f.plan))
}

pub fn write_log(dir: &Path, meta: &ArtifactMeta, log: &SimLog) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| artifact_error(dir, e))?;
    write_json(
        &dir.join(SIMLOG),
        &SimLogArtifact {
            meta: meta.clone(),
            log: log.clone(),
        },
    )?;
    write_file(
        &dir.join(SIMLOG_CSV),
        &csv_table(meta, &log.csv_header(), log.rows.iter().map(SimLog::csv_row)),
    )
}

pub fn read_log(dir: &Path, meta: &ArtifactMeta) -> Result<SimLog, PipelineError> {
    Ok(read_artifact(&dir.join(SIMLOG), meta, |a: &SimLogArtifact| &a.meta)?.log)
}

pub fn write_metrics(dir: &Path, meta: &ArtifactMeta, metrics: &RunMetrics) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| artifact_error(dir, e))?;
    write_json(
        &dir.join(METRICS),
        &MetricsArtifact {
            meta: meta.clone(),
            passed: metrics.passed,
            metrics: metrics.clone(),
        },
    )
}
