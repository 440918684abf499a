//! Timed reach-avoid waypoint planning for the object's centre of mass.
//!
//! A conjunction of `G[a,b](ball)`, `F[a,b](ball)` and `G[a,b](avoid)`
//! conjuncts is turned into an ordered goal list. Consecutive goals are joined
//! by RRT paths (shortcut afterwards), and time is allocated along each path at
//! constant speed with dwell at each goal across its window. Knot times are
//! jittered so the spacing is irregular. The result is smoothed and checked
//! against the originating formula; on failure the clearance margin is grown
//! and the plan repeated.

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{ObstacleSet, Primitive};
use crate::smoothing::{smooth_waypoints, SmoothingConfig, SmoothingError};
use crate::stl::{eval_robustness, Environment, Formula, Interval, Predicate, SampledSignal, StlError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("formula outside the reach-avoid fragment: unsupported {0} node")]
    Fragment(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("start point has clearance {clearance:.3} m, below the required {required:.3} m")]
    StartInCollision { clearance: f64, required: f64 },
    #[error("goal {goal} centre has clearance {clearance:.3} m, below the planning margin {required:.3} m")]
    GoalInCollision { goal: usize, clearance: f64, required: f64 },
    #[error("goal {goal} window infeasible: needs {required:.3} m/s, cap is {cap:.3} m/s")]
    InfeasibleWindow { goal: usize, required: f64, cap: f64 },
    #[error("planning timeout after {iterations} RRT iterations (leg {leg})")]
    Timeout { leg: usize, iterations: usize },
    #[error("smoothed plan violates the task (robustness {robustness:.4}) after {attempts} attempts")]
    Validation { robustness: f64, attempts: usize },
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Stl(#[from] StlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    /// Inside the ball throughout the window.
    Always,
    /// Inside the ball at some instant of the window.
    Eventually,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedGoal {
    pub window: (f64, f64),
    pub center: Vector3<f64>,
    pub radius: f64,
    pub kind: GoalKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidSpec {
    pub field: String,
    pub margin: f64,
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachAvoidTask {
    pub goals: Vec<TimedGoal>,
    pub avoid: Option<AvoidSpec>,
    pub t_max: f64,
}

impl ReachAvoidTask {
    /// Separation margin `d_min`; zero without an avoid conjunct.
    pub fn d_min(&self) -> f64 {
        self.avoid.as_ref().map_or(0.0, |a| a.margin)
    }

    /// Formula equivalent to the task.
    pub fn to_formula(&self) -> Formula {
        let mut items: Vec<Formula> = self
            .goals
            .iter()
            .map(|g| {
                let iv = Interval::new(g.window.0, g.window.1).expect("validated window");
                let p = Formula::pred(Predicate::Ball {
                    center: g.center,
                    radius: g.radius,
                });
                match g.kind {
                    GoalKind::Always => Formula::always(iv, p),
                    GoalKind::Eventually => Formula::eventually(iv, p),
                }
            })
            .collect();
        if let Some(a) = &self.avoid {
            let iv = Interval::new(a.window.0, a.window.1).expect("validated window");
            items.push(Formula::always(
                iv,
                Formula::pred(Predicate::avoid(a.field.clone(), a.margin)),
            ));
        }
        Formula::and(items)
    }
}

fn fragment_error(f: &Formula) -> PlanError {
    PlanError::Fragment(f.kind_name().to_string())
}

fn ball_of(f: &Formula) -> Option<(Vector3<f64>, f64)> {
    match f {
        Formula::Pred(Predicate::Ball { center, radius }) => Some((*center, *radius)),
        _ => None,
    }
}

/// Splits a reach-avoid conjunction into timed goals and an avoid conjunct.
pub fn extract_fragment(f: &Formula) -> Result<ReachAvoidTask, PlanError> {
    let conjuncts: Vec<&Formula> = match f {
        Formula::And(items) => items.iter().collect(),
        other => vec![other],
    };
    let mut goals = Vec::new();
    let mut avoid: Option<AvoidSpec> = None;
    for c in conjuncts {
        match c {
            Formula::True => {}
            Formula::Always(iv, inner) => {
                if let Some((center, radius)) = ball_of(inner) {
                    goals.push(TimedGoal {
                        window: (iv.lo(), iv.hi()),
                        center,
                        radius,
                        kind: GoalKind::Always,
                    });
                } else if let Formula::Pred(Predicate::Avoid { field, margin }) = inner.as_ref() {
                    if let Some(prev) = &avoid {
                        if prev.field != *field {
                            return Err(PlanError::Fragment("second avoid field".into()));
                        }
                    }
                    let (lo, hi) = avoid.as_ref().map_or((iv.lo(), iv.hi()), |p| {
                        (p.window.0.min(iv.lo()), p.window.1.max(iv.hi()))
                    });
                    let margin = avoid.as_ref().map_or(*margin, |p| p.margin.max(*margin));
                    avoid = Some(AvoidSpec {
                        field: field.clone(),
                        margin,
                        window: (lo, hi),
                    });
                } else {
                    return Err(fragment_error(inner));
                }
            }
            Formula::Eventually(iv, inner) => match ball_of(inner) {
                Some((center, radius)) => goals.push(TimedGoal {
                    window: (iv.lo(), iv.hi()),
                    center,
                    radius,
                    kind: GoalKind::Eventually,
                }),
                None => return Err(fragment_error(inner)),
            },
            other => return Err(fragment_error(other)),
        }
    }
    goals.sort_by(|a, b| {
        a.window
            .0
            .total_cmp(&b.window.0)
            .then(a.window.1.total_cmp(&b.window.1))
    });
    let t_max = goals
        .iter()
        .map(|g| g.window.1)
        .chain(avoid.iter().map(|a| a.window.1))
        .fold(0.0, f64::max);
    Ok(ReachAvoidTask { goals, avoid, t_max })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub t: f64,
    pub x: Vector3<f64>,
}

impl Knot {
    pub fn new(t: f64, x: Vector3<f64>) -> Self {
        Self { t, x }
    }
}

/// Timed waypoint sequence; serialized as a table of `[t, x, y, z]` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 4]>", into = "Vec<[f64; 4]>")]
pub struct WaypointTrajectory {
    knots: Vec<Knot>,
}

impl WaypointTrajectory {
    pub fn new(knots: Vec<Knot>) -> Result<Self, PlanError> {
        if knots.len() < 2 {
            return Err(PlanError::InvalidTask("a trajectory needs at least two knots".into()));
        }
        if knots
            .iter()
            .any(|k| !k.t.is_finite() || k.x.iter().any(|v| !v.is_finite()))
        {
            return Err(PlanError::InvalidTask("non-finite knot".into()));
        }
        if let Some(i) = knots.windows(2).position(|p| p[1].t <= p[0].t) {
            return Err(PlanError::InvalidTask(format!(
                "knot times not increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Largest speed between consecutive knots.
    pub fn max_speed(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|p| (p[1].x - p[0].x).norm() / (p[1].t - p[0].t))
            .fold(0.0, f64::max)
    }

    /// Piecewise-linear signal through the knots.
    pub fn to_signal(&self) -> SampledSignal {
        SampledSignal::new(
            self.knots.iter().map(|k| k.t).collect(),
            self.knots.iter().map(|k| k.x).collect(),
        )
        .expect("validated knots")
    }
}

impl TryFrom<Vec<[f64; 4]>> for WaypointTrajectory {
    type Error = PlanError;

    fn try_from(rows: Vec<[f64; 4]>) -> Result<Self, Self::Error> {
        Self::new(
            rows.into_iter()
                .map(|r| Knot::new(r[0], Vector3::new(r[1], r[2], r[3])))
                .collect(),
        )
    }
}

impl From<WaypointTrajectory> for Vec<[f64; 4]> {
    fn from(w: WaypointTrajectory) -> Self {
        w.knots.iter().map(|k| [k.t, k.x.x, k.x.y, k.x.z]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub v_max: f64,
    /// Bounding-sphere radius of the carried object.
    pub object_radius: f64,
    /// Mean knot spacing in seconds.
    pub knot_spacing: f64,
    /// Knot time jitter as a fraction of local spacing.
    pub jitter: f64,
    /// Time spent at a goal before and after its window when slack allows.
    pub dwell_buffer: f64,
    pub bounds_min: Vector3<f64>,
    pub bounds_max: Vector3<f64>,
    pub rrt_step: f64,
    pub goal_bias: f64,
    pub max_iterations: usize,
    /// Re-plans with a grown margin when the smoothed plan fails the task.
    pub max_attempts: usize,
    pub margin_growth: f64,
    pub smoothing: SmoothingConfig,
    /// Resampling step of the smoothed curve when checking the task.
    pub check_step: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            object_radius: 0.0,
            knot_spacing: 0.5,
            jitter: 0.1,
            dwell_buffer: 1.0,
            bounds_min: Vector3::new(-5.0, -5.0, 0.6),
            bounds_max: Vector3::new(5.0, 5.0, 0.6),
            rrt_step: 0.5,
            goal_bias: 0.2,
            max_iterations: 20_000,
            max_attempts: 6,
            margin_growth: 0.05,
            smoothing: SmoothingConfig::default(),
            check_step: 0.02,
        }
    }
}

impl PlannerConfig {
    /// Clearance the planned centre path keeps from obstacles.
    pub fn planning_margin(&self, d_min: f64) -> f64 {
        d_min + 0.5 * self.object_radius
    }
}

struct Scene<'a> {
    obstacles: &'a ObstacleSet,
    margin: f64,
}

impl Scene<'_> {
    fn segment_free(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        self.obstacles.segment_clearance(a, b) > self.margin
    }
}

fn sample_point(rng: &mut ChaCha8Rng, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        if hi[i] > lo[i] {
            rng.gen_range(lo[i]..=hi[i])
        } else {
            lo[i]
        }
    })
}

/// RRT from `start` to `goal`, then greedy shortcutting.
fn rrt_path(
    scene: &Scene,
    start: Vector3<f64>,
    goal: Vector3<f64>,
    cfg: &PlannerConfig,
    rng: &mut ChaCha8Rng,
    leg: usize,
) -> Result<Vec<Vector3<f64>>, PlanError> {
    if (goal - start).norm() == 0.0 {
        return Ok(vec![start]);
    }
    if scene.segment_free(&start, &goal) {
        return Ok(vec![start, goal]);
    }
    let mut nodes = vec![start];
    let mut parent = vec![usize::MAX];
    for _ in 0..cfg.max_iterations {
        let target = if rng.gen::<f64>() < cfg.goal_bias {
            goal
        } else {
            sample_point(rng, &cfg.bounds_min, &cfg.bounds_max)
        };
        let (near, _) = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, (n - target).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("tree is non-empty");
        let dir = target - nodes[near];
        let len = dir.norm();
        if len < 1e-9 {
            continue;
        }
        let new = if len > cfg.rrt_step {
            nodes[near] + dir * (cfg.rrt_step / len)
        } else {
            target
        };
        if !scene.segment_free(&nodes[near], &new) {
            continue;
        }
        nodes.push(new);
        parent.push(near);
        if scene.segment_free(&new, &goal) {
            let mut path = vec![goal];
            let mut i = nodes.len() - 1;
            while i != usize::MAX {
                path.push(nodes[i]);
                i = parent[i];
            }
            path.reverse();
            return Ok(shortcut(scene, path));
        }
    }
    Err(PlanError::Timeout {
        leg,
        iterations: cfg.max_iterations,
    })
}

fn shortcut(scene: &Scene, path: Vec<Vector3<f64>>) -> Vec<Vector3<f64>> {
    let mut out = vec![path[0]];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = path.len() - 1;
        while j > i + 1 && !scene.segment_free(&path[i], &path[j]) {
            j -= 1;
        }
        out.push(path[j]);
        i = j;
    }
    out
}

fn path_length(path: &[Vector3<f64>]) -> f64 {
    path.windows(2).map(|p| (p[1] - p[0]).norm()).sum()
}

/// Interior knot times on `(t0, t1)` at roughly `spacing`, jittered.
fn jittered_times(t0: f64, t1: f64, spacing: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = ((t1 - t0) / spacing).round().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    (1..n)
        .map(|k| t0 + h * (k as f64 + jitter * rng.gen_range(-1.0..=1.0)))
        .collect()
}

/// Point at arc length `s` along a polyline.
fn along(path: &[Vector3<f64>], mut s: f64) -> Vector3<f64> {
    for p in path.windows(2) {
        let l = (p[1] - p[0]).norm();
        if s <= l {
            return if l > 0.0 { p[0] + (p[1] - p[0]) * (s / l) } else { p[0] };
        }
        s -= l;
    }
    *path.last().expect("non-empty path")
}

struct Leg {
    path: Vec<Vector3<f64>>,
    length: f64,
}

fn validate_task(task: &ReachAvoidTask) -> Result<(), PlanError> {
    if !(task.t_max.is_finite() && task.t_max >= 0.0) {
        return Err(PlanError::InvalidTask("horizon must be finite and non-negative".into()));
    }
    for (i, g) in task.goals.iter().enumerate() {
        if !(g.radius > 0.0) || !(g.window.0 <= g.window.1) || g.window.0 < 0.0 || g.window.1 > task.t_max {
            return Err(PlanError::InvalidTask(format!(
                "goal {i} has an invalid window or radius"
            )));
        }
    }
    if task.goals.windows(2).any(|p| p[1].window.0 < p[0].window.0) {
        return Err(PlanError::InvalidTask("goals must be ordered by window start".into()));
    }
    if task.d_min() < 0.0 {
        return Err(PlanError::InvalidTask("negative separation margin".into()));
    }
    Ok(())
}

/// Knots for one planning attempt at clearance `margin`.
fn plan_once(
    task: &ReachAvoidTask,
    obstacles: &ObstacleSet,
    x0: Vector3<f64>,
    cfg: &PlannerConfig,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Result<WaypointTrajectory, PlanError> {
    let scene = Scene { obstacles, margin };
    for (i, g) in task.goals.iter().enumerate() {
        let c = obstacles.point_clearance(&g.center);
        if c <= margin {
            return Err(PlanError::GoalInCollision {
                goal: i,
                clearance: c,
                required: margin,
            });
        }
    }
    let mut legs = Vec::with_capacity(task.goals.len());
    let mut from = x0;
    for (i, g) in task.goals.iter().enumerate() {
        let path = rrt_path(&scene, from, g.center, cfg, rng, i)?;
        let length = path_length(&path);
        legs.push(Leg { path, length });
        from = g.center;
    }

    // arrival and departure times per goal
    let mut knots = vec![Knot::new(0.0, x0)];
    let mut t_dep = 0.0;
    let t_end = task.t_max.max(task.goals.last().map_or(0.0, |g| g.window.1));
    for (i, (g, leg)) in task.goals.iter().zip(&legs).enumerate() {
        let earliest = t_dep + leg.length / cfg.v_max;
        let latest = match g.kind {
            GoalKind::Always => g.window.0,
            GoalKind::Eventually => g.window.1,
        };
        if earliest > latest + 1e-12 {
            return Err(PlanError::InfeasibleWindow {
                goal: i,
                required: leg.length / (latest - t_dep).max(0.0),
                cap: cfg.v_max,
            });
        }
        let t_arr = (g.window.0 - cfg.dwell_buffer).clamp(earliest, latest);
        // leave late enough to cover the window plus buffer, early enough for the next goal
        let next_latest = task.goals.get(i + 1).map(|n| {
            let l = legs[i + 1].length / cfg.v_max;
            let latest = match n.kind {
                GoalKind::Always => n.window.0,
                GoalKind::Eventually => n.window.1,
            };
            latest - l
        });
        let mut leave = if i + 1 == task.goals.len() {
            t_end
        } else {
            g.window.1 + cfg.dwell_buffer
        };
        if let Some(nl) = next_latest {
            leave = leave.min(nl).max(g.window.1.max(t_arr));
        }

        emit_leg(&mut knots, &leg.path, t_dep, t_arr, cfg, rng);
        emit_dwell(&mut knots, g.center, t_arr, leave, cfg, rng);
        t_dep = leave;
    }
    let last = knots.last().expect("non-empty").x;
    if t_dep < t_end {
        emit_dwell(&mut knots, last, t_dep, t_end, cfg, rng);
    }
    while knots.len() < 4 {
        refine(&mut knots);
    }
    WaypointTrajectory::new(knots)
}

fn push_knot(knots: &mut Vec<Knot>, k: Knot) {
    let last = knots.last().expect("non-empty");
    if k.t > last.t {
        knots.push(k);
    }
}

fn emit_leg(knots: &mut Vec<Knot>, path: &[Vector3<f64>], t0: f64, t1: f64, cfg: &PlannerConfig, rng: &mut ChaCha8Rng) {
    let total = path_length(path);
    if total == 0.0 || t1 <= t0 {
        return;
    }
    let speed = total / (t1 - t0);
    // corner knots keep the straight segments between knots inside the free path
    let mut s_acc = 0.0;
    let mut t_prev = t0;
    for p in path.windows(2) {
        let l = (p[1] - p[0]).norm();
        let t_next = t0 + (s_acc + l) / speed;
        for t in jittered_times(t_prev, t_next, cfg.knot_spacing, cfg.jitter, rng) {
            push_knot(knots, Knot::new(t, along(path, (t - t0) * speed)));
        }
        s_acc += l;
        push_knot(knots, Knot::new(t_next, p[1]));
        t_prev = t_next;
    }
}

fn emit_dwell(knots: &mut Vec<Knot>, x: Vector3<f64>, t0: f64, t1: f64, cfg: &PlannerConfig, rng: &mut ChaCha8Rng) {
    if t1 <= t0 {
        return;
    }
    for t in jittered_times(t0, t1, cfg.knot_spacing, cfg.jitter, rng) {
        push_knot(knots, Knot::new(t, x));
    }
    push_knot(knots, Knot::new(t1, x));
}

fn refine(knots: &mut Vec<Knot>) {
    let mut out = Vec::with_capacity(2 * knots.len());
    for p in knots.windows(2) {
        out.push(p[0]);
        out.push(Knot::new(0.5 * (p[0].t + p[1].t), 0.5 * (p[0].x + p[1].x)));
    }
    out.push(*knots.last().expect("non-empty"));
    *knots = out;
}

/// Robustness of the smoothed plan against the task.
pub fn smoothed_robustness(
    task: &ReachAvoidTask,
    w: &WaypointTrajectory,
    obstacles: &ObstacleSet,
    cfg: &PlannerConfig,
) -> Result<f64, PlanError> {
    let h = smooth_waypoints(w, &cfg.smoothing)?;
    let signal = h.to_signal(cfg.check_step);
    let env = task_environment(task, obstacles);
    Ok(eval_robustness(&task.to_formula(), &signal, 0.0, &env)?)
}

/// Environment binding the task's avoid field to the obstacle set.
pub fn task_environment(task: &ReachAvoidTask, obstacles: &ObstacleSet) -> Environment {
    let mut env = Environment::new();
    if let Some(a) = &task.avoid {
        env.insert(a.field.clone(), Arc::new(obstacles.clone()));
    }
    env
}

/// Plans a timed waypoint sequence satisfying the task after smoothing.
pub fn plan_waypoints(
    task: &ReachAvoidTask,
    scene: &[Primitive],
    x0: Vector3<f64>,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<WaypointTrajectory, PlanError> {
    validate_task(task)?;
    if !(cfg.v_max > 0.0 && cfg.knot_spacing > 0.0 && cfg.rrt_step > 0.0) {
        return Err(PlanError::InvalidTask(
            "speed cap, knot spacing and RRT step must be positive".into(),
        ));
    }
    let obstacles = ObstacleSet(scene.to_vec());
    let d_min = task.d_min();
    let start_clear = obstacles.point_clearance(&x0);
    if start_clear <= d_min {
        return Err(PlanError::StartInCollision {
            clearance: start_clear,
            required: d_min,
        });
    }
    let base = cfg.planning_margin(d_min).min(start_clear * (1.0 - 1e-9));
    let mut best = f64::NEG_INFINITY;
    let attempts = cfg.max_attempts.max(1);
    for attempt in 0..attempts {
        let margin = base + cfg.margin_growth * attempt as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let w = match plan_once(task, &obstacles, x0, cfg, margin, &mut rng) {
            Ok(w) => w,
            // a grown margin may swallow a goal; keep the earlier verdict
            Err(PlanError::GoalInCollision { .. }) if attempt > 0 => break,
            Err(e) => return Err(e),
        };
        let rho = smoothed_robustness(task, &w, &obstacles, cfg)?;
        if rho > 0.0 {
            return Ok(w);
        }
        best = best.max(rho);
    }
    Err(PlanError::Validation {
        robustness: best,
        attempts,
    })
}
