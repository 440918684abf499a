//! Base footprint planning: a discrete-time trajectory of planar base
//! positions that keeps inter-base spacing near its targets while anchoring
//! the formation centroid to the object path, bounding per-step motion,
//! coupling the formation spread to the object height, and keeping every base
//! outside super-ellipse obstacle approximations.
//!
//! Solved with an augmented Lagrangian over all inequality families and a
//! spectral projected-gradient inner loop; the workspace box is handled by
//! projection and the endpoint formations are eliminated.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::SuperEllipse;
use crate::smoothing::HermiteTrajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FootprintError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("endpoint formation infeasible: {family} violated by {violation:.3e} at step {step}")]
    InfeasibleEndpoint {
        family: ConstraintFamily,
        step: usize,
        violation: f64,
    },
    #[error("plan not certified: {family} violated by {violation:.3e} at step {step}")]
    Infeasible {
        family: ConstraintFamily,
        step: usize,
        violation: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    Centroid,
    StepBound,
    Height,
    Obstacle,
    Endpoint,
    Workspace,
}

impl std::fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConstraintFamily::Centroid => "centroid",
            ConstraintFamily::StepBound => "step bound",
            ConstraintFamily::Height => "height",
            ConstraintFamily::Obstacle => "obstacle",
            ConstraintFamily::Endpoint => "endpoint",
            ConstraintFamily::Workspace => "workspace",
        };
        f.write_str(s)
    }
}

/// Linear object-height model `z_obj = z_ref − κ·spread`, required within
/// `±δ` of the desired object height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightModel {
    pub z_ref: f64,
    pub kappa: f64,
    pub delta: f64,
}

impl HeightModel {
    pub fn predict(&self, spread: f64) -> f64 {
        self.z_ref - self.kappa * spread
    }

    /// Least-squares fit of `z = z_ref − κ·s` to calibration samples.
    pub fn fit(samples: &[(f64, f64)], delta: f64) -> Result<Self, FootprintError> {
        if samples.len() < 2 {
            return Err(FootprintError::InvalidProblem("height fit needs two samples".into()));
        }
        let n = samples.len() as f64;
        let ms = samples.iter().map(|s| s.0).sum::<f64>() / n;
        let mz = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let sxx: f64 = samples.iter().map(|s| (s.0 - ms).powi(2)).sum();
        if sxx <= 0.0 {
            return Err(FootprintError::InvalidProblem(
                "height fit needs distinct spreads".into(),
            ));
        }
        let sxz: f64 = samples.iter().map(|s| (s.0 - ms) * (s.1 - mz)).sum();
        let slope = sxz / sxx;
        Ok(Self {
            z_ref: mz - slope * ms,
            kappa: -slope,
            delta,
        })
    }

    /// Admissible spread interval for a desired object height.
    pub fn spread_bounds(&self, z_desired: f64) -> (f64, f64) {
        let a = (self.z_ref - z_desired - self.delta) / self.kappa;
        let b = (self.z_ref - z_desired + self.delta) / self.kappa;
        (a.min(b), a.max(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintProblem {
    /// Time steps; the plan holds `K + 1` formations.
    pub steps: usize,
    pub weights: Vec<f64>,
    /// Target spacing `α_ij` per ordered pair (symmetric).
    pub spacing: Vec<Vec<f64>>,
    /// Bound on the squared centroid-to-object distance.
    pub centroid_tol: f64,
    /// Per-axis bound on base displacement between consecutive steps.
    pub step_bound: f64,
    pub height: HeightModel,
    pub obstacles: Vec<SuperEllipse>,
    /// Nominal base offsets from the object's planar position.
    pub formation: Vec<Vector2<f64>>,
    /// `[[x_min, x_max], [y_min, y_max]]`.
    pub workspace: [[f64; 2]; 2],
}

impl FootprintProblem {
    pub fn robots(&self) -> usize {
        self.formation.len()
    }

    /// Pairwise distances of the nominal formation.
    pub fn formation_spacing(formation: &[Vector2<f64>]) -> Vec<Vec<f64>> {
        formation
            .iter()
            .map(|a| formation.iter().map(|b| (a - b).norm()).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<(), FootprintError> {
        let n = self.robots();
        let bad = |m: &str| Err(FootprintError::InvalidProblem(m.to_string()));
        if n < 2 {
            return bad("need at least two robots");
        }
        if self.steps < 2 {
            return bad("need at least two steps");
        }
        if self.weights.len() != n || self.weights.iter().any(|w| !(*w > 0.0)) {
            return bad("weights must be positive, one per robot");
        }
        if self.spacing.len() != n || self.spacing.iter().any(|r| r.len() != n) {
            return bad("spacing must be N×N");
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && (!(self.spacing[i][j] > 0.0) || (self.spacing[i][j] - self.spacing[j][i]).abs() > 1e-12) {
                    return bad("spacing must be positive and symmetric");
                }
            }
        }
        if !(self.centroid_tol > 0.0 && self.step_bound > 0.0 && self.height.delta > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.height.kappa != 0.0 && self.height.kappa.is_finite()) {
            return bad("height model slope must be non-zero");
        }
        for o in &self.obstacles {
            o.validate()
                .map_err(|e| FootprintError::InvalidProblem(e.to_string()))?;
        }
        let w = &self.workspace;
        if !(w[0][0] < w[0][1] && w[1][0] < w[1][1]) {
            return bad("workspace bounds are inverted");
        }
        Ok(())
    }
}

/// Augmented-Lagrangian and inner-loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub feasibility_tol: f64,
    /// Tightening applied to every scaled constraint during the solve.
    pub tightening: f64,
    pub initial_penalty: f64,
    pub max_penalty: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 50,
            inner_iterations: 200,
            feasibility_tol: 1e-6,
            tightening: 1e-4,
            initial_penalty: 10.0,
            max_penalty: 1e7,
        }
    }
}

/// Worst violation within one constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// `−∞` when the family has no constraints.
    #[serde(with = "crate::serde_float")]
    pub violation: f64,
    pub step: usize,
}

impl Residual {
    fn none() -> Self {
        Self {
            violation: f64::NEG_INFINITY,
            step: 0,
        }
    }

    fn update(&mut self, v: f64, k: usize) {
        if v > self.violation {
            self.violation = v;
            self.step = k;
        }
    }
}

/// Maximum signed violation per family (negative means slack).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub centroid: Residual,
    pub step_bound: Residual,
    pub height: Residual,
    pub obstacle: Residual,
    pub endpoint: Residual,
    pub workspace: Residual,
}

impl FeasibilityReport {
    pub fn families(&self) -> [(ConstraintFamily, Residual); 6] {
        [
            (ConstraintFamily::Centroid, self.centroid),
            (ConstraintFamily::StepBound, self.step_bound),
            (ConstraintFamily::Height, self.height),
            (ConstraintFamily::Obstacle, self.obstacle),
            (ConstraintFamily::Endpoint, self.endpoint),
            (ConstraintFamily::Workspace, self.workspace),
        ]
    }

    pub fn worst(&self) -> (ConstraintFamily, Residual) {
        self.families()
            .into_iter()
            .max_by(|a, b| a.1.violation.total_cmp(&b.1.violation))
            .expect("six families")
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.families().iter().all(|(_, r)| r.violation <= tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintPlan {
    pub times: Vec<f64>,
    /// `bases[k][i]` is the planar position of base `i` at step `k`.
    pub bases: Vec<Vec<Vector2<f64>>>,
    pub objective: f64,
    pub report: FeasibilityReport,
    pub certified: bool,
    pub outer_iterations: usize,
}

impl FootprintPlan {
    pub fn steps(&self) -> usize {
        self.bases.len() - 1
    }

    /// Base positions at time `t`, linearly interpolated and clamped.
    pub fn at(&self, t: f64) -> Vec<Vector2<f64>> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.bases[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.bases[n - 1].clone();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.bases[k]
            .iter()
            .zip(&self.bases[k + 1])
            .map(|(a, b)| a + (b - a) * s)
            .collect()
    }

    /// Errors unless the plan was certified feasible.
    pub fn require_certified(&self) -> Result<(), FootprintError> {
        if self.certified {
            return Ok(());
        }
        let (family, r) = self.report.worst();
        Err(FootprintError::Infeasible {
            family,
            step: r.step,
            violation: r.violation,
        })
    }

    /// Rows `[k, t, b1x, b1y, …]`.
    pub fn table(&self) -> Vec<Vec<f64>> {
        self.bases
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let mut r = vec![k as f64, self.times[k]];
                for b in row {
                    r.push(b.x);
                    r.push(b.y);
                }
                r
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let n = self.bases[0].len();
        let mut out = String::from("k,t");
        for i in 0..n {
            out.push_str(&format!(",b{}x,b{}y", i + 1, i + 1));
        }
        out.push('\n');
        for row in self.table() {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c == 0 {
                        format!("{}", *v as usize)
                    } else {
                        format!("{v}")
                    }
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Average pairwise base distance.
pub fn spread_of(bases: &[Vector2<f64>]) -> f64 {
    let n = bases.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (bases[i] - bases[j]).norm();
        }
    }
    2.0 * s / (n * (n - 1)) as f64
}

pub fn spread(plan: &FootprintPlan, k: usize) -> f64 {
    spread_of(&plan.bases[k])
}

fn pair_cost(bases: &[Vector2<f64>], p: &FootprintProblem) -> f64 {
    let n = bases.len();
    let mut c = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let e = (bases[i] - bases[j]).norm_squared() - p.spacing[i][j].powi(2);
                c += p.weights[i] * e * e;
            }
        }
    }
    c
}

/// Spacing cost summed over steps `1..=K`.
pub fn objective(bases: &[Vec<Vector2<f64>>], p: &FootprintProblem) -> f64 {
    bases.iter().skip(1).map(|row| pair_cost(row, p)).sum()
}

/// Gradient of [`objective`] with respect to every base position.
pub fn objective_gradient(bases: &[Vec<Vector2<f64>>], p: &FootprintProblem) -> Vec<Vec<Vector2<f64>>> {
    let mut g: Vec<Vec<Vector2<f64>>> = bases.iter().map(|r| vec![Vector2::zeros(); r.len()]).collect();
    for (k, row) in bases.iter().enumerate().skip(1) {
        let n = row.len();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = row[i] - row[j];
                let e = d.norm_squared() - p.spacing[i][j].powi(2);
                let gi = d * (4.0 * p.weights[i] * e);
                g[k][i] += gi;
                g[k][j] -= gi;
            }
        }
    }
    g
}

/// Sampled desired object positions at the plan times.
struct Reference {
    times: Vec<f64>,
    xy: Vec<Vector2<f64>>,
    z: Vec<f64>,
}

impl Reference {
    fn new(traj: &HermiteTrajectory, steps: usize) -> Self {
        let (t0, t1) = (traj.start(), traj.end());
        let times: Vec<f64> = (0..=steps)
            .map(|k| {
                if k == steps {
                    t1
                } else {
                    t0 + (t1 - t0) * k as f64 / steps as f64
                }
            })
            .collect();
        let pos: Vec<_> = times.iter().map(|&t| traj.position(t)).collect();
        Self {
            xy: pos.iter().map(|p| Vector2::new(p.x, p.y)).collect(),
            z: pos.iter().map(|p| p.z).collect(),
            times,
        }
    }

    fn formation(&self, k: usize, p: &FootprintProblem) -> Vec<Vector2<f64>> {
        p.formation.iter().map(|o| self.xy[k] + o).collect()
    }
}

/// One scaled constraint `c ≤ 0` with its sparse gradient, given as
/// `(step, robot, ∂c/∂b)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub value: f64,
    pub grad: Vec<(usize, usize, Vector2<f64>)>,
}

fn spread_gradient(row: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let n = row.len();
    let scale = 2.0 / (n * (n - 1)) as f64;
    let mut g = vec![Vector2::zeros(); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = row[i] - row[j];
            let len = d.norm();
            if len > 0.0 {
                let u = d / len * scale;
                g[i] += u;
                g[j] -= u;
            }
        }
    }
    g
}

/// Scaled constraints on the interior steps plus the step bounds touching the
/// fixed endpoints, in a fixed order.
fn constraints(
    bases: &[Vec<Vector2<f64>>],
    p: &FootprintProblem,
    r: &Reference,
    with_grad: bool,
    out: &mut Vec<Constraint>,
) {
    out.clear();
    let n = p.robots();
    let kk = p.steps;
    let grad = |v: Vec<(usize, usize, Vector2<f64>)>| if with_grad { v } else { Vec::new() };
    for k in 1..kk {
        let row = &bases[k];
        // centroid
        let c = row.iter().fold(Vector2::zeros(), |a, b| a + b) / n as f64;
        let d = c - r.xy[k];
        out.push(Constraint {
            value: (d.norm_squared() - p.centroid_tol) / p.centroid_tol,
            grad: grad(
                (0..n)
                    .map(|i| (k, i, d * (2.0 / (n as f64 * p.centroid_tol))))
                    .collect(),
            ),
        });
        // height band
        let s = spread_of(row);
        let gap = p.height.predict(s) - r.z[k];
        let sg = if with_grad { spread_gradient(row) } else { Vec::new() };
        for sign in [1.0, -1.0] {
            out.push(Constraint {
                value: (sign * gap - p.height.delta) / p.height.delta,
                grad: grad(
                    sg.iter()
                        .enumerate()
                        .map(|(i, g)| (k, i, g * (-sign * p.height.kappa / p.height.delta)))
                        .collect(),
                ),
            });
        }
        // obstacles
        for (i, b) in row.iter().enumerate() {
            for o in &p.obstacles {
                out.push(Constraint {
                    value: (o.margin - o.value(b)) / o.margin,
                    grad: grad(vec![(k, i, -o.gradient(b) / o.margin)]),
                });
            }
        }
    }
    for k in 1..=kk {
        for i in 0..n {
            let d = bases[k][i] - bases[k - 1][i];
            for a in 0..2 {
                for sign in [1.0, -1.0] {
                    let mut e = Vector2::zeros();
                    e[a] = sign / p.step_bound;
                    let mut g = Vec::new();
                    if with_grad {
                        if k < kk {
                            g.push((k, i, e));
                        }
                        if k > 1 {
                            g.push((k - 1, i, -e));
                        }
                    }
                    out.push(Constraint {
                        value: (sign * d[a] - p.step_bound) / p.step_bound,
                        grad: g,
                    });
                }
            }
        }
    }
}

/// The solver's scaled constraints for `bases` along `traj`. Endpoint rows
/// are fixed, so gradients carry no entries for steps 0 and K.
pub fn scaled_constraints(
    bases: &[Vec<Vector2<f64>>],
    p: &FootprintProblem,
    traj: &HermiteTrajectory,
    with_grad: bool,
) -> Vec<Constraint> {
    let r = Reference::new(traj, bases.len() - 1);
    let mut out = Vec::new();
    constraints(bases, p, &r, with_grad, &mut out);
    out
}

/// Independent re-evaluation of every constraint family in natural units.
pub fn check_feasibility(plan: &FootprintPlan, p: &FootprintProblem, traj: &HermiteTrajectory) -> FeasibilityReport {
    let r = Reference::new(traj, plan.steps());
    report_for(&plan.bases, p, &r)
}

fn report_for(bases: &[Vec<Vector2<f64>>], p: &FootprintProblem, r: &Reference) -> FeasibilityReport {
    let n = p.robots();
    let kk = bases.len() - 1;
    let mut rep = FeasibilityReport {
        centroid: Residual::none(),
        step_bound: Residual::none(),
        height: Residual::none(),
        obstacle: Residual::none(),
        endpoint: Residual::none(),
        workspace: Residual::none(),
    };
    for (k, row) in bases.iter().enumerate() {
        let c = row.iter().fold(Vector2::zeros(), |a, b| a + b) / n as f64;
        rep.centroid.update((c - r.xy[k]).norm_squared() - p.centroid_tol, k);
        let gap = p.height.predict(spread_of(row)) - r.z[k];
        rep.height.update(gap.abs() - p.height.delta, k);
        for b in row {
            for o in &p.obstacles {
                rep.obstacle.update(o.margin - o.value(b), k);
            }
            let w = &p.workspace;
            let out = (w[0][0] - b.x).max(b.x - w[0][1]).max(w[1][0] - b.y).max(b.y - w[1][1]);
            rep.workspace.update(out, k);
        }
        if k > 0 {
            for (a, b) in row.iter().zip(&bases[k - 1]) {
                let d = a - b;
                rep.step_bound.update(d.x.abs().max(d.y.abs()) - p.step_bound, k);
            }
        }
    }
    for k in [0, kk] {
        let nominal = r.formation(k, p);
        let e = bases[k]
            .iter()
            .zip(&nominal)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        rep.endpoint.update(e, k);
    }
    rep
}

struct AugmentedLagrangian<'a> {
    p: &'a FootprintProblem,
    r: &'a Reference,
    endpoints: (Vec<Vector2<f64>>, Vec<Vector2<f64>>),
    objective_scale: f64,
    tightening: f64,
    lambda: Vec<f64>,
    mu: f64,
    scratch: Vec<Constraint>,
}

impl AugmentedLagrangian<'_> {
    fn unpack(&self, x: &[f64]) -> Vec<Vec<Vector2<f64>>> {
        let n = self.p.robots();
        let kk = self.p.steps;
        let mut b = Vec::with_capacity(kk + 1);
        b.push(self.endpoints.0.clone());
        for k in 1..kk {
            let off = (k - 1) * 2 * n;
            b.push(
                (0..n)
                    .map(|i| Vector2::new(x[off + 2 * i], x[off + 2 * i + 1]))
                    .collect(),
            );
        }
        b.push(self.endpoints.1.clone());
        b
    }

    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.p.robots();
        let bases = self.unpack(x);
        let mut value = objective(&bases, self.p) / self.objective_scale;
        let og = objective_gradient(&bases, self.p);
        for (k, row) in og.iter().enumerate().take(self.p.steps).skip(1) {
            for (i, g) in row.iter().enumerate() {
                let off = (k - 1) * 2 * n + 2 * i;
                grad[off] = g.x / self.objective_scale;
                grad[off + 1] = g.y / self.objective_scale;
            }
        }
        let mut scratch = std::mem::take(&mut self.scratch);
        constraints(&bases, self.p, self.r, true, &mut scratch);
        for (c, &lam) in scratch.iter().zip(&self.lambda) {
            let shifted = lam + self.mu * (c.value + self.tightening);
            if shifted > 0.0 {
                value += (shifted * shifted - lam * lam) / (2.0 * self.mu);
                for (k, i, g) in &c.grad {
                    let off = (k - 1) * 2 * n + 2 * i;
                    grad[off] += shifted * g.x;
                    grad[off + 1] += shifted * g.y;
                }
            } else {
                value -= lam * lam / (2.0 * self.mu);
            }
        }
        self.scratch = scratch;
        value
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.value_and_gradient(x, &mut g)
    }
}

fn project(x: &mut [f64], ws: &[[f64; 2]; 2]) {
    for (idx, v) in x.iter_mut().enumerate() {
        let a = idx % 2;
        *v = v.clamp(ws[a][0], ws[a][1]);
    }
}

/// Spectral projected gradient with Armijo backtracking; returns the final
/// projected-gradient norm.
fn spg(al: &mut AugmentedLagrangian, x: &mut Vec<f64>, iterations: usize) -> f64 {
    let ws = al.p.workspace;
    let m = x.len();
    let mut g = vec![0.0; m];
    let mut f = al.value_and_gradient(x, &mut g);
    let mut step = 1.0 / g.iter().map(|v| v.abs()).fold(1e-12, f64::max);
    let mut pg_norm = f64::INFINITY;
    for _ in 0..iterations {
        let mut trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        project(&mut trial, &ws);
        let d: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        pg_norm = d.iter().map(|v| v * v).sum::<f64>().sqrt() / step.max(1e-300);
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= -1e-18 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let fc = al.value(&cand);
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let mut gn = vec![0.0; m];
        al.value_and_gradient(&cand, &mut gn);
        let s: Vec<f64> = cand.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            (step * 10.0).min(1e12)
        };
        *x = cand;
        g = gn;
        f = fc;
    }
    pg_norm
}

/// Moves a point out of every super-ellipse along its gradient.
fn push_out(b: Vector2<f64>, obstacles: &[SuperEllipse]) -> Vector2<f64> {
    let mut p = b;
    for _ in 0..4 {
        for o in obstacles {
            let target = o.margin * (1.0 + 1e-3);
            if o.value(&p) >= target {
                continue;
            }
            let mut dir = o.gradient(&p);
            if dir.norm() < 1e-12 {
                dir = Vector2::new(1.0, 0.0);
            }
            let dir = dir.normalize();
            let mut hi = o.axis_extent().norm() * 2.0 + 1.0;
            while o.value(&(p + dir * hi)) < target {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if o.value(&(p + dir * mid)) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            p += dir * hi;
        }
    }
    p
}

/// Solves the footprint problem along a smoothed object trajectory.
pub fn plan_footprints(
    p: &FootprintProblem,
    traj: &HermiteTrajectory,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<FootprintPlan, FootprintError> {
    p.validate()?;
    let n = p.robots();
    let kk = p.steps;
    let r = Reference::new(traj, kk);
    let start = r.formation(0, p);
    let end = r.formation(kk, p);

    // endpoint formations must themselves be admissible
    for (k, row) in [(0, &start), (kk, &end)] {
        let gap = (p.height.predict(spread_of(row)) - r.z[k]).abs() - p.height.delta;
        if gap > cfg.feasibility_tol {
            return Err(FootprintError::InfeasibleEndpoint {
                family: ConstraintFamily::Height,
                step: k,
                violation: gap,
            });
        }
        for b in row {
            for o in &p.obstacles {
                let v = o.margin - o.value(b);
                if v > cfg.feasibility_tol {
                    return Err(FootprintError::InfeasibleEndpoint {
                        family: ConstraintFamily::Obstacle,
                        step: k,
                        violation: v,
                    });
                }
            }
        }
    }

    // rigid formation along the path, pushed out of obstacles
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity((kk - 1) * 2 * n);
    for k in 1..kk {
        for b in r.formation(k, p) {
            let b = push_out(b, &p.obstacles);
            x.push(b.x + 1e-4 * rng.gen_range(-1.0..1.0));
            x.push(b.y + 1e-4 * rng.gen_range(-1.0..1.0));
        }
    }
    project(&mut x, &p.workspace);

    let mut al = AugmentedLagrangian {
        p,
        r: &r,
        endpoints: (start, end),
        objective_scale: 1.0,
        tightening: cfg.tightening,
        lambda: Vec::new(),
        mu: cfg.initial_penalty,
        scratch: Vec::new(),
    };
    let init = al.unpack(&x);
    al.objective_scale = (objective(&init, p) / kk as f64).max(1e-3);
    let mut cs = Vec::new();
    constraints(&init, p, &r, false, &mut cs);
    al.lambda = vec![0.0; cs.len()];

    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut prev_violation = f64::INFINITY;
    let mut outer_done = 0;
    for outer in 0..cfg.outer_iterations {
        outer_done = outer + 1;
        let pg = spg(&mut al, &mut x, cfg.inner_iterations);
        let bases = al.unpack(&x);
        constraints(&bases, p, &r, false, &mut cs);
        let violation = cs
            .iter()
            .map(|c| (c.value + cfg.tightening).max(0.0))
            .fold(0.0, f64::max);
        let raw = report_for(&bases, p, &r);
        let raw_worst = raw.worst().1.violation;
        let obj = objective(&bases, p);
        let better = match &best {
            None => true,
            Some((_, bv, bo)) => {
                let feasible_now = raw_worst <= cfg.feasibility_tol;
                let feasible_best = *bv <= cfg.feasibility_tol;
                (feasible_now && !feasible_best)
                    || (feasible_now == feasible_best && (if feasible_now { obj < *bo } else { raw_worst < *bv }))
            }
        };
        if better {
            best = Some((x.clone(), raw_worst, obj));
        }
        for (lam, c) in al.lambda.iter_mut().zip(&cs) {
            *lam = (*lam + al.mu * (c.value + cfg.tightening)).max(0.0);
        }
        if violation <= 1e-9 && pg <= 1e-6 {
            break;
        }
        if violation > 0.25 * prev_violation {
            al.mu = (al.mu * 10.0).min(cfg.max_penalty);
        }
        prev_violation = violation;
    }

    let (x, _, _) = best.expect("at least one outer iteration");
    let bases = al.unpack(&x);
    let report = report_for(&bases, p, &r);
    Ok(FootprintPlan {
        times: r.times.clone(),
        objective: objective(&bases, p),
        certified: report.feasible(cfg.feasibility_tol),
        report,
        bases,
        outer_iterations: outer_done,
    })
}
