//! Boolean and quantitative (space-robustness) evaluation of formulas over
//! sampled signals.
//!
//! Inter-sample behaviour follows the signal's piecewise-linear interpolation.
//! Infima and suprema over a time window `[t+a, t+b]` are taken over the two
//! window endpoints (interpolated) plus every sample strictly inside the
//! window. Nonlinear predicates can peak between samples, so the sampling
//! step is the accuracy knob; resample the signal for finer answers.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Vector3;

use super::formula::{Formula, Predicate};
use super::signal::SampledSignal;
use super::StlError;

/// Signed distance from a point to a named obstacle set.
pub trait DistanceField: Send + Sync {
    fn distance(&self, p: &Vector3<f64>) -> f64;
}

/// Resolves the obstacle-set names used by `avoid` predicates.
#[derive(Clone, Default)]
pub struct Environment {
    fields: BTreeMap<String, Arc<dyn DistanceField>>,
}

impl Environment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_field(mut self, name: impl Into<String>, field: Arc<dyn DistanceField>) -> Self {
        self.fields.insert(name.into(), field);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, field: Arc<dyn DistanceField>) {
        self.fields.insert(name.into(), field);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn DistanceField>> {
        self.fields.get(name)
    }
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("fields", &self.fields.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Value of a predicate function `p(x)` at a point.
pub fn predicate_value(p: &Predicate, x: &Vector3<f64>, env: &Environment) -> Result<f64, StlError> {
    Ok(match p {
        Predicate::Ball { center, radius } => radius - (x - center).norm(),
        Predicate::Outside { center, radius } => (x - center).norm() - radius,
        Predicate::Avoid { field, margin } => {
            let f = env.get(field).ok_or_else(|| StlError::UnknownField(field.clone()))?;
            f.distance(x) - margin
        }
    })
}

/// Lattice operations shared by the Boolean and quantitative semantics.
trait Semantics {
    type V: Copy;
    fn top() -> Self::V;
    fn atom(p: f64) -> Self::V;
    fn neg(v: Self::V) -> Self::V;
    fn meet(a: Self::V, b: Self::V) -> Self::V;
    fn join(a: Self::V, b: Self::V) -> Self::V;
}

struct Qualitative;
struct Quantitative;

impl Semantics for Qualitative {
    type V = bool;
    fn top() -> bool {
        true
    }
    fn atom(p: f64) -> bool {
        p >= 0.0
    }
    fn neg(v: bool) -> bool {
        !v
    }
    fn meet(a: bool, b: bool) -> bool {
        a && b
    }
    fn join(a: bool, b: bool) -> bool {
        a || b
    }
}

impl Semantics for Quantitative {
    type V = f64;
    fn top() -> f64 {
        f64::INFINITY
    }
    fn atom(p: f64) -> f64 {
        p
    }
    fn neg(v: f64) -> f64 {
        -v
    }
    fn meet(a: f64, b: f64) -> f64 {
        a.min(b)
    }
    fn join(a: f64, b: f64) -> f64 {
        a.max(b)
    }
}

/// Relative tolerance for snapping a query time onto a sample time.
const SNAP: f64 = 1e-9;

// Flattened formula for memoized evaluation.
enum Node<'f> {
    True,
    Pred(&'f Predicate),
    Not(usize),
    And(Vec<usize>),
    Until(f64, f64, usize, usize),
    Always(f64, f64, usize),
    Eventually(f64, f64, usize),
}

fn flatten<'f>(f: &'f Formula, nodes: &mut Vec<Node<'f>>) -> usize {
    let node = match f {
        Formula::True => Node::True,
        Formula::Pred(p) => Node::Pred(p),
        Formula::Not(a) => Node::Not(flatten(a, nodes)),
        Formula::And(items) => Node::And(items.iter().map(|g| flatten(g, nodes)).collect()),
        Formula::Until(iv, a, b) => {
            let ia = flatten(a, nodes);
            let ib = flatten(b, nodes);
            Node::Until(iv.lo(), iv.hi(), ia, ib)
        }
        Formula::Always(iv, a) => Node::Always(iv.lo(), iv.hi(), flatten(a, nodes)),
        Formula::Eventually(iv, a) => Node::Eventually(iv.lo(), iv.hi(), flatten(a, nodes)),
    };
    nodes.push(node);
    nodes.len() - 1
}

struct Evaluator<'a, S: Semantics> {
    signal: &'a SampledSignal,
    env: &'a Environment,
    nodes: Vec<Node<'a>>,
    at_sample: Vec<Vec<Option<S::V>>>,
    off_sample: Vec<HashMap<u64, S::V>>,
}

impl<'a, S: Semantics> Evaluator<'a, S> {
    fn new(formula: &'a Formula, signal: &'a SampledSignal, env: &'a Environment) -> (Self, usize) {
        let mut nodes = Vec::new();
        let root = flatten(formula, &mut nodes);
        let n = nodes.len();
        let ev = Self {
            signal,
            env,
            nodes,
            at_sample: vec![vec![None; signal.len()]; n],
            off_sample: (0..n).map(|_| HashMap::new()).collect(),
        };
        (ev, root)
    }

    fn snap(&self, t: f64) -> Option<usize> {
        let times = self.signal.times();
        let tol = SNAP * t.abs().max(1.0);
        let i = times.partition_point(|&s| s < t - tol);
        (i < times.len() && (times[i] - t).abs() <= tol).then_some(i)
    }

    /// Indices of samples strictly inside `(lo, hi)`, excluding those that snap
    /// onto either endpoint.
    fn interior(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let times = self.signal.times();
        let tl = SNAP * lo.abs().max(1.0);
        let th = SNAP * hi.abs().max(1.0);
        let a = times.partition_point(|&s| s <= lo + tl);
        let b = times.partition_point(|&s| s < hi - th);
        a..b.max(a)
    }

    fn value(&mut self, node: usize, t: f64) -> S::V {
        if let Some(i) = self.snap(t) {
            if let Some(v) = self.at_sample[node][i] {
                return v;
            }
            let v = self.compute(node, self.signal.times()[i]);
            self.at_sample[node][i] = Some(v);
            return v;
        }
        let key = t.to_bits();
        if let Some(&v) = self.off_sample[node].get(&key) {
            return v;
        }
        let v = self.compute(node, t);
        self.off_sample[node].insert(key, v);
        v
    }

    fn sample_value(&mut self, node: usize, i: usize) -> S::V {
        if let Some(v) = self.at_sample[node][i] {
            return v;
        }
        let v = self.compute(node, self.signal.times()[i]);
        self.at_sample[node][i] = Some(v);
        v
    }

    fn compute(&mut self, node: usize, t: f64) -> S::V {
        match self.nodes[node] {
            Node::True => S::top(),
            Node::Pred(p) => {
                let x = self.signal.at(t);
                // fields were validated before evaluation started
                S::atom(predicate_value(p, &x, self.env).unwrap_or(f64::NAN))
            }
            Node::Not(a) => S::neg(self.value(a, t)),
            Node::And(ref items) => {
                let items = items.clone();
                let mut acc = S::top();
                for c in items {
                    acc = S::meet(acc, self.value(c, t));
                }
                acc
            }
            Node::Always(lo, hi, a) => self.window(a, t + lo, t + hi, S::meet),
            Node::Eventually(lo, hi, a) => self.window(a, t + lo, t + hi, S::join),
            Node::Until(lo, hi, a, b) => self.until(a, b, t, t + lo, t + hi),
        }
    }

    fn window(&mut self, child: usize, lo: f64, hi: f64, op: fn(S::V, S::V) -> S::V) -> S::V {
        let mut acc = op(self.value(child, lo), self.value(child, hi));
        for i in self.interior(lo, hi) {
            acc = op(acc, self.sample_value(child, i));
        }
        acc
    }

    fn until(&mut self, lhs: usize, rhs: usize, t: f64, lo: f64, hi: f64) -> S::V {
        // infimum of the left operand over [t, lo]
        let mut inf = S::meet(self.value(lhs, t), self.value(lhs, lo));
        for i in self.interior(t, lo) {
            inf = S::meet(inf, self.sample_value(lhs, i));
        }
        let mut best = S::neg(S::top());
        let mut visit = |ev: &mut Self, t1: Option<f64>, idx: Option<usize>, inf: &mut S::V| {
            let (l, r) = match (t1, idx) {
                (Some(t1), _) => (ev.value(lhs, t1), ev.value(rhs, t1)),
                (None, Some(i)) => (ev.sample_value(lhs, i), ev.sample_value(rhs, i)),
                _ => unreachable!(),
            };
            *inf = S::meet(*inf, l);
            best = S::join(best, S::meet(r, *inf));
        };
        visit(self, Some(lo), None, &mut inf);
        for i in self.interior(lo, hi) {
            visit(self, None, Some(i), &mut inf);
        }
        visit(self, Some(hi), None, &mut inf);
        best
    }
}

fn check_range(formula: &Formula, signal: &SampledSignal, t: f64, env: &Environment) -> Result<(), StlError> {
    for name in formula.fields() {
        if env.get(name).is_none() {
            return Err(StlError::UnknownField(name.to_string()));
        }
    }
    let horizon = formula.horizon();
    let tol = SNAP * signal.end().abs().max(1.0);
    if !t.is_finite() || t < signal.start() - tol || t + horizon > signal.end() + tol {
        return Err(StlError::OutOfRange {
            t,
            horizon,
            start: signal.start(),
            end: signal.end(),
        });
    }
    Ok(())
}

/// Boolean satisfaction `(x, t) ⊨ φ`.
pub fn eval_boolean(formula: &Formula, signal: &SampledSignal, t: f64, env: &Environment) -> Result<bool, StlError> {
    check_range(formula, signal, t, env)?;
    let (mut ev, root) = Evaluator::<Qualitative>::new(formula, signal, env);
    Ok(ev.value(root, t))
}

/// Space robustness of `φ` at time `t`; positive values certify satisfaction.
pub fn eval_robustness(formula: &Formula, signal: &SampledSignal, t: f64, env: &Environment) -> Result<f64, StlError> {
    check_range(formula, signal, t, env)?;
    let (mut ev, root) = Evaluator::<Quantitative>::new(formula, signal, env);
    Ok(ev.value(root, t))
}

impl Formula {
    /// Boolean satisfaction without any named obstacle sets.
    pub fn eval_boolean(&self, signal: &SampledSignal, t: f64) -> Result<bool, StlError> {
        eval_boolean(self, signal, t, &Environment::default())
    }

    /// Robustness without any named obstacle sets.
    pub fn eval_robustness(&self, signal: &SampledSignal, t: f64) -> Result<f64, StlError> {
        eval_robustness(self, signal, t, &Environment::default())
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_formula;
    use super::*;

    fn constant(x: [f64; 3], t1: f64) -> SampledSignal {
        SampledSignal::from_fn(0.0, t1, 0.1, |_| Vector3::from(x)).unwrap()
    }

    #[test]
    fn always_inside_ball_on_constant_signal() {
        let f = parse_formula("G[0,1](ball(0,0,0; 2))").unwrap();
        let s = constant([1.0, 0.0, 0.0], 2.0);
        assert!(f.eval_boolean(&s, 0.0).unwrap());
        assert_eq!(f.eval_robustness(&s, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn predicate_robustness_is_radius_minus_distance() {
        let f = parse_formula("ball(0,0,0; 2)").unwrap();
        let s = constant([1.0, 0.0, 0.0], 1.0);
        assert_eq!(f.eval_robustness(&s, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn eventually_never_reached() {
        let f = parse_formula("F[2,3](ball(0,0,0; 0.1))").unwrap();
        let s = constant([1.0, 1.0, 1.0], 3.0);
        assert!(!f.eval_boolean(&s, 0.0).unwrap());
        assert!(f.eval_robustness(&s, 0.0).unwrap() < 0.0);
    }

    #[test]
    fn until_reaches_target_at_one_second() {
        // x(t) = (3t, 0, 0): the left operand holds up to t = 2/3 only, so the
        // target at t = 1 is reached after the left operand fails.
        let f = parse_formula("ball(0,0,0; 2) U[0,1] ball(3,0,0; 0.1)").unwrap();
        let s = SampledSignal::from_fn(0.0, 2.0, 0.001, |t| Vector3::new(3.0 * t, 0.0, 0.0)).unwrap();
        assert!(!f.eval_boolean(&s, 0.0).unwrap());
        // widening the left ball to cover the whole approach makes it hold
        let g = parse_formula("ball(0,0,0; 3.5) U[0,1] ball(3,0,0; 0.1)").unwrap();
        assert!(g.eval_boolean(&s, 0.0).unwrap());
        let rho = g.eval_robustness(&s, 0.0).unwrap();
        assert!((rho - 0.1).abs() < 1e-9, "{rho}");
    }

    #[test]
    fn horizon_beyond_signal_is_an_error() {
        let f = parse_formula("G[0,5](true)").unwrap();
        let s = constant([0.0; 3], 2.0);
        assert!(matches!(f.eval_boolean(&s, 0.0), Err(StlError::OutOfRange { .. })));
        assert!(matches!(f.eval_robustness(&s, -1.0), Err(StlError::OutOfRange { .. })));
    }

    #[test]
    fn unknown_field_is_an_error() {
        let f = parse_formula("avoid(walls; 0.5)").unwrap();
        let s = constant([0.0; 3], 1.0);
        assert!(matches!(f.eval_boolean(&s, 0.0), Err(StlError::UnknownField(_))));
    }

    struct Plane;
    impl DistanceField for Plane {
        fn distance(&self, p: &Vector3<f64>) -> f64 {
            p.x
        }
    }

    #[test]
    fn avoid_uses_named_field() {
        let f = parse_formula("G[0,1](avoid(wall; 0.5))").unwrap();
        let env = Environment::new().with_field("wall", Arc::new(Plane));
        let s = SampledSignal::from_fn(0.0, 1.0, 0.1, |t| Vector3::new(1.0 + t, 0.0, 0.0)).unwrap();
        let rho = eval_robustness(&f, &s, 0.0, &env).unwrap();
        assert!((rho - 0.5).abs() < 1e-12);
    }

    #[test]
    fn endpoint_interpolation_between_samples() {
        // window endpoint 0.25 falls between samples at 0.2 and 0.3
        let f = parse_formula("F[0.25,0.25](ball(0,0,0; 1))").unwrap();
        let s = SampledSignal::new(
            vec![0.0, 0.2, 0.3, 1.0],
            vec![
                Vector3::new(5.0, 0.0, 0.0),
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(0.0, 0.0, 0.0),
            ],
        )
        .unwrap();
        let rho = f.eval_robustness(&s, 0.0).unwrap();
        assert!((rho - 0.0).abs() < 1e-12, "{rho}");
    }
}
