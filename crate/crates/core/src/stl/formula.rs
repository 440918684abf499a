use std::fmt;

use nalgebra::Vector3;

use super::StlError;

/// Closed time window `[lo, hi]` in seconds, relative to the evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, StlError> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo > hi {
            return Err(StlError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }
}

/// Atomic predicate over the object position. Each variant defines a predicate
/// function `p(x)`; the predicate holds iff `p(x) >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    /// `‖x − center‖ ≤ radius`, with `p = radius − ‖x − center‖`.
    Ball { center: Vector3<f64>, radius: f64 },
    /// `‖x − center‖ ≥ radius`, with `p = ‖x − center‖ − radius`.
    Outside { center: Vector3<f64>, radius: f64 },
    /// Separation from a named obstacle set: `p = dist(x, set) − margin`.
    Avoid { field: String, margin: f64 },
}

impl Predicate {
    pub fn ball(center: [f64; 3], radius: f64) -> Self {
        Predicate::Ball {
            center: Vector3::from(center),
            radius,
        }
    }

    pub fn outside(center: [f64; 3], radius: f64) -> Self {
        Predicate::Outside {
            center: Vector3::from(center),
            radius,
        }
    }

    pub fn avoid(field: impl Into<String>, margin: f64) -> Self {
        Predicate::Avoid {
            field: field.into(),
            margin,
        }
    }
}

/// STL abstract syntax tree.
///
/// `Always` and `Eventually` are kept as their own nodes for readability and
/// for fragment extraction; the monitor gives them exactly the semantics of
/// `¬F¬φ` and `⊤ U φ` respectively.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Pred(Predicate),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
    Always(Interval, Box<Formula>),
    Eventually(Interval, Box<Formula>),
}

impl Formula {
    pub fn pred(p: Predicate) -> Self {
        Formula::Pred(p)
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    /// Conjunction; a single operand is returned as is and an empty list is `true`.
    pub fn and(mut items: Vec<Formula>) -> Self {
        match items.len() {
            0 => Formula::True,
            1 => items.pop().unwrap(),
            _ => Formula::And(items),
        }
    }

    pub fn or(items: Vec<Formula>) -> Self {
        Formula::not(Formula::and(items.into_iter().map(Formula::not).collect()))
    }

    pub fn until(iv: Interval, lhs: Formula, rhs: Formula) -> Self {
        Formula::Until(iv, Box::new(lhs), Box::new(rhs))
    }

    pub fn always(iv: Interval, f: Formula) -> Self {
        Formula::Always(iv, Box::new(f))
    }

    pub fn eventually(iv: Interval, f: Formula) -> Self {
        Formula::Eventually(iv, Box::new(f))
    }

    /// Length of signal needed beyond the evaluation time: the nesting sum of
    /// interval upper bounds.
    pub fn horizon(&self) -> f64 {
        match self {
            Formula::True | Formula::Pred(_) => 0.0,
            Formula::Not(f) => f.horizon(),
            Formula::And(items) => items.iter().map(Formula::horizon).fold(0.0, f64::max),
            Formula::Until(iv, a, b) => iv.hi + a.horizon().max(b.horizon()),
            Formula::Always(iv, f) | Formula::Eventually(iv, f) => iv.hi + f.horizon(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::Pred(_) => 0,
            Formula::Not(f) | Formula::Always(_, f) | Formula::Eventually(_, f) => 1 + f.depth(),
            Formula::And(items) => 1 + items.iter().map(Formula::depth).max().unwrap_or(0),
            Formula::Until(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Names of all obstacle sets referenced by `avoid` predicates.
    pub fn fields(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_fields(&mut out);
        out
    }

    fn collect_fields<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Formula::True => {}
            Formula::Pred(Predicate::Avoid { field, .. }) => {
                if !out.contains(&field.as_str()) {
                    out.push(field.as_str());
                }
            }
            Formula::Pred(_) => {}
            Formula::Not(f) | Formula::Always(_, f) | Formula::Eventually(_, f) => f.collect_fields(out),
            Formula::And(items) => items.iter().for_each(|f| f.collect_fields(out)),
            Formula::Until(_, a, b) => {
                a.collect_fields(out);
                b.collect_fields(out);
            }
        }
    }

    /// Short name of the node kind, used in diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Formula::True => "true",
            Formula::Pred(Predicate::Ball { .. }) => "ball",
            Formula::Pred(Predicate::Outside { .. }) => "outside",
            Formula::Pred(Predicate::Avoid { .. }) => "avoid",
            Formula::Not(_) => "not",
            Formula::And(_) => "and",
            Formula::Until(..) => "until",
            Formula::Always(..) => "always",
            Formula::Eventually(..) => "eventually",
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Ball { center, radius } => {
                write!(f, "ball({},{},{}; {})", center.x, center.y, center.z, radius)
            }
            Predicate::Outside { center, radius } => {
                write!(f, "outside({},{},{}; {})", center.x, center.y, center.z, radius)
            }
            Predicate::Avoid { field, margin } => write!(f, "avoid({}; {})", field, margin),
        }
    }
}

// Printed form is fully parenthesized around operands so that parsing it back
// yields the same tree.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "true"),
            Formula::Pred(p) => write!(f, "{p}"),
            Formula::Not(inner) => write!(f, "!({inner})"),
            Formula::And(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    write!(f, "({item})")?;
                }
                Ok(())
            }
            Formula::Until(iv, a, b) => write!(f, "U{iv}({a}, {b})"),
            Formula::Always(iv, inner) => write!(f, "G{iv}({inner})"),
            Formula::Eventually(iv, inner) => write!(f, "F{iv}({inner})"),
        }
    }
}
