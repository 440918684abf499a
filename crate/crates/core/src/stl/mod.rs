//! Signal temporal logic over object-position signals: formulas, a textual
//! grammar, and Boolean / robustness monitors.

mod formula;
mod monitor;
mod parser;
mod signal;

pub use formula::{Formula, Interval, Predicate};
pub use monitor::{eval_boolean, eval_robustness, predicate_value, DistanceField, Environment};
pub use parser::parse_formula;
pub use signal::SampledSignal;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StlError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("invalid interval [{lo}, {hi}]: need 0 <= a <= b < inf")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("evaluation at t = {t} with horizon {horizon} exceeds signal range [{start}, {end}]")]
    OutOfRange { t: f64, horizon: f64, start: f64, end: f64 },
    #[error("unknown obstacle set `{0}`")]
    UnknownField(String),
}
