//! Turns a non-smooth timed waypoint sequence into a C¹ object trajectory:
//! natural cubic spline interpolation onto a dense uniform grid, Gaussian
//! convolution, then cubic Hermite encoding with finite-difference velocities.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::stl::SampledSignal;
use crate::waypoint::WaypointTrajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SmoothingError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("knot times must be strictly increasing (index {0})")]
    DuplicateKnotTimes(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("time {t} outside trajectory range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
}

/// Smoothing configuration; `sigma` is in grid-index units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub grid_step: f64,
    pub sigma: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.05,
            sigma: 5.0,
        }
    }
}

/// Samples on a uniform time grid whose endpoints are the waypoint time
/// extremes.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSamples {
    pub times: Vec<f64>,
    pub values: Vec<Vector3<f64>>,
}

impl DenseSamples {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Natural cubic spline through `(t_k, y_k)` for one coordinate.
struct Spline1 {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline1 {
    fn new(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = t[i + 1] - t[i];
                let h1 = t[i + 2] - t[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            // Thomas algorithm; sub-diagonal entry of row i is h_i = t[i+1]-t[i]
            for i in 1..k {
                let lower = t[i + 1] - t[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; k];
            for i in (0..k).rev() {
                let next = if i + 1 < k { upper[i] * sol[i + 1] } else { 0.0 };
                sol[i] = (rhs[i] - next) / diag[i];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        Self {
            t: t.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        let i = self.t.partition_point(|&s| s <= x).clamp(1, n - 1) - 1;
        let h = self.t[i + 1] - self.t[i];
        let dx = x - self.t[i];
        let slope = (self.y[i + 1] - self.y[i]) / h - h * (2.0 * self.m[i] + self.m[i + 1]) / 6.0;
        self.y[i] + dx * (slope + dx * (self.m[i] / 2.0 + dx * (self.m[i + 1] - self.m[i]) / (6.0 * h)))
    }
}

/// Uniform grid over `[t0, t1]` with spacing at most `step`, hitting both ends.
fn uniform_grid(t0: f64, t1: f64, step: f64) -> Vec<f64> {
    let k = ((t1 - t0) / step - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / k as f64;
    (0..=k).map(|j| if j == k { t1 } else { t0 + j as f64 * h }).collect()
}

/// Per-coordinate natural cubic spline through the waypoints, sampled on a
/// dense uniform grid.
pub fn cubic_spline_interpolate(w: &WaypointTrajectory, grid_step: f64) -> Result<DenseSamples, SmoothingError> {
    let knots = w.knots();
    if knots.len() < 4 {
        return Err(SmoothingError::TooFewPoints {
            needed: 4,
            got: knots.len(),
        });
    }
    if !(grid_step > 0.0) {
        return Err(SmoothingError::InvalidParameter("grid_step must be positive".into()));
    }
    let t: Vec<f64> = knots.iter().map(|k| k.t).collect();
    if let Some(i) = t.windows(2).position(|p| p[1] <= p[0]) {
        return Err(SmoothingError::DuplicateKnotTimes(i + 1));
    }
    let splines: Vec<Spline1> = (0..3)
        .map(|c| {
            let y: Vec<f64> = knots.iter().map(|k| k.x[c]).collect();
            Spline1::new(&t, &y)
        })
        .collect();
    let times = uniform_grid(t[0], t[t.len() - 1], grid_step);
    let values = times
        .iter()
        .map(|&s| Vector3::new(splines[0].eval(s), splines[1].eval(s), splines[2].eval(s)))
        .collect();
    Ok(DenseSamples { times, values })
}

/// Truncated (±4σ) Gaussian kernel table `w_n = exp(−n²/2σ²)`, unnormalized.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).floor() as i64;
    (-radius..=radius)
        .map(|n| (-(n * n) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Normalized weights applied at output index `j` of a length-`len` sequence.
/// Weights falling off either end are dropped and the rest renormalized.
pub fn kernel_weights_at(kernel: &[f64], j: usize, len: usize) -> Vec<(usize, f64)> {
    let radius = (kernel.len() / 2) as i64;
    let mut out = Vec::with_capacity(kernel.len());
    let mut sum = 0.0;
    for (idx, w) in kernel.iter().enumerate() {
        let src = j as i64 + idx as i64 - radius;
        if src >= 0 && (src as usize) < len {
            out.push((src as usize, *w));
            sum += w;
        }
    }
    for (_, w) in &mut out {
        *w /= sum;
    }
    out
}

/// Discrete Gaussian convolution per coordinate with boundary renormalization.
///
/// A `sigma` under a quarter grid step truncates the kernel to a single tap,
/// which is the identity.
pub fn gaussian_smooth(d: &DenseSamples, sigma: f64) -> Result<DenseSamples, SmoothingError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SmoothingError::InvalidParameter("sigma must be positive".into()));
    }
    let kernel = gaussian_kernel(sigma);
    let n = d.values.len();
    let values = (0..n)
        .map(|j| {
            // accumulate offsets from the centre sample so constant input
            // passes through bit-identically
            let centre = d.values[j];
            let mut delta = Vector3::zeros();
            for (src, w) in kernel_weights_at(&kernel, j, n) {
                delta += (d.values[src] - centre) * w;
            }
            centre + delta
        })
        .collect();
    Ok(DenseSamples {
        times: d.times.clone(),
        values,
    })
}

/// Cubic Hermite basis `h₀..h₃` at `s ∈ [0, 1]`.
pub fn hermite_basis(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        2.0 * s3 - 3.0 * s2 + 1.0,
        -2.0 * s3 + 3.0 * s2,
        s3 - 2.0 * s2 + s,
        s3 - s2,
    ]
}

fn hermite_basis_derivative(s: f64) -> [f64; 4] {
    let s2 = s * s;
    [
        6.0 * s2 - 6.0 * s,
        -6.0 * s2 + 6.0 * s,
        3.0 * s2 - 4.0 * s + 1.0,
        3.0 * s2 - 2.0 * s,
    ]
}

/// Piecewise cubic Hermite curve in R³.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteTrajectory {
    times: Vec<f64>,
    positions: Vec<Vector3<f64>>,
    velocities: Vec<Vector3<f64>>,
}

/// Knot velocities by central differences, one-sided at the ends.
pub fn build_hermite(d: &DenseSamples) -> Result<HermiteTrajectory, SmoothingError> {
    let n = d.times.len();
    if n < 3 {
        return Err(SmoothingError::TooFewPoints { needed: 3, got: n });
    }
    if let Some(i) = d.times.windows(2).position(|p| p[1] <= p[0]) {
        return Err(SmoothingError::DuplicateKnotTimes(i + 1));
    }
    let x = &d.values;
    let t = &d.times;
    let velocities = (0..n)
        .map(|j| {
            let (a, b) = if j == 0 {
                (0, 1)
            } else if j == n - 1 {
                (n - 2, n - 1)
            } else {
                (j - 1, j + 1)
            };
            (x[b] - x[a]) / (t[b] - t[a])
        })
        .collect();
    Ok(HermiteTrajectory {
        times: d.times.clone(),
        positions: d.values.clone(),
        velocities,
    })
}

impl HermiteTrajectory {
    pub fn from_parts(
        times: Vec<f64>,
        positions: Vec<Vector3<f64>>,
        velocities: Vec<Vector3<f64>>,
    ) -> Result<Self, SmoothingError> {
        if times.len() < 2 || positions.len() != times.len() || velocities.len() != times.len() {
            return Err(SmoothingError::TooFewPoints {
                needed: 2,
                got: times.len().min(positions.len()).min(velocities.len()),
            });
        }
        if let Some(i) = times.windows(2).position(|p| p[1] <= p[0]) {
            return Err(SmoothingError::DuplicateKnotTimes(i + 1));
        }
        Ok(Self {
            times,
            positions,
            velocities,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vector3<f64>] {
        &self.velocities
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Position and velocity at `t`; no extrapolation outside the knot range.
    pub fn eval(&self, t: f64) -> Result<(Vector3<f64>, Vector3<f64>), SmoothingError> {
        let n = self.times.len();
        if !(t >= self.times[0] && t <= self.times[n - 1]) {
            return Err(SmoothingError::OutOfRange {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        if t == self.times[n - 1] {
            return Ok((self.positions[n - 1], self.velocities[n - 1]));
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let dt = self.times[j + 1] - self.times[j];
        let s = (t - self.times[j]) / dt;
        let [_, h1, h2, h3] = hermite_basis(s);
        let (x0, x1) = (self.positions[j], self.positions[j + 1]);
        let (v0, v1) = (self.velocities[j], self.velocities[j + 1]);
        // h₀ = 1 − h₁, written so that knots and constant curves are reproduced exactly
        let pos = x0 + (x1 - x0) * h1 + v0 * (h2 * dt) + v1 * (h3 * dt);
        let [d0, d1, d2, d3] = hermite_basis_derivative(s);
        let vel = (x0 * d0 + x1 * d1) / dt + v0 * d2 + v1 * d3;
        Ok((pos, vel))
    }

    /// Evaluation with `t` clamped into the knot range.
    pub fn eval_clamped(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let t = t.clamp(self.start(), self.end());
        self.eval(t).expect("clamped time is in range")
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        self.eval_clamped(t).0
    }

    /// Uniform resampling for monitoring.
    pub fn to_signal(&self, step: f64) -> SampledSignal {
        SampledSignal::from_fn(self.start(), self.end(), step, |t| self.position(t))
            .expect("hermite range is non-empty")
    }

    /// Table rows `[t, x, y, z, vx, vy, vz]`.
    pub fn table(&self) -> Vec<[f64; 7]> {
        (0..self.times.len())
            .map(|j| {
                let p = self.positions[j];
                let v = self.velocities[j];
                [self.times[j], p.x, p.y, p.z, v.x, v.y, v.z]
            })
            .collect()
    }
}

/// `(position, velocity)` at `t`.
pub fn eval_hermite(h: &HermiteTrajectory, t: f64) -> Result<(Vector3<f64>, Vector3<f64>), SmoothingError> {
    h.eval(t)
}

/// Full smoothing chain with the given configuration.
pub fn smooth_waypoints(w: &WaypointTrajectory, cfg: &SmoothingConfig) -> Result<HermiteTrajectory, SmoothingError> {
    let dense = cubic_spline_interpolate(w, cfg.grid_step)?;
    let smooth = gaussian_smooth(&dense, cfg.sigma)?;
    build_hermite(&smooth)
}
