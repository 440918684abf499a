use nalgebra::Vector3;

use super::StlError;

/// Time-stamped R³ samples, interpreted piecewise-linearly between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    times: Vec<f64>,
    values: Vec<Vector3<f64>>,
}

impl SampledSignal {
    pub fn new(times: Vec<f64>, values: Vec<Vector3<f64>>) -> Result<Self, StlError> {
        if times.len() != values.len() {
            return Err(StlError::InvalidSignal(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(StlError::InvalidSignal("need at least two samples".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || values.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(StlError::InvalidSignal("non-finite sample".into()));
        }
        if let Some(w) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(StlError::InvalidSignal(format!(
                "times not strictly increasing at index {}",
                w + 1
            )));
        }
        Ok(Self { times, values })
    }

    /// Samples `f` on a uniform grid over `[t0, t1]` with the given step; the
    /// last sample lands exactly on `t1`.
    pub fn from_fn(t0: f64, t1: f64, step: f64, mut f: impl FnMut(f64) -> Vector3<f64>) -> Result<Self, StlError> {
        if !(step > 0.0) || !(t1 > t0) {
            return Err(StlError::InvalidSignal("empty sampling range".into()));
        }
        let n = ((t1 - t0) / step - 1e-9).ceil().max(1.0) as usize;
        let times: Vec<f64> = (0..=n)
            .map(|i| if i == n { t1 } else { t0 + i as f64 * step })
            .collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vector3<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Linear interpolation; `t` is clamped to the sampled range.
    pub fn at(&self, t: f64) -> Vector3<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let hi = self.times.partition_point(|&s| s <= t);
        let lo = hi - 1;
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let s = (t - t0) / (t1 - t0);
        self.values[lo] + (self.values[hi] - self.values[lo]) * s
    }

    /// Piecewise-linear resampling on a uniform grid of the given step.
    pub fn resample(&self, step: f64) -> Result<Self, StlError> {
        Self::from_fn(self.start(), self.end(), step, |t| self.at(t))
    }
}
