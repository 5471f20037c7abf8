use serde::{Deserialize, Serialize};

use super::state_space::dt_matches;
use super::LtiError;

/// Uniformly sampled real signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalTrace {
    dt: f64,
    samples: Vec<f64>,
    label: String,
}

impl SignalTrace {
    pub fn new(dt: f64, samples: Vec<f64>, label: impl Into<String>) -> Result<Self, LtiError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(LtiError::InvalidTrace(format!("dt must be positive and finite, got {dt}")));
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(LtiError::InvalidTrace(format!("non-finite sample at index {k}")));
        }
        Ok(SignalTrace {
            dt,
            samples,
            label: label.into(),
        })
    }

    pub fn zeros(dt: f64, len: usize, label: impl Into<String>) -> Self {
        assert!(dt > 0.0 && dt.is_finite());
        SignalTrace {
            dt,
            samples: vec![0.0; len],
            label: label.into(),
        }
    }

    /// Sample `f(t)` at `t = k dt` for `k in 0..len`.
    pub fn from_fn(dt: f64, len: usize, label: impl Into<String>, f: impl Fn(f64) -> f64) -> Result<Self, LtiError> {
        Self::new(dt, (0..len).map(|k| f(k as f64 * dt)).collect(), label)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn check_compatible(&self, other: &SignalTrace) -> Result<(), LtiError> {
        if self.len() != other.len() || !dt_matches(self.dt, other.dt) {
            return Err(LtiError::DimensionMismatch(format!(
                "traces '{}' ({} samples, dt {}) and '{}' ({} samples, dt {}) differ",
                self.label,
                self.len(),
                self.dt,
                other.label,
                other.len(),
                other.dt
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &SignalTrace, f: impl Fn(f64, f64) -> f64) -> Result<SignalTrace, LtiError> {
        self.check_compatible(other)?;
        SignalTrace::new(
            self.dt,
            self.samples.iter().zip(&other.samples).map(|(&a, &b)| f(a, b)).collect(),
            self.label.clone(),
        )
    }

    pub fn add(&self, other: &SignalTrace) -> Result<SignalTrace, LtiError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SignalTrace) -> Result<SignalTrace, LtiError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> SignalTrace {
        SignalTrace {
            dt: self.dt,
            samples: self.samples.iter().map(|v| v * k).collect(),
            label: self.label.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<SignalTrace, LtiError> {
        SignalTrace::new(self.dt, self.samples.iter().map(|&v| f(v)).collect(), self.label.clone())
    }

    /// Euclidean norm of the samples.
    pub fn l2_norm(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Samples from index `start` on, as a new trace.
    pub fn tail(&self, start: usize) -> SignalTrace {
        SignalTrace {
            dt: self.dt,
            samples: self.samples[start.min(self.samples.len())..].to_vec(),
            label: self.label.clone(),
        }
    }

    /// Second-order central difference, one-sided at the ends.
    pub fn derivative(&self) -> SignalTrace {
        let n = self.samples.len();
        let x = &self.samples;
        let h = self.dt;
        let mut d = vec![0.0; n];
        if n >= 3 {
            d[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * h);
            for k in 1..n - 1 {
                d[k] = (x[k + 1] - x[k - 1]) / (2.0 * h);
            }
            d[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * h);
        } else if n == 2 {
            d[0] = (x[1] - x[0]) / h;
            d[1] = d[0];
        }
        SignalTrace {
            dt: self.dt,
            samples: d,
            label: format!("d/dt {}", self.label),
        }
    }
}

/// `||a - b|| / ||b||`.
pub fn relative_l2_error(a: &SignalTrace, b: &SignalTrace) -> Result<f64, LtiError> {
    let diff = a.sub(b)?;
    Ok(diff.l2_norm() / b.l2_norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(SignalTrace::new(0.0, vec![1.0], "x").is_err());
        assert!(SignalTrace::new(1e-3, vec![1.0, f64::NAN], "x").is_err());
    }

    #[test]
    fn arithmetic_requires_matching_shape() {
        let a = SignalTrace::zeros(1e-3, 5, "a");
        let b = SignalTrace::zeros(1e-3, 6, "b");
        let c = SignalTrace::zeros(2e-3, 5, "c");
        assert!(a.add(&b).is_err());
        assert!(a.sub(&c).is_err());
        assert!(a.add(&a).is_ok());
    }

    #[test]
    fn central_difference_of_quadratic_is_exact() {
        let t = SignalTrace::from_fn(0.1, 20, "q", |t| 3.0 * t * t - t).unwrap();
        let d = t.derivative();
        for (k, &v) in d.samples().iter().enumerate() {
            let tk = k as f64 * 0.1;
            assert!((v - (6.0 * tk - 1.0)).abs() < 1e-10);
        }
    }
}
