//! Univariate Gaussian kernel density estimation.

use std::f64::consts::PI;

use crate::interval::sample_sd;
use crate::{Result, StatsError};

/// Scott's rule for one dimension: `h = sd * n^(-1/5)`.
pub fn scott_bandwidth(n: usize, sd: f64) -> f64 {
    sd * (n as f64).powf(-0.2)
}

#[derive(Debug, Clone)]
pub struct GaussianKde {
    sample: Vec<f64>,
    bandwidth: f64,
}

impl GaussianKde {
    /// Fits with the Scott's-rule bandwidth from the sample SD.
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.len() < 2 {
            return Err(StatsError::TooFewValues { needed: 2, got: sample.len() });
        }
        let sd = sample_sd(sample);
        if !(sd > 0.0) {
            return Err(StatsError::DegenerateSample("sample standard deviation is zero".into()));
        }
        Ok(Self { sample: sample.to_vec(), bandwidth: scott_bandwidth(sample.len(), sd) })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.sample.len() as f64 * h * (2.0 * PI).sqrt());
        norm * self.sample.iter().map(|xi| (-0.5 * ((x - xi) / h).powi(2)).exp()).sum::<f64>()
    }

    pub fn evaluate(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&x| self.density(x)).collect()
    }
}
