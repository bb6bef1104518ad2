use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Result, StatsError};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Quantile of Student's t distribution with `dof` degrees of freedom.
pub fn t_quantile(p: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .expect("degrees of freedom must be positive")
        .inverse_cdf(p)
}

/// Half width of the two-sided Student-t confidence interval for the mean:
/// `t(1 - (1 - level) / 2, n - 1) * sd / sqrt(n)`.
pub fn ci_margin(values: &[f64], level: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(StatsError::TooFewValues { needed: 2, got: values.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidValue(format!("confidence level {level} not in (0, 1)")));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok(0.0);
    }
    let n = values.len() as f64;
    let sd = sample_sd(values);
    Ok(t_quantile(1.0 - (1.0 - level) / 2.0, n - 1.0) * sd / n.sqrt())
}
