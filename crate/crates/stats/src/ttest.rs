use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::interval::mean;
use crate::{Result, StatsError};

/// Two-sided t-test outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

pub(crate) fn two_sided_p(t: f64, dof: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn require_len(values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(StatsError::TooFewValues { needed: 2, got: values.len() });
    }
    Ok(())
}

/// Unequal-variance (Welch) t-test of `mean(a) - mean(b)` with the
/// Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    require_len(a)?;
    require_len(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        if diff == 0.0 {
            return Ok(TTest { t: 0.0, dof: na + nb - 2.0, p: 1.0 });
        }
        return Err(StatsError::DegenerateVariance("both samples are constant but differ".into()));
    }
    let t = diff / se2.sqrt();
    let dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest { t, dof, p: two_sided_p(t, dof) })
}

/// Paired t-test on the differences `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    require_len(a)?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let d = mean(&diffs);
    let sd = variance(&diffs).sqrt();
    let dof = n - 1.0;
    if sd == 0.0 {
        if d == 0.0 {
            return Ok(TTest { t: 0.0, dof, p: 1.0 });
        }
        return Err(StatsError::DegenerateVariance("paired differences are constant and non-zero".into()));
    }
    let t = d / (sd / n.sqrt());
    Ok(TTest { t, dof, p: two_sided_p(t, dof) })
}

/// Cohen's d for `a` versus `b`.
///
/// Unpaired: mean difference over the pooled standard deviation.
/// Paired: mean of the pairwise differences over their standard deviation.
/// A zero mean difference gives 0 even when the denominator vanishes.
pub fn cohens_d(a: &[f64], b: &[f64], paired: bool) -> Result<f64> {
    require_len(a)?;
    require_len(b)?;
    let (numerator, denominator) = if paired {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        (mean(&diffs), variance(&diffs).sqrt())
    } else {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
        (mean(a) - mean(b), pooled.sqrt())
    };
    if numerator == 0.0 {
        return Ok(0.0);
    }
    if denominator == 0.0 {
        return Err(StatsError::DegenerateVariance("Cohen's d denominator is zero".into()));
    }
    Ok(numerator / denominator)
}
