//! Two-way mixed ANOVA: group (between subjects) × period (within subjects).
//!
//! Sums of squares use the weighted-means decomposition
//!
//! ```text
//! SS_total = SS_group + SS_subjects(group) + SS_time + SS_interaction + SS_error
//! ```
//!
//! where group is tested against subjects-within-groups and both time and
//! the interaction are tested against the within-subject residual.

use std::fmt;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::observation::ObservationTable;
use crate::{Result, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Factor {
    Group,
    Time,
    Interaction,
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Factor::Group => "Group",
            Factor::Time => "Time",
            Factor::Interaction => "Interaction",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Sphericity {
    /// Uncorrected degrees of freedom.
    #[default]
    None,
    /// Scale within-subject dfs by the Greenhouse-Geisser epsilon.
    GreenhouseGeisser,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AnovaOptions {
    pub sphericity: Sphericity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaRow {
    pub factor: Factor,
    pub ss: f64,
    pub df_num: f64,
    pub df_den: f64,
    pub ms: f64,
    pub f: f64,
    pub p: f64,
    /// Partial eta squared: SS_effect / (SS_effect + SS_error).
    pub eta_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaResult {
    pub rows: Vec<AnovaRow>,
    /// Effect size variant reported in `eta_sq`.
    pub effect_size: &'static str,
    pub sphericity: Sphericity,
    /// Greenhouse-Geisser epsilon of the within-subject factor (always computed).
    pub gg_epsilon: f64,
    pub ss_subjects: f64,
    pub ss_error: f64,
}

impl AnovaResult {
    pub fn row(&self, factor: Factor) -> &AnovaRow {
        self.rows.iter().find(|r| r.factor == factor).expect("all factors present")
    }
}

pub fn mixed_anova(table: &ObservationTable) -> Result<AnovaResult> {
    mixed_anova_with(table, AnovaOptions::default())
}

pub fn mixed_anova_with(table: &ObservationTable, options: AnovaOptions) -> Result<AnovaResult> {
    let wide = table.wide();
    let levels = wide.periods.len();
    if levels < 2 {
        return Err(StatsError::IncompleteDesign("need at least two periods".into()));
    }
    let n_groups = wide.groups.len();
    let n_subjects: usize = wide.groups.iter().map(|(_, s)| s.len()).sum();
    let p = levels as f64;

    let all: Vec<f64> = wide.groups.iter().flat_map(|(_, s)| s.iter().flat_map(|(_, v)| v.iter().copied())).collect();
    let grand = all.iter().sum::<f64>() / all.len() as f64;
    let ss_total: f64 = all.iter().map(|v| (v - grand).powi(2)).sum();

    let mut ss_group = 0.0;
    let mut ss_subjects = 0.0;
    let mut ss_cells = 0.0;
    let mut period_sums = vec![0.0; levels];
    for (_, subjects) in &wide.groups {
        let n = subjects.len() as f64;
        let group_mean = subjects.iter().flat_map(|(_, v)| v.iter()).sum::<f64>() / (n * p);
        ss_group += n * p * (group_mean - grand).powi(2);
        for (_, values) in subjects {
            let subject_mean = values.iter().sum::<f64>() / p;
            ss_subjects += p * (subject_mean - group_mean).powi(2);
        }
        for (j, sum) in period_sums.iter_mut().enumerate() {
            let cell_sum: f64 = subjects.iter().map(|(_, v)| v[j]).sum();
            *sum += cell_sum;
            ss_cells += n * (cell_sum / n - grand).powi(2);
        }
    }
    let n_total = n_subjects as f64;
    let ss_time: f64 = period_sums.iter().map(|s| n_total * (s / n_total - grand).powi(2)).sum();
    let ss_inter = ss_cells - ss_group - ss_time;
    let ss_error = ss_total - ss_group - ss_subjects - ss_time - ss_inter;

    let df_group = (n_groups - 1) as f64;
    let df_subjects = (n_subjects - n_groups) as f64;
    let df_time = p - 1.0;
    let df_inter = df_group * df_time;
    let df_error = df_subjects * df_time;

    let gg_epsilon = greenhouse_geisser(&wide.groups.iter().map(|(_, s)| s.as_slice()).collect::<Vec<_>>(), levels);
    let eps = match options.sphericity {
        Sphericity::None => 1.0,
        Sphericity::GreenhouseGeisser => gg_epsilon,
    };

    let make = |factor: Factor, ss: f64, df: f64, ss_err: f64, df_err: f64| -> Result<AnovaRow> {
        if ss_err <= 0.0 {
            return Err(StatsError::UndefinedF { factor: factor.to_string() });
        }
        let ms = ss / df;
        let f = ms / (ss_err / df_err);
        let f = f.max(0.0);
        let dist = FisherSnedecor::new(df, df_err).expect("positive dfs");
        Ok(AnovaRow {
            factor,
            ss,
            df_num: df,
            df_den: df_err,
            ms,
            f,
            p: dist.sf(f).clamp(0.0, 1.0),
            eta_sq: ss / (ss + ss_err),
        })
    };

    let rows = vec![
        make(Factor::Group, ss_group, df_group, ss_subjects, df_subjects)?,
        make(Factor::Time, ss_time, df_time * eps, ss_error, df_error * eps)?,
        make(Factor::Interaction, ss_inter, df_inter * eps, ss_error, df_error * eps)?,
    ];
    Ok(AnovaResult {
        rows,
        effect_size: "partial eta squared",
        sphericity: options.sphericity,
        gg_epsilon,
        ss_subjects,
        ss_error,
    })
}

/// Greenhouse-Geisser epsilon from the pooled within-group covariance of the
/// repeated measures: `tr(S)^2 / ((k - 1) tr(S^2))` with `S` double-centred.
fn greenhouse_geisser(groups: &[&[(String, Vec<f64>)]], levels: usize) -> f64 {
    let mut cov = vec![vec![0.0; levels]; levels];
    let mut dof = 0.0;
    for subjects in groups {
        let n = subjects.len() as f64;
        let means: Vec<f64> = (0..levels).map(|j| subjects.iter().map(|(_, v)| v[j]).sum::<f64>() / n).collect();
        for (_, v) in subjects.iter() {
            for i in 0..levels {
                for j in 0..levels {
                    cov[i][j] += (v[i] - means[i]) * (v[j] - means[j]);
                }
            }
        }
        dof += n - 1.0;
    }
    for row in cov.iter_mut() {
        for c in row.iter_mut() {
            *c /= dof;
        }
    }
    let k = levels as f64;
    let row_means: Vec<f64> = cov.iter().map(|r| r.iter().sum::<f64>() / k).collect();
    let grand = row_means.iter().sum::<f64>() / k;
    let mut trace = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let centred = cov[i][j] - row_means[i] - row_means[j] + grand;
            if i == j {
                trace += centred;
            }
            sum_sq += centred * centred;
        }
    }
    if sum_sq == 0.0 {
        return 1.0;
    }
    (trace * trace / ((k - 1.0) * sum_sq)).clamp(1.0 / (k - 1.0), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Group, Observation};

    fn table(data: &[(&str, Group, [f64; 2])]) -> ObservationTable {
        let rows = data
            .iter()
            .flat_map(|(id, g, v)| {
                v.iter().enumerate().map(move |(j, a)| Observation {
                    subject_id: id.to_string(),
                    group: *g,
                    period: j as u8 + 1,
                    accuracy: *a,
                })
            })
            .collect();
        ObservationTable::new(rows).unwrap()
    }

    #[test]
    fn identical_cells_make_f_undefined() {
        let t = table(&[
            ("h1", Group::Human, [0.5, 0.6]),
            ("h2", Group::Human, [0.5, 0.6]),
            ("m1", Group::Model, [0.5, 0.6]),
            ("m2", Group::Model, [0.5, 0.6]),
        ]);
        assert!(matches!(mixed_anova(&t), Err(StatsError::UndefinedF { .. })));
    }

    #[test]
    fn two_levels_have_unit_epsilon() {
        let t = table(&[
            ("h1", Group::Human, [0.1, 0.3]),
            ("h2", Group::Human, [0.2, 0.6]),
            ("m1", Group::Model, [0.5, 0.4]),
            ("m2", Group::Model, [0.7, 0.9]),
        ]);
        let r = mixed_anova_with(&t, AnovaOptions { sphericity: Sphericity::GreenhouseGeisser }).unwrap();
        assert!((r.gg_epsilon - 1.0).abs() < 1e-12);
        assert_eq!(r.row(Factor::Time).df_num, 1.0);
    }
}
