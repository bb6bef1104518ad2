use std::fmt;

use serde::Serialize;

use crate::interval::mean;
use crate::observation::{Group, ObservationTable};
use crate::ttest::{cohens_d, paired_t_test, welch_t_test, TTest};
use crate::{Result, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Contrast {
    Group,
    Time,
    TimeGroup,
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Contrast::Group => "Group",
            Contrast::Time => "Time",
            Contrast::TimeGroup => "Time * Group",
        })
    }
}

/// One pairwise comparison. `t` and `cohen` are signed as A minus B.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosthocRow {
    pub contrast: Contrast,
    /// Period for within-period group contrasts, `None` otherwise ("-").
    pub time: Option<u8>,
    pub a: String,
    pub b: String,
    pub t: f64,
    pub dof: f64,
    pub p_unc: f64,
    /// Bonferroni-adjusted p: `min(1, m * p_unc)`.
    pub p_adjust: f64,
    pub cohen: f64,
    /// `p_unc < alpha / m`.
    pub significant: bool,
}

/// Pairwise comparisons for the group × period design.
///
/// * Group main effect: Welch t-test on per-subject means across periods.
/// * Time main effect: paired t-tests over all subjects for every pair of periods.
/// * Time × Group: Welch t-test between groups within each period.
///
/// Significance uses the Bonferroni threshold `alpha / m`.
pub fn posthoc(table: &ObservationTable, alpha: f64, m: usize) -> Result<Vec<PosthocRow>> {
    if m == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidValue(format!("alpha {alpha} / m {m} is not a valid correction")));
    }
    let wide = table.wide();
    let threshold = alpha / m as f64;
    let row = |contrast, time, a: String, b: String, test: TTest, cohen: f64| PosthocRow {
        contrast,
        time,
        a,
        b,
        t: test.t,
        dof: test.dof,
        p_unc: test.p,
        p_adjust: (test.p * m as f64).min(1.0),
        cohen,
        significant: test.p < threshold,
    };

    let group_values = |g: Group| -> &[(String, Vec<f64>)] {
        wide.groups.iter().find(|(x, _)| *x == g).map(|(_, s)| s.as_slice()).unwrap_or(&[])
    };
    let human = group_values(Group::Human);
    let model = group_values(Group::Model);
    let mut rows = Vec::new();

    let human_means: Vec<f64> = human.iter().map(|(_, v)| mean(v)).collect();
    let model_means: Vec<f64> = model.iter().map(|(_, v)| mean(v)).collect();
    rows.push(row(
        Contrast::Group,
        None,
        Group::Human.display_name().into(),
        Group::Model.display_name().into(),
        welch_t_test(&human_means, &model_means)?,
        cohens_d(&human_means, &model_means, false)?,
    ));

    let column = |j: usize| -> Vec<f64> { human.iter().chain(model.iter()).map(|(_, v)| v[j]).collect() };
    let levels = wide.periods.len();
    for i in 0..levels {
        for j in (i + 1)..levels {
            let (a, b) = (column(i), column(j));
            rows.push(row(
                Contrast::Time,
                None,
                format!("Period{}", wide.periods[i]),
                format!("Period{}", wide.periods[j]),
                paired_t_test(&a, &b)?,
                cohens_d(&a, &b, true)?,
            ));
        }
    }

    for (j, period) in wide.periods.iter().enumerate() {
        let a: Vec<f64> = human.iter().map(|(_, v)| v[j]).collect();
        let b: Vec<f64> = model.iter().map(|(_, v)| v[j]).collect();
        rows.push(row(
            Contrast::TimeGroup,
            Some(*period),
            Group::Human.display_name().into(),
            Group::Model.display_name().into(),
            welch_t_test(&a, &b)?,
            cohens_d(&a, &b, false)?,
        ));
    }
    Ok(rows)
}
