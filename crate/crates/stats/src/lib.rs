//! Statistics for comparing human and model prediction accuracy across time periods.
//!
//! The input is a long-format [`ObservationTable`] with one row per
//! (subject, period). Subjects belong to one of two groups (human
//! participants or model "subjects"), and period is a repeated within-subject
//! factor. On top of that table the crate provides:
//!
//! * [`mixed_anova`]: two-way mixed ANOVA (group between, period within)
//!   with partial eta squared and an optional Greenhouse-Geisser correction.
//! * [`posthoc`]: Bonferroni-thresholded pairwise comparisons (Welch t-tests
//!   between groups, paired t-tests between periods) with Cohen's d.
//! * [`GaussianKde`]: Gaussian kernel density estimate with Scott's-rule bandwidth.
//! * [`ci_margin`]: Student-t confidence-interval half width.

mod anova;
mod error;
mod interval;
mod kde;
mod observation;
mod posthoc;
pub mod report;
mod ttest;

pub use anova::{mixed_anova, mixed_anova_with, AnovaOptions, AnovaResult, AnovaRow, Factor, Sphericity};
pub use error::StatsError;
pub use interval::{ci_margin, mean, sample_sd, t_quantile};
pub use kde::{scott_bandwidth, GaussianKde};
pub use observation::{read_observations, write_observations, Group, Observation, ObservationTable};
pub use posthoc::{posthoc, Contrast, PosthocRow};
pub use ttest::{cohens_d, paired_t_test, welch_t_test, TTest};

pub type Result<T, E = StatsError> = std::result::Result<T, E>;
