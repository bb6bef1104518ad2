//! CSV and plain-text renderings of ANOVA and post-hoc results.

use std::fmt::Write as _;
use std::io::Write;

use crate::{AnovaResult, PosthocRow, Result};

fn format_p(p: f64) -> String {
    if p < 0.001 {
        "< .001".to_string()
    } else {
        format!("{p:.4}")
    }
}

pub fn write_anova_csv<W: Write>(writer: W, result: &AnovaResult) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["factor", "ss", "df_num", "df_den", "ms", "f", "p", "eta_sq"])?;
    for row in &result.rows {
        csv.write_record([
            row.factor.to_string(),
            row.ss.to_string(),
            row.df_num.to_string(),
            row.df_den.to_string(),
            row.ms.to_string(),
            row.f.to_string(),
            row.p.to_string(),
            row.eta_sq.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_posthoc_csv<W: Write>(writer: W, rows: &[PosthocRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["contrast", "time", "a", "b", "t", "dof", "p_unc", "p_adjust", "cohen", "significant"])?;
    for row in rows {
        csv.write_record([
            row.contrast.to_string(),
            row.time.map_or("-".to_string(), |p| format!("Period{p}")),
            row.a.clone(),
            row.b.clone(),
            row.t.to_string(),
            row.dof.to_string(),
            row.p_unc.to_string(),
            row.p_adjust.to_string(),
            row.cohen.to_string(),
            row.significant.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Fixed-width ANOVA table (factor, dfs, F, p, eta squared).
pub fn format_anova(result: &AnovaResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>7} {:>8} {:>12} {:>9} {:>8}", "Factor", "Num DF", "Den DF", "F-statistic", "p-value", "eta^2");
    for row in &result.rows {
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>8} {:>12.4} {:>9} {:>8.4}",
            row.factor.to_string(),
            trim_df(row.df_num),
            trim_df(row.df_den),
            row.f,
            format_p(row.p),
            row.eta_sq
        );
    }
    let _ = writeln!(out, "effect size: {}; sphericity correction: {:?}", result.effect_size, result.sphericity);
    out
}

/// Fixed-width post-hoc table. The p column holds the uncorrected p-value and
/// a trailing `*` marks rows significant at the Bonferroni threshold.
pub fn format_posthoc(rows: &[PosthocRow], alpha: f64, m: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<13} {:>8} {:>8} {:>8} {:>9} {:>8} {:>8} {:>8}",
        "Contrast", "Time", "A", "B", "T", "dof", "p-unc", "cohen"
    );
    for row in rows {
        let _ = writeln!(
            out,
            "{:<13} {:>8} {:>8} {:>8} {:>9.4} {:>8.4} {:>8} {:>8.4}{}",
            row.contrast.to_string(),
            row.time.map_or("-".to_string(), |p| format!("Period{p}")),
            row.a,
            row.b,
            row.t,
            row.dof,
            format_p(row.p_unc),
            row.cohen,
            if row.significant { " *" } else { "" }
        );
    }
    let _ = writeln!(out, "* p < {alpha}/{m} = {}", alpha / m as f64);
    out
}

fn trim_df(df: f64) -> String {
    if df.fract() == 0.0 {
        format!("{df:.0}")
    } else {
        format!("{df:.2}")
    }
}
