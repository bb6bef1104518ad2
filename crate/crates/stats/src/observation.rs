use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Result, StatsError};

/// Between-subject factor level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Human,
    Model,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Human, Group::Model];

    /// Display name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Group::Human => "Human",
            Group::Model => "Model",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Human => "human",
            Group::Model => "model",
        })
    }
}

impl FromStr for Group {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "human" => Ok(Group::Human),
            "model" | "dnn" | "resnet" => Ok(Group::Model),
            other => Err(StatsError::InvalidValue(format!("unknown group '{other}'"))),
        }
    }
}

/// One long-format row: a subject's accuracy in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub subject_id: String,
    pub group: Group,
    pub period: u8,
    pub accuracy: f64,
}

/// Validated long-format table with a complete subject × period design.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    rows: Vec<Observation>,
    periods: Vec<u8>,
}

/// Wide view: per group, the subjects in id order with their per-period values.
pub(crate) struct Wide {
    pub periods: Vec<u8>,
    pub groups: Vec<(Group, Vec<(String, Vec<f64>)>)>,
}

impl ObservationTable {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        if rows.is_empty() {
            return Err(StatsError::IncompleteDesign("no observations".into()));
        }
        let periods: BTreeSet<u8> = rows.iter().map(|r| r.period).collect();
        let mut subjects: BTreeMap<&str, (Group, BTreeSet<u8>)> = BTreeMap::new();
        for row in &rows {
            if !row.accuracy.is_finite() || !(0.0..=1.0).contains(&row.accuracy) {
                return Err(StatsError::InvalidValue(format!(
                    "accuracy {} for subject {} period {} is outside [0, 1]",
                    row.accuracy, row.subject_id, row.period
                )));
            }
            let entry = subjects
                .entry(row.subject_id.as_str())
                .or_insert_with(|| (row.group, BTreeSet::new()));
            if entry.0 != row.group {
                return Err(StatsError::IncompleteDesign(format!(
                    "subject {} appears in both groups",
                    row.subject_id
                )));
            }
            if !entry.1.insert(row.period) {
                return Err(StatsError::IncompleteDesign(format!(
                    "subject {} has more than one row for period {}",
                    row.subject_id, row.period
                )));
            }
        }
        for (subject, (_, seen)) in &subjects {
            if seen.len() != periods.len() {
                return Err(StatsError::IncompleteDesign(format!(
                    "subject {subject} has {} of {} periods",
                    seen.len(),
                    periods.len()
                )));
            }
        }
        for group in Group::ALL {
            let count = subjects.values().filter(|(g, _)| *g == group).count();
            if count < 2 {
                return Err(StatsError::TooFewSubjects { group: group.to_string(), count });
            }
        }
        Ok(Self { rows, periods: periods.into_iter().collect() })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn periods(&self) -> &[u8] {
        &self.periods
    }

    /// Returns a copy with every accuracy transformed by `f`, bypassing the
    /// [0, 1] range check. Used for invariance checks.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| Observation { accuracy: f(r.accuracy), ..r.clone() })
            .collect();
        Self { rows, periods: self.periods.clone() }
    }

    pub fn subject_count(&self, group: Group) -> usize {
        self.rows.iter().filter(|r| r.group == group && r.period == self.periods[0]).count()
    }

    pub(crate) fn wide(&self) -> Wide {
        let period_index: BTreeMap<u8, usize> =
            self.periods.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let mut by_group: BTreeMap<Group, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
        for row in &self.rows {
            let subject = by_group
                .entry(row.group)
                .or_default()
                .entry(row.subject_id.as_str())
                .or_insert_with(|| vec![f64::NAN; self.periods.len()]);
            subject[period_index[&row.period]] = row.accuracy;
        }
        Wide {
            periods: self.periods.clone(),
            groups: by_group
                .into_iter()
                .map(|(g, subjects)| {
                    (g, subjects.into_iter().map(|(id, v)| (id.to_string(), v)).collect())
                })
                .collect(),
        }
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = csv.deserialize().collect::<std::result::Result<Vec<Observation>, _>>()?;
        Self::new(rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Reads and concatenates several CSV files (e.g. human and model exports).
    pub fn read_csv_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut rows = Vec::new();
        for path in paths {
            let mut csv = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(std::fs::File::open(path)?);
            for row in csv.deserialize() {
                rows.push(row?);
            }
        }
        Self::new(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_observations(writer, &self.rows)
    }
}

/// Reads rows in the shared schema without checking the design.
pub fn read_observations(path: impl AsRef<Path>) -> Result<Vec<Observation>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(std::fs::File::open(path)?);
    Ok(csv.deserialize().collect::<std::result::Result<Vec<Observation>, _>>()?)
}

/// Writes observations in the shared `subject_id,group,period,accuracy` schema.
pub fn write_observations<W: Write>(writer: W, rows: &[Observation]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(id: &str, group: Group, period: u8, accuracy: f64) -> Observation {
        Observation { subject_id: id.into(), group, period, accuracy }
    }

    fn complete() -> Vec<Observation> {
        let mut rows = Vec::new();
        for (id, g) in [("h1", Group::Human), ("h2", Group::Human), ("m1", Group::Model), ("m2", Group::Model)] {
            for p in 1..=3 {
                rows.push(obs(id, g, p, 0.5));
            }
        }
        rows
    }

    #[test]
    fn complete_design_is_accepted() {
        let table = ObservationTable::new(complete()).unwrap();
        assert_eq!(table.periods(), &[1, 2, 3]);
        assert_eq!(table.subject_count(Group::Human), 2);
    }

    #[test]
    fn missing_period_is_rejected() {
        let mut rows = complete();
        rows.pop();
        assert!(matches!(ObservationTable::new(rows), Err(StatsError::IncompleteDesign(_))));
    }

    #[test]
    fn duplicate_period_is_rejected() {
        let mut rows = complete();
        rows.push(obs("h1", Group::Human, 1, 0.4));
        assert!(matches!(ObservationTable::new(rows), Err(StatsError::IncompleteDesign(_))));
    }

    #[test]
    fn single_subject_group_is_rejected() {
        let rows: Vec<_> = complete().into_iter().filter(|r| r.subject_id != "m2").collect();
        assert!(matches!(ObservationTable::new(rows), Err(StatsError::TooFewSubjects { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let table = ObservationTable::new(complete()).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("subject_id,group,period,accuracy\n"));
        let back = ObservationTable::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(back, table);
    }
}
