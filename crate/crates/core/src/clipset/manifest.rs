use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{period_window, Label, PERIODS};
use crate::error::{CoreError, IoContext, Result};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// One segment of the dataset as stored in the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trial_id: String,
    pub period: u8,
    pub label: Label,
    pub window_start_s: f64,
    pub window_end_s: f64,
    /// Segment directory, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub fall: usize,
    pub collide: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.fall + self.collide
    }

    fn add(&mut self, label: Label) {
        match label {
            Label::Fall => self.fall += 1,
            Label::Collide => self.collide += 1,
        }
    }
}

/// Validated, immutable list of segments: every trial contributes exactly
/// one entry per period with a single label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    root: PathBuf,
}

impl DatasetManifest {
    pub fn new(mut entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Self> {
        entries.sort_by(|a, b| a.trial_id.cmp(&b.trial_id).then(a.period.cmp(&b.period)));
        let mut by_trial: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in &entries {
            by_trial.entry(&e.trial_id).or_default().push(e);
        }
        for (id, es) in &by_trial {
            let periods: Vec<u8> = es.iter().map(|e| e.period).collect();
            if periods != (1..=PERIODS).collect::<Vec<_>>() {
                return Err(CoreError::InvalidTrial {
                    trial_id: id.to_string(),
                    reason: format!("manifest periods {periods:?}, expected 1..=5 once each"),
                });
            }
            if es.iter().any(|e| e.label != es[0].label) {
                return Err(CoreError::InvalidTrial { trial_id: id.to_string(), reason: "labels differ across periods".into() });
            }
            for e in es {
                let (s, t) = period_window(e.period);
                if (e.window_start_s - s).abs() > 1e-9 || (e.window_end_s - t).abs() > 1e-9 {
                    return Err(CoreError::InvalidTrial {
                        trial_id: id.to_string(),
                        reason: format!("period {} window ({}, {}) should be ({s}, {t})", e.period, e.window_start_s, e.window_end_s),
                    });
                }
            }
        }
        Ok(Self { entries, root: root.into() })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn trial_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.trial_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn trial_labels(&self) -> BTreeMap<String, Label> {
        self.entries.iter().map(|e| (e.trial_id.clone(), e.label)).collect()
    }

    pub fn trial_count(&self) -> usize {
        self.trial_ids().len()
    }

    /// Label totals over all entries.
    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        self.entries.iter().for_each(|e| c.add(e.label));
        c
    }

    pub fn counts_by_period(&self) -> BTreeMap<u8, LabelCounts> {
        let mut m: BTreeMap<u8, LabelCounts> = BTreeMap::new();
        self.entries.iter().for_each(|e| m.entry(e.period).or_default().add(e.label));
        m
    }

    pub fn provenance(&self) -> Option<Provenance> {
        let first = self.entries.first()?.provenance;
        self.entries.iter().all(|e| e.provenance == first).then_some(first)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Reads a manifest; relative segment paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        Self::new(entries, path.parent().unwrap_or(Path::new(".")))
    }
}
