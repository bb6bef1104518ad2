//! Spatial degradations and temporal-structure manipulations, and model
//! evaluation under them.

mod blur;
mod temporal;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clipset::{ClipTensor, FoldPlan, CLIP_SIZE};
use crate::error::{CoreError, Result};
use crate::fsutil::write_atomic;
use crate::r2p1d::Network;
use crate::trainer::{aggregate, evaluate_fold, run_cv, ClipStore, CvOptions, FoldResult, Level, PeriodSummary, TrainConfig};

pub use blur::{blur_region, gaussian_kernel, noise_region, Region, BLEND_ROWS};
pub use temporal::{frame_permutation, reverse_frames, select_frames, shuffle_frames, subsample_frames, FrameSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    None,
    BlurTop,
    BlurBottom,
    Uniform8,
    First2,
    Last2,
    Shuffle,
    Reverse,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 8] = [
        PerturbationKind::None,
        PerturbationKind::BlurTop,
        PerturbationKind::BlurBottom,
        PerturbationKind::Uniform8,
        PerturbationKind::First2,
        PerturbationKind::Last2,
        PerturbationKind::Shuffle,
        PerturbationKind::Reverse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::None => "none",
            PerturbationKind::BlurTop => "blur_top",
            PerturbationKind::BlurBottom => "blur_bottom",
            PerturbationKind::Uniform8 => "uniform8",
            PerturbationKind::First2 => "first2",
            PerturbationKind::Last2 => "last2",
            PerturbationKind::Shuffle => "shuffle",
            PerturbationKind::Reverse => "reverse",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CoreError::InvalidConfig(format!("unknown perturbation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Degradation {
    #[default]
    Blur,
    /// Additive Gaussian noise; `sigma` is then its SD in 8-bit levels.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    /// Blur standard deviation in pixels of a 112-pixel-high clip; scaled
    /// with the actual clip height.
    pub sigma: f64,
    /// Seed for shuffling and for noise.
    pub seed: u64,
    /// Region height fraction; defaults to 0.6 for top and 0.4 for bottom.
    pub region_fraction: Option<f64>,
    pub degradation: Degradation,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self { kind: PerturbationKind::None, sigma: 8.0, seed: 0, region_fraction: None, degradation: Degradation::Blur }
    }
}

impl Perturbation {
    pub fn new(kind: PerturbationKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.region_fraction.filter(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(CoreError::InvalidConfig(format!("region fraction {f} outside (0, 1)")));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(CoreError::InvalidConfig(format!("sigma {} must be finite and non-negative", self.sigma)));
        }
        Ok(())
    }

    pub fn region(&self) -> Option<Region> {
        match self.kind {
            PerturbationKind::BlurTop => Some(Region::Top(self.region_fraction.unwrap_or(0.6))),
            PerturbationKind::BlurBottom => Some(Region::Bottom(self.region_fraction.unwrap_or(0.4))),
            _ => None,
        }
    }

    /// Frame selection a model must be trained with for this condition.
    pub fn frame_selection(&self) -> FrameSelection {
        match self.kind {
            PerturbationKind::Uniform8 => FrameSelection::Uniform8,
            PerturbationKind::First2 => FrameSelection::First2,
            PerturbationKind::Last2 => FrameSelection::Last2,
            _ => FrameSelection::All,
        }
    }

    /// Frame-count conditions need a model retrained on the reduced input;
    /// the others perturb test clips of a 16-frame model.
    pub fn requires_retraining(&self) -> bool {
        self.frame_selection() != FrameSelection::All
    }

    /// Applies a test-time perturbation to an unnormalized clip. Frame-count
    /// kinds and `none` return the clip unchanged.
    pub fn apply(&self, clip: &ClipTensor) -> ClipTensor {
        match (self.kind, self.region()) {
            (PerturbationKind::Shuffle, _) => shuffle_frames(clip, self.seed),
            (PerturbationKind::Reverse, _) => reverse_frames(clip),
            (_, Some(region)) => {
                let sigma = self.sigma * clip.height() as f64 / CLIP_SIZE as f64;
                match self.degradation {
                    Degradation::Blur => blur_region(clip, region, sigma),
                    Degradation::Noise => noise_region(clip, region, self.sigma / 255.0, self.seed),
                }
            }
            _ => clip.clone(),
        }
    }
}

/// What a perturbed evaluation runs on.
pub enum ModelSource<'a> {
    /// Trained 16-frame models keyed by fold id.
    Trained(&'a mut BTreeMap<String, Network<f32>>),
    /// Recipe for retraining; the frame selection is taken from the
    /// perturbation.
    Recipe { cfg: &'a TrainConfig, opts: CvOptions<'a> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedEvaluation {
    pub perturbation: Perturbation,
    pub model_id: String,
    pub folds: Vec<FoldResult>,
    pub summary: Vec<PeriodSummary>,
}

/// Per-period accuracy of models under `perturbation`, aggregated like the
/// trainer's results.
pub fn evaluate_perturbed(
    source: ModelSource<'_>,
    store: &ClipStore,
    perturbation: &Perturbation,
    plan: &FoldPlan,
    model_id: &str,
    level: Level,
) -> Result<PerturbedEvaluation> {
    perturbation.validate()?;
    let mismatch = |reason: String| CoreError::MismatchedPairing { perturbation: perturbation.kind.to_string(), reason };
    let folds = match source {
        ModelSource::Trained(models) => {
            if perturbation.requires_retraining() {
                return Err(mismatch("frame-count conditions need a model retrained on matching input".into()));
            }
            let transform = |c: &ClipTensor| Ok(perturbation.apply(c));
            let mut out = Vec::with_capacity(plan.folds.len());
            for fold in &plan.folds {
                let net = models.get_mut(&fold.id()).ok_or_else(|| mismatch(format!("no model for fold {}", fold.id())))?;
                if net.frames() != FrameSelection::All.frames() {
                    return Err(mismatch(format!("model takes {} frames, test-time conditions need 16", net.frames())));
                }
                out.push(evaluate_fold(net, store, fold, FrameSelection::All, 16, Some(&transform))?);
            }
            out
        }
        ModelSource::Recipe { cfg, opts } => {
            if !perturbation.requires_retraining() && perturbation.kind != PerturbationKind::None {
                return Err(mismatch("test-time conditions need trained 16-frame models".into()));
            }
            let cfg = cfg.with_selection(perturbation.frame_selection());
            let outcome = run_cv(plan, &cfg, store, &opts)?;
            if let Some(f) = outcome.failed.first() {
                return Err(CoreError::Resource(format!("fold {} failed: {}", f.fold_id, f.error)));
            }
            outcome.results
        }
    };
    let summary = aggregate(&folds, level)?;
    Ok(PerturbedEvaluation { perturbation: perturbation.clone(), model_id: model_id.into(), folds, summary })
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    perturbation: String,
    period: u8,
    mean_accuracy: f64,
    margin: Option<f64>,
    n: usize,
    model_id: String,
    seed: u64,
}

/// Long results table, one row per evaluation and period.
pub fn write_results_csv(path: &Path, evaluations: &[PerturbedEvaluation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in evaluations {
        for s in &e.summary {
            w.serialize(ResultRow {
                perturbation: e.perturbation.kind.to_string(),
                period: s.period,
                mean_accuracy: s.mean,
                margin: s.margin,
                n: s.n,
                model_id: e.model_id.clone(),
                seed: e.perturbation.seed,
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CoreError::Resource(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Rows of a results table as `(perturbation, summary)` pairs.
pub fn read_results_csv(path: &Path) -> Result<Vec<(String, PeriodSummary)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<ResultRow>()
        .map(|row| {
            let row = row?;
            Ok((row.perturbation, PeriodSummary { period: row.period, mean: row.mean_accuracy, margin: row.margin, n: row.n }))
        })
        .collect()
}
