//! Cross-validated fine-tuning: per-epoch 1:1 resampling, Adamax with a
//! one-cycle schedule, and per-period evaluation on untouched test segments.

mod data;
mod schedule;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use foresight_stats::{ci_margin, mean, Group, Observation};

use crate::clipset::{Fold, FoldPlan, Label, Normalization, PERIODS};
use crate::error::{CoreError, IoContext, Result};
use crate::fsutil::{create_dir, write_atomic};
use crate::perturb::FrameSelection;
use crate::r2p1d::{save_checkpoint, sigmoid, load_pretrained, Mode, Network, NetworkConfig, WeightSource};

pub use data::{make_batch, ClipStore, ClipTransform, Sample};
pub use schedule::{balance_resample, mix_seed, one_cycle_lr, peak_step, Adamax, PCT_START};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Epochs without a lower training loss before stopping early; 0 disables.
    pub patience: usize,
    pub frames: usize,
    pub frame_selection: FrameSelection,
    pub freeze_boundary: String,
    pub seed: u64,
    /// Side of the square network input.
    pub clip_size: usize,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_min: 1e-4,
            lr_max: 8e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            patience: 5,
            frames: 16,
            frame_selection: FrameSelection::All,
            freeze_boundary: "conv5".into(),
            seed: 0,
            clip_size: crate::clipset::CLIP_SIZE,
            network: NetworkConfig::r2plus1d_18(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::InvalidConfig(m));
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return fail(format!("need 0 < lr_min < lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return fail("batch_size and epochs must be at least 1".into());
        }
        if self.frames != self.frame_selection.frames() {
            return fail(format!(
                "frame selection {:?} yields {} frames, config says {}",
                self.frame_selection,
                self.frame_selection.frames(),
                self.frames
            ));
        }
        if self.clip_size < 8 {
            return fail(format!("clip_size {} too small", self.clip_size));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adamax betas must lie in [0, 1)".into());
        }
        self.network.validate()
    }

    /// The configuration with `selection` and its matching frame count.
    pub fn with_selection(&self, selection: FrameSelection) -> Self {
        Self { frames: selection.frames(), frame_selection: selection, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub trial_id: String,
    pub period: u8,
    pub probability: f64,
    pub predicted: Label,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    /// Accuracy for periods 1..=5.
    pub per_period_accuracy: Vec<f64>,
    pub predictions: Vec<Prediction>,
    /// Mean training loss per completed epoch; empty for evaluation-only results.
    pub train_loss: Vec<f64>,
}

impl FoldResult {
    pub fn id(&self) -> String {
        format!("r{:02}-f{:02}", self.repeat, self.fold)
    }
}

/// Network for `cfg`, initialised from `init` when given, with the
/// configured layers frozen.
pub fn initial_network(cfg: &TrainConfig, init: Option<&WeightSource>) -> Result<Network<f32>> {
    let mut net = Network::build(&cfg.network, cfg.frames, cfg.seed)?;
    if let Some(source) = init {
        load_pretrained(&mut net, source)?;
    }
    net.freeze_below(&cfg.freeze_boundary)?;
    Ok(net)
}

/// Numerically stable binary cross-entropy on a logit.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Mini-batches for one epoch; a trailing batch of one sample is dropped
/// because batch statistics need two.
fn batches(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).filter(|r| r.len() >= 2).collect()
}

/// Trains `net` on the fold's rebalanced training segments. Returns the
/// mean loss of each completed epoch.
pub fn train(net: &mut Network<f32>, store: &ClipStore, fold: &Fold, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if net.frames() != cfg.frames {
        return Err(CoreError::InvalidConfig(format!("network takes {} frames, config {}", net.frames(), cfg.frames)));
    }
    let train = store.samples(&fold.train_trials)?;
    let fold_seed = mix_seed(cfg.seed, (fold.repeat as u64) << 32 | fold.fold as u64);
    let majority = Label::ALL.iter().map(|l| train.iter().filter(|s| s.label == *l).count()).max().unwrap_or(0);
    let steps_per_epoch = batches(2 * majority, cfg.batch_size).len();
    let total_steps = (cfg.epochs * steps_per_epoch).max(1);
    let norm = Normalization::KINETICS;
    let mut opt = Adamax::new(cfg.beta1, cfg.beta2, cfg.eps);
    let mut history = Vec::new();
    let (mut best, mut stale, mut step) = (f64::INFINITY, 0, 0);
    for epoch in 0..cfg.epochs {
        let epoch_set = balance_resample(&train, |s| s.label, mix_seed(fold_seed, epoch as u64))?;
        let mut loss_sum = 0.0;
        let mut count = 0;
        for range in batches(epoch_set.len(), cfg.batch_size) {
            let batch = &epoch_set[range];
            let x = make_batch(store, batch, cfg.frame_selection, norm, None)?;
            let logits = net.forward(x, Mode::Train)?;
            let n = batch.len() as f64;
            let mut loss = 0.0;
            let mut dlogits = Vec::with_capacity(batch.len());
            for (z, s) in logits.iter().zip(batch) {
                let (z, y) = (f64::from(*z), f64::from(s.label.target()));
                loss += bce_with_logit(z, y);
                dlogits.push(((sigmoid(z) - y) / n) as f32);
            }
            if !loss.is_finite() || logits.iter().any(|z| !z.is_finite()) {
                return Err(CoreError::Divergence { epoch, step, loss: loss / n });
            }
            net.zero_grad();
            net.backward(&dlogits);
            opt.step(net, one_cycle_lr(step.min(total_steps - 1), total_steps, cfg.lr_min, cfg.lr_max));
            loss_sum += loss;
            count += batch.len();
            step += 1;
        }
        let epoch_loss = loss_sum / count.max(1) as f64;
        history.push(epoch_loss);
        if epoch_loss < best {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(history)
}

/// Probabilities for `samples` in evaluation mode, `batch_size` at a time.
pub fn predict_samples(
    net: &mut Network<f32>,
    store: &ClipStore,
    samples: &[Sample],
    selection: FrameSelection,
    batch_size: usize,
    transform: Option<ClipTransform<'_>>,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let x = make_batch(store, chunk, selection, Normalization::KINETICS, transform)?;
        for (p, s) in net.predict(x)?.into_iter().zip(chunk) {
            out.push(Prediction {
                trial_id: s.trial_id.clone(),
                period: s.period,
                probability: p,
                predicted: Label::from_probability(p),
                label: s.label,
            });
        }
    }
    Ok(out)
}

/// Fraction correct per period 1..=5; NaN for a period without predictions.
pub fn period_accuracy(predictions: &[Prediction]) -> Vec<f64> {
    (1..=PERIODS)
        .map(|p| {
            let hits: Vec<bool> =
                predictions.iter().filter(|x| x.period == p).map(|x| x.predicted == x.label).collect();
            if hits.is_empty() {
                f64::NAN
            } else {
                hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64
            }
        })
        .collect()
}

/// Scores every test segment of `fold` exactly once.
pub fn evaluate_fold(
    net: &mut Network<f32>,
    store: &ClipStore,
    fold: &Fold,
    selection: FrameSelection,
    batch_size: usize,
    transform: Option<ClipTransform<'_>>,
) -> Result<FoldResult> {
    let test = store.samples(&fold.test_trials)?;
    let predictions = predict_samples(net, store, &test, selection, batch_size, transform)?;
    Ok(FoldResult {
        repeat: fold.repeat,
        fold: fold.fold,
        per_period_accuracy: period_accuracy(&predictions),
        predictions,
        train_loss: Vec::new(),
    })
}

/// Trains on the fold's training trials and evaluates on its test trials.
pub fn run_fold(net: &mut Network<f32>, fold: &Fold, cfg: &TrainConfig, store: &ClipStore) -> Result<FoldResult> {
    let history = train(net, store, fold, cfg)?;
    let mut result = evaluate_fold(net, store, fold, cfg.frame_selection, cfg.batch_size, None)?;
    result.train_loss = history;
    Ok(result)
}

#[derive(Default)]
pub struct CvOptions<'a> {
    /// Where per-fold results (and optionally models) are persisted; also
    /// enables resuming.
    pub run_dir: Option<PathBuf>,
    /// Starting weights for every fold; without them each fold starts from
    /// the same seeded initialisation.
    pub init: Option<&'a WeightSource>,
    pub save_models: bool,
    /// Called before each fold that needs computing; returning true stops
    /// the run cleanly.
    pub should_stop: Option<&'a dyn Fn(&Fold) -> bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFold {
    pub fold_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct CvOutcome {
    pub results: Vec<FoldResult>,
    /// Fold ids loaded from earlier runs instead of recomputed.
    pub reused: Vec<String>,
    pub failed: Vec<FailedFold>,
    pub interrupted: bool,
}

pub fn fold_result_path(run_dir: &Path, fold_id: &str) -> PathBuf {
    run_dir.join("folds").join(format!("{fold_id}.json"))
}

pub fn model_path(run_dir: &Path, fold_id: &str) -> PathBuf {
    run_dir.join("models").join(format!("{fold_id}.safetensors"))
}

fn load_fold_result(path: &Path) -> Option<FoldResult> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Runs every fold of `plan`. A failing fold is recorded and its siblings
/// still run. With a run directory, each finished fold is written
/// atomically and folds already on disk are reused.
pub fn run_cv(plan: &FoldPlan, cfg: &TrainConfig, store: &ClipStore, opts: &CvOptions<'_>) -> Result<CvOutcome> {
    cfg.validate()?;
    if let Some(dir) = &opts.run_dir {
        create_dir(&dir.join("folds"))?;
        if opts.save_models {
            create_dir(&dir.join("models"))?;
        }
    }
    let mut outcome = CvOutcome::default();
    for fold in &plan.folds {
        let id = fold.id();
        if let Some(dir) = &opts.run_dir {
            let stored = load_fold_result(&fold_result_path(dir, &id));
            let model_ok = !opts.save_models || model_path(dir, &id).exists();
            if let Some(result) = stored.filter(|_| model_ok) {
                outcome.results.push(result);
                outcome.reused.push(id);
                continue;
            }
        }
        if opts.should_stop.is_some_and(|stop| stop(fold)) {
            outcome.interrupted = true;
            break;
        }
        let attempt = initial_network(cfg, opts.init).and_then(|mut net| {
            let result = run_fold(&mut net, fold, cfg, store)?;
            if let Some(dir) = &opts.run_dir {
                if opts.save_models {
                    save_checkpoint(&mut net, &model_path(dir, &id))?;
                }
                write_atomic(&fold_result_path(dir, &id), serde_json::to_string_pretty(&result)?.as_bytes())?;
            }
            Ok(result)
        });
        match attempt {
            Ok(result) => outcome.results.push(result),
            Err(e) => outcome.failed.push(FailedFold { fold_id: id, error: e.to_string() }),
        }
    }
    if let Some(dir) = &opts.run_dir {
        write_atomic(&dir.join("failed_folds.json"), serde_json::to_string_pretty(&outcome.failed)?.as_bytes())?;
    }
    Ok(outcome)
}

/// Reads every stored fold result under `run_dir/folds`, ordered by id.
pub fn read_fold_results(run_dir: &Path) -> Result<Vec<FoldResult>> {
    let dir = run_dir.join("folds");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .at(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p).at(p)?)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fold,
    Repeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub period: u8,
    pub mean: f64,
    /// 95% t-interval half-width; absent with a single observation.
    pub margin: Option<f64>,
    pub n: usize,
}

/// Per-period accuracy units: one per fold, or one per repeat (the mean of
/// that repeat's folds).
pub fn accuracy_units(results: &[FoldResult], level: Level) -> BTreeMap<usize, Vec<f64>> {
    match level {
        Level::Fold => results.iter().enumerate().map(|(i, r)| (i, r.per_period_accuracy.clone())).collect(),
        Level::Repeat => {
            let mut by_repeat: BTreeMap<usize, Vec<&FoldResult>> = BTreeMap::new();
            for r in results {
                by_repeat.entry(r.repeat).or_default().push(r);
            }
            by_repeat
                .into_iter()
                .map(|(rep, rs)| {
                    let acc = (0..PERIODS as usize)
                        .map(|p| mean(&rs.iter().map(|r| r.per_period_accuracy[p]).collect::<Vec<_>>()))
                        .collect();
                    (rep, acc)
                })
                .collect()
        }
    }
}

pub fn aggregate(results: &[FoldResult], level: Level) -> Result<Vec<PeriodSummary>> {
    if results.is_empty() {
        return Err(CoreError::InvalidConfig("nothing to aggregate".into()));
    }
    let units = accuracy_units(results, level);
    Ok((0..PERIODS as usize)
        .map(|p| {
            let values: Vec<f64> = units.values().map(|acc| acc[p]).collect();
            PeriodSummary {
                period: p as u8 + 1,
                mean: mean(&values),
                margin: if values.len() >= 2 { ci_margin(&values, 0.95).ok() } else { None },
                n: values.len(),
            }
        })
        .collect())
}

/// Repeat-level model "subjects" in the long-format observation schema.
pub fn model_observations(results: &[FoldResult], prefix: &str) -> Vec<Observation> {
    accuracy_units(results, Level::Repeat)
        .into_iter()
        .flat_map(|(rep, acc)| {
            acc.into_iter().enumerate().map(move |(p, a)| Observation {
                subject_id: format!("{prefix}{rep:02}"),
                group: Group::Model,
                period: p as u8 + 1,
                accuracy: a,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct AggregateRow {
    period: u8,
    mean: f64,
    margin: Option<f64>,
    n: usize,
}

pub fn write_aggregate_csv(path: &Path, rows: &[PeriodSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(AggregateRow { period: r.period, mean: r.mean, margin: r.margin, n: r.n })?;
    }
    let bytes = w.into_inner().map_err(|e| CoreError::Resource(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<PeriodSummary>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => CoreError::MissingAggregates(path.to_path_buf()),
        _ => CoreError::from(e),
    })?;
    r.deserialize::<AggregateRow>()
        .map(|row| {
            let row = row?;
            Ok(PeriodSummary { period: row.period, mean: row.mean, margin: row.margin, n: row.n })
        })
        .collect()
}
