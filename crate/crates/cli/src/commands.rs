use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;

use foresight_core::clipset::storage::{self, FrameFormat};
use foresight_core::clipset::{
    build_folds, resize_segment, validate_schedule, CueKind, DatasetManifest, FoldPlan, Label, Provenance,
    SyntheticGenerator,
};
use foresight_core::explain::{export_overlays, grad_cam, Colormap, DEFAULT_ALPHA, DEFAULT_LAYER};
use foresight_core::fsutil::{create_dir, write_atomic};
use foresight_core::perturb::{
    evaluate_perturbed, write_results_csv, Degradation, ModelSource, Perturbation, PerturbationKind, PerturbedEvaluation,
};
use foresight_core::r2p1d::{load_checkpoint, Network, WeightSource};
use foresight_core::trainer::{
    aggregate, evaluate_fold, model_observations, model_path, read_fold_results, run_cv, write_aggregate_csv, ClipStore,
    CvOptions, FoldResult, Level, PeriodSummary,
};
use foresight_stats::{
    mixed_anova_with, posthoc, report as stats_report, write_observations, AnovaOptions, ObservationTable, Sphericity,
};

use crate::config::{output_root, read_snapshot, snapshot, RunConfig};
use crate::Failure;

type Outcome = Result<(), Failure>;

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| Failure::usage(format!("`{s}`: {e}"))))
        .collect()
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Five comma-separated cue strengths in [0, 1], non-decreasing.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// `motion` (marker drift) or `static` (marker tint).
    #[arg(long)]
    cue: Option<String>,
    /// Output directory; defaults to `<root>/trials`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `png` frames or a raw `rgb24` stream per trial.
    #[arg(long)]
    format: Option<String>,
}

pub fn synth(args: SynthArgs) -> Outcome {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let g = &mut cfg.synth.generator;
    if let Some(n) = args.trials {
        g.n_trials = n;
    }
    if let Some(s) = &args.schedule {
        g.schedule = parse_list(s)?;
    }
    if let Some(s) = args.seed {
        g.seed = s;
    }
    if let Some(c) = &args.cue {
        g.cue = match c.as_str() {
            "motion" => CueKind::Motion,
            "static" => CueKind::Static,
            _ => return Err(Failure::usage(format!("unknown cue `{c}`"))),
        };
    }
    if let Some(f) = &args.format {
        cfg.synth.format = match f.as_str() {
            "png" => FrameFormat::Png,
            "rgb24" => FrameFormat::Rgb24,
            _ => return Err(Failure::usage(format!("unknown frame format `{f}`"))),
        };
    }
    validate_schedule(&cfg.synth.generator.schedule)?;
    let generator = SyntheticGenerator::new(cfg.synth.generator.clone())?;
    let out = args.out.unwrap_or_else(|| output_root().join("trials"));
    create_dir(&out)?;
    for trial in generator.trials() {
        storage::write_trial(&out, &trial, cfg.synth.format, Provenance::Synthetic)?;
    }
    let fp = snapshot(&out, "synth", &cfg, None)?;
    println!("wrote {} synthetic trials to {} (config {})", generator.len(), out.display(), &fp[..12]);
    Ok(())
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of trial folders; defaults to `<root>/trials`.
    #[arg(long)]
    trials: Option<PathBuf>,
    /// Output directory for segments and `manifest.json`; defaults to `<root>/data`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn prepare(args: PrepareArgs) -> Outcome {
    let trials = args.trials.unwrap_or_else(|| output_root().join("trials"));
    let out = args.out.unwrap_or_else(|| output_root().join("data"));
    if !trials.is_dir() {
        return Err(Failure::usage(format!("trial directory {} does not exist", trials.display())));
    }
    let manifest = storage::prepare(&trials, &out)?;
    let counts = manifest.counts();
    println!(
        "{} trials, {} segments ({} fall, {} collide) -> {}",
        manifest.trial_count(),
        manifest.entries().len(),
        counts.fall,
        counts.collide,
        out.join("manifest.json").display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest from `prepare`; defaults to `<root>/data/manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory; defaults to `<root>/train-<fingerprint>`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Seed of the fold plan.
    #[arg(long)]
    fold_seed: Option<u64>,
    /// Seed of initialisation, resampling and batching.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `all`, `uniform8`, `first2` or `last2`.
    #[arg(long)]
    selection: Option<String>,
    /// Layers before this one stay frozen.
    #[arg(long)]
    freeze: Option<String>,
    /// Square input size in pixels.
    #[arg(long)]
    clip_size: Option<usize>,
    #[arg(long)]
    width_divisor: Option<usize>,
    /// Pretrained weights (safetensors) loaded into every fold's network.
    #[arg(long)]
    init: Option<PathBuf>,
}

fn parse_selection(s: &str) -> Result<foresight_core::perturb::FrameSelection, Failure> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Failure::usage(format!("unknown frame selection `{s}`")))
}

fn load_store(manifest_path: &Path, clip_size: usize) -> Result<(DatasetManifest, ClipStore), Failure> {
    let manifest = DatasetManifest::read(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let store = ClipStore::from_manifest(&manifest, clip_size)?;
    Ok((manifest, store))
}

fn write_summaries(dir: &Path, results: &[FoldResult]) -> anyhow::Result<Vec<PeriodSummary>> {
    let by_repeat = aggregate(results, Level::Repeat)?;
    write_aggregate_csv(&dir.join("aggregate.csv"), &by_repeat)?;
    write_aggregate_csv(&dir.join("aggregate_fold.csv"), &aggregate(results, Level::Fold)?)?;
    let mut buf = Vec::new();
    write_observations(&mut buf, &model_observations(results, "model_r"))?;
    write_atomic(&dir.join("model_observations.csv"), &buf)?;
    Ok(by_repeat)
}

fn print_summary(title: &str, rows: &[PeriodSummary]) {
    println!("{title}");
    println!("period  mean    margin  n");
    for r in rows {
        let margin = r.margin.map_or("-".to_string(), |m| format!("{m:.4}"));
        println!("{:<7} {:.4}  {:<7} {}", r.period, r.mean, margin, r.n);
    }
}

pub fn train(args: TrainArgs) -> Outcome {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.k {
        cfg.cv.k = v;
    }
    if let Some(v) = args.repeats {
        cfg.cv.repeats = v;
    }
    if let Some(v) = args.fold_seed {
        cfg.cv.seed = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(s) = &args.selection {
        cfg.train = cfg.train.with_selection(parse_selection(s)?);
    }
    if let Some(v) = args.freeze {
        cfg.train.freeze_boundary = v;
    }
    if let Some(v) = args.clip_size {
        cfg.train.clip_size = v;
    }
    if let Some(v) = args.width_divisor {
        cfg.model.width_divisor = Some(v);
    }
    let cfg = cfg.resolve();
    cfg.train.validate()?;
    Network::<f32>::build(&cfg.train.network, cfg.train.frames, 0)?.freeze_below(&cfg.train.freeze_boundary)?;
    let manifest_path = args.manifest.unwrap_or_else(|| output_root().join("data").join("manifest.json"));
    if !manifest_path.is_file() {
        return Err(Failure::usage(format!("manifest {} does not exist", manifest_path.display())));
    }
    let init = args.init.as_deref().map(WeightSource::read).transpose()?;
    let fingerprint = cfg.fingerprint()?;
    let run_dir = args.run_dir.unwrap_or_else(|| output_root().join(format!("train-{}", &fingerprint[..12])));
    create_dir(&run_dir)?;
    let (manifest, store) = load_store(&manifest_path, cfg.train.clip_size)?;
    let plan = build_folds(&manifest, cfg.cv.k, cfg.cv.repeats, cfg.cv.seed)?;
    snapshot(&run_dir, "train", &cfg, Some(&std::path::absolute(&manifest_path)?))?;
    write_atomic(&run_dir.join("plan.json"), serde_json::to_string_pretty(&plan)?.as_bytes())?;
    let opts = CvOptions { run_dir: Some(run_dir.clone()), init: init.as_ref(), save_models: cfg.cv.save_models, should_stop: None };
    let outcome = run_cv(&plan, &cfg.train, &store, &opts)?;
    println!(
        "{} folds: {} trained, {} reused, {} failed -> {}",
        plan.folds.len(),
        outcome.results.len() - outcome.reused.len(),
        outcome.reused.len(),
        outcome.failed.len(),
        run_dir.display()
    );
    if !outcome.results.is_empty() {
        print_summary("accuracy by period (repeat-level units)", &write_summaries(&run_dir, &outcome.results)?);
    }
    if !outcome.failed.is_empty() {
        let ids: Vec<&str> = outcome.failed.iter().map(|f| f.fold_id.as_str()).collect();
        return Err(Failure::Runtime(anyhow!("folds failed: {} (see failed_folds.json)", ids.join(", "))));
    }
    Ok(())
}

/// Configuration, manifest, clip store and fold plan of a training run.
struct TrainedRun {
    dir: PathBuf,
    cfg: RunConfig,
    manifest: DatasetManifest,
    store: ClipStore,
    plan: FoldPlan,
}

impl TrainedRun {
    fn open(dir: &Path, manifest_override: Option<&Path>) -> Result<Self, Failure> {
        if !dir.join("run.json").is_file() {
            return Err(Failure::usage(format!("{} is not a training run directory", dir.display())));
        }
        let (cfg, record) = read_snapshot(dir)?;
        let manifest_path = manifest_override
            .map(Path::to_path_buf)
            .or(record.manifest)
            .ok_or_else(|| Failure::usage("run has no recorded manifest; pass --manifest"))?;
        let (manifest, store) = load_store(&manifest_path, cfg.train.clip_size)?;
        let plan_path = dir.join("plan.json");
        let plan: FoldPlan = serde_json::from_str(&std::fs::read_to_string(&plan_path).with_context(|| format!("reading {}", plan_path.display()))?)?;
        Ok(Self { dir: dir.to_path_buf(), cfg, manifest, store, plan })
    }

    fn models(&self) -> Result<BTreeMap<String, Network<f32>>, Failure> {
        self.plan
            .folds
            .iter()
            .map(|f| {
                let path = model_path(&self.dir, &f.id());
                let net = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
                Ok((f.id(), net))
            })
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Score a different manifest than the one used for training.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Outcome {
    let run = TrainedRun::open(&args.run_dir, args.manifest.as_deref())?;
    let mut models = run.models()?;
    let mut results = Vec::new();
    for fold in &run.plan.folds {
        let net = models.get_mut(&fold.id()).expect("model loaded for every fold");
        results.push(evaluate_fold(net, &run.store, fold, run.cfg.train.frame_selection, run.cfg.train.batch_size, None)?);
    }
    let out = run.dir.join("eval");
    for r in &results {
        write_atomic(&out.join("folds").join(format!("{}.json", r.id())), serde_json::to_string_pretty(r)?.as_bytes())?;
    }
    print_summary("re-scored accuracy by period (repeat-level units)", &write_summaries(&out, &results)?);
    if args.manifest.is_none() {
        let stored = read_fold_results(&run.dir)?;
        let same = stored.iter().zip(&results).all(|(a, b)| a.per_period_accuracy == b.per_period_accuracy);
        println!("matches stored fold results: {same}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Fold whose model is explained; defaults to the first fold.
    #[arg(long)]
    fold: Option<String>,
    /// Trial to explain; defaults to the fold's first test trial.
    #[arg(long)]
    trial: Option<String>,
    #[arg(long, default_value_t = 5)]
    period: u8,
    /// `collide` or `fall`; defaults to the true label.
    #[arg(long)]
    class: Option<String>,
    #[arg(long, default_value = DEFAULT_LAYER)]
    layer: String,
    #[arg(long, default_value = "jet")]
    colormap: String,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Output directory; defaults to `<run>/explain/<fold>/<trial>_p<period>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn explain(args: ExplainArgs) -> Outcome {
    let colormap: Colormap = args.colormap.parse()?;
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Failure::usage(format!("alpha {} outside [0, 1]", args.alpha)));
    }
    let run = TrainedRun::open(&args.run_dir, None)?;
    let fold = match &args.fold {
        Some(id) => run.plan.folds.iter().find(|f| &f.id() == id).ok_or_else(|| Failure::usage(format!("no fold {id}")))?,
        None => &run.plan.folds[0],
    };
    let trial = args.trial.clone().unwrap_or_else(|| fold.test_trials[0].clone());
    let entry = run
        .manifest
        .entries()
        .iter()
        .find(|e| e.trial_id == trial && e.period == args.period)
        .ok_or_else(|| Failure::usage(format!("no segment for trial {trial} period {}", args.period)))?;
    let target = match &args.class {
        Some(c) => c.parse::<Label>()?,
        None => entry.label,
    };
    let mut net = load_checkpoint(&model_path(&run.dir, &fold.id()))?;
    net.layer_index(&args.layer).map_err(|e| Failure::usage(e.to_string()))?;
    let segment = storage::read_segment(&run.manifest, entry)?;
    let clip = resize_segment(&segment, run.cfg.train.clip_size);
    let map = grad_cam(&mut net, &clip, target, &args.layer)?;
    let out = args
        .out
        .unwrap_or_else(|| run.dir.join("explain").join(fold.id()).join(format!("{trial}_p{}", args.period)));
    let sidecar = export_overlays(&out, &map, &segment, colormap, args.alpha, 32.0)?;
    println!(
        "{} overlays for {trial} period {} ({} at {}) -> {} (raw max {:.4e})",
        map.frames(),
        args.period,
        target,
        args.layer,
        out.display(),
        sidecar.normalization_max
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Comma-separated kinds: none, blur_top, blur_bottom, uniform8, first2, last2, shuffle, reverse.
    #[arg(long)]
    kinds: Option<String>,
    /// Blur sigma in pixels at 112-pixel scale (noise SD in 8-bit levels with `--noise`).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    region_fraction: Option<f64>,
    /// Additive Gaussian noise instead of blur in the degraded region.
    #[arg(long)]
    noise: bool,
}

pub fn perturb(args: PerturbArgs) -> Outcome {
    let run = TrainedRun::open(&args.run_dir, None)?;
    let mut pc = run.cfg.perturb.clone();
    if let Some(k) = &args.kinds {
        pc.kinds = parse_list(k)?;
    }
    if let Some(v) = args.sigma {
        pc.sigma = v;
    }
    if let Some(v) = args.seed {
        pc.seed = v;
    }
    if args.region_fraction.is_some() {
        pc.region_fraction = args.region_fraction;
    }
    if args.noise {
        pc.degradation = Degradation::Noise;
    }
    let mut kinds = vec![PerturbationKind::None];
    kinds.extend(pc.kinds.iter().copied().filter(|k| *k != PerturbationKind::None));
    let perturbations: Vec<Perturbation> = kinds
        .iter()
        .map(|&kind| Perturbation { kind, sigma: pc.sigma, seed: pc.seed, region_fraction: pc.region_fraction, degradation: pc.degradation })
        .collect();
    for p in &perturbations {
        p.validate()?;
    }
    let out = run.dir.join("perturb");
    create_dir(&out)?;
    let model_id = read_snapshot(&run.dir)?.1.fingerprint[..12].to_string();
    let mut models = None;
    let mut evaluations: Vec<PerturbedEvaluation> = Vec::new();
    for p in &perturbations {
        let eval = if p.requires_retraining() {
            let sub = out.join(p.kind.as_str());
            let opts = CvOptions { run_dir: Some(sub), init: None, save_models: false, should_stop: None };
            let source = ModelSource::Recipe { cfg: &run.cfg.train, opts };
            evaluate_perturbed(source, &run.store, p, &run.plan, &format!("{model_id}-{}", p.kind), Level::Repeat)?
        } else {
            if models.is_none() {
                models = Some(run.models()?);
            }
            let source = ModelSource::Trained(models.as_mut().expect("models loaded"));
            evaluate_perturbed(source, &run.store, p, &run.plan, &model_id, Level::Repeat)?
        };
        let p5 = eval.summary.last().map_or(f64::NAN, |s| s.mean);
        println!("{:<12} period-5 accuracy {:.4}", p.kind, p5);
        evaluations.push(eval);
    }
    write_results_csv(&out.join("results.csv"), &evaluations)?;
    let records: Vec<_> = evaluations
        .iter()
        .map(|e| serde_json::json!({ "perturbation": e.perturbation, "model_id": e.model_id, "summary": e.summary }))
        .collect();
    write_atomic(&out.join("evaluations.json"), serde_json::to_string_pretty(&records)?.as_bytes())?;
    println!("-> {}", out.join("results.csv").display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated long-format CSVs (subject_id,group,period,accuracy).
    #[arg(long = "in", required = true)]
    inputs: String,
    /// Output directory; defaults to `<root>/stats`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of planned comparisons.
    #[arg(long)]
    m: Option<usize>,
    /// Apply the Greenhouse-Geisser correction to within-subject dfs.
    #[arg(long)]
    greenhouse_geisser: bool,
}

pub fn stats(args: StatsArgs) -> Outcome {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(a) = args.alpha {
        cfg.stats.alpha = a;
    }
    if let Some(m) = args.m {
        cfg.stats.m = m;
    }
    cfg.stats.greenhouse_geisser |= args.greenhouse_geisser;
    let inputs: Vec<PathBuf> = parse_list(&args.inputs)?;
    if inputs.is_empty() {
        return Err(Failure::usage("no input files"));
    }
    if let Some(missing) = inputs.iter().find(|p| !p.is_file()) {
        return Err(Failure::usage(format!("{} does not exist", missing.display())));
    }
    let table = ObservationTable::read_csv_files(&inputs)?;
    let sphericity = if cfg.stats.greenhouse_geisser { Sphericity::GreenhouseGeisser } else { Sphericity::None };
    let anova = mixed_anova_with(&table, AnovaOptions { sphericity })?;
    let rows = posthoc(&table, cfg.stats.alpha, cfg.stats.m)?;
    let out = args.out.unwrap_or_else(|| output_root().join("stats"));
    create_dir(&out)?;
    let mut buf = Vec::new();
    stats_report::write_anova_csv(&mut buf, &anova)?;
    write_atomic(&out.join("anova.csv"), &buf)?;
    let mut buf = Vec::new();
    stats_report::write_posthoc_csv(&mut buf, &rows)?;
    write_atomic(&out.join("posthoc.csv"), &buf)?;
    let text = format!(
        "{}\n{}",
        stats_report::format_anova(&anova),
        stats_report::format_posthoc(&rows, cfg.stats.alpha, cfg.stats.m)
    );
    write_atomic(&out.join("report.txt"), text.as_bytes())?;
    snapshot(&out, "stats", &cfg, None)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Human observations in the long-format schema, plotted alongside the model.
    #[arg(long)]
    human: Option<PathBuf>,
    /// Output directory; defaults to `<run>/report`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(args: ReportArgs) -> Outcome {
    let out = args.out.unwrap_or_else(|| args.run_dir.join("report"));
    let written = crate::report::build_report(&args.run_dir, args.human.as_deref(), &out)?;
    for f in written {
        println!("{}", f.display());
    }
    Ok(())
}
