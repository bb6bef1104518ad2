//! Run configuration: one TOML document per run, resolved from an optional
//! file plus command-line overrides, snapshotted into the run directory.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use foresight_core::clipset::storage::FrameFormat;
use foresight_core::clipset::SynthConfig;
use foresight_core::fsutil::write_atomic;
use foresight_core::perturb::{Degradation, PerturbationKind};
use foresight_core::r2p1d::NetworkConfig;
use foresight_core::trainer::TrainConfig;

use crate::Failure;

pub const RUN_DIR_ENV: &str = "FORESIGHT_RUN_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub save_models: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { k: 5, repeats: 20, seed: 0, save_models: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Divides every channel width of the standard network; absent keeps
    /// the full-width network (or the explicit `train.network`).
    pub width_divisor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub kinds: Vec<PerturbationKind>,
    pub sigma: f64,
    pub seed: u64,
    pub region_fraction: Option<f64>,
    pub degradation: Degradation,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            kinds: vec![
                PerturbationKind::BlurTop,
                PerturbationKind::BlurBottom,
                PerturbationKind::Shuffle,
                PerturbationKind::Reverse,
            ],
            sigma: 8.0,
            seed: 0,
            region_fraction: None,
            degradation: Degradation::Blur,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub alpha: f64,
    /// Number of planned comparisons for the Bonferroni threshold.
    pub m: usize,
    pub greenhouse_geisser: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { alpha: 0.05, m: 10, greenhouse_geisser: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    #[serde(flatten)]
    pub generator: SynthConfig,
    pub format: FrameFormat,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { generator: SynthConfig::default(), format: FrameFormat::Png }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cv: CvConfig,
    pub perturb: PerturbConfig,
    pub stats: StatsConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }

    /// Applies derived settings after overrides.
    pub fn resolve(mut self) -> Self {
        if let Some(d) = self.model.width_divisor {
            self.train.network = NetworkConfig::scaled(d);
        }
        self
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing the run configuration")
    }

    /// SHA-256 of the resolved configuration.
    pub fn fingerprint(&self) -> anyhow::Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Metadata written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub fingerprint: String,
    pub seeds: Seeds,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub synth: u64,
    pub train: u64,
    pub folds: u64,
    pub perturb: u64,
}

impl Seeds {
    pub fn of(cfg: &RunConfig) -> Self {
        Self { synth: cfg.synth.generator.seed, train: cfg.train.seed, folds: cfg.cv.seed, perturb: cfg.perturb.seed }
    }
}

/// Writes `config.toml` and `run.json` into `dir`; returns the fingerprint.
pub fn snapshot(dir: &Path, command: &str, cfg: &RunConfig, manifest: Option<&Path>) -> anyhow::Result<String> {
    let fingerprint = cfg.fingerprint()?;
    write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let record = RunRecord {
        command: command.to_string(),
        fingerprint: fingerprint.clone(),
        seeds: Seeds::of(cfg),
        version: env!("CARGO_PKG_VERSION").to_string(),
        manifest: manifest.map(Path::to_path_buf),
    };
    write_atomic(&dir.join("run.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
    Ok(fingerprint)
}

pub fn read_snapshot(dir: &Path) -> anyhow::Result<(RunConfig, RunRecord)> {
    let cfg_path = dir.join("config.toml");
    let text = std::fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let cfg = toml::from_str(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    let rec_path = dir.join("run.json");
    let text = std::fs::read_to_string(&rec_path).with_context(|| format!("reading {}", rec_path.display()))?;
    Ok((cfg, serde_json::from_str(&text)?))
}

/// Default output root: `$FORESIGHT_RUN_DIR`, else `./runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os(RUN_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}
