#![allow(dead_code)]

use foresight_core::clipset::{period_window, DatasetManifest, Label, ManifestEntry, Provenance, SynthConfig, SyntheticGenerator};
use foresight_core::r2p1d::NetworkConfig;
use foresight_core::trainer::{ClipStore, TrainConfig};

/// Manifest whose entries only carry trial labels; paths point nowhere.
pub fn manifest_for(labels: &[(String, Label)]) -> DatasetManifest {
    let entries = labels
        .iter()
        .flat_map(|(id, label)| {
            (1..=5u8).map(move |p| {
                let (s, e) = period_window(p);
                ManifestEntry {
                    trial_id: id.clone(),
                    period: p,
                    label: *label,
                    window_start_s: s,
                    window_end_s: e,
                    path: format!("segments/{id}_p{p}").into(),
                    provenance: Provenance::Synthetic,
                }
            })
        })
        .collect();
    DatasetManifest::new(entries, "/nonexistent").unwrap()
}

/// In-memory clip store of synthetic trials, together with a label manifest.
pub fn synthetic_store(cfg: SynthConfig, clip_size: usize) -> (ClipStore, DatasetManifest) {
    let generator = SyntheticGenerator::new(cfg).unwrap();
    let mut store = ClipStore::new(clip_size);
    for trial in generator.trials() {
        store.insert_trial(&trial).unwrap();
    }
    let labels: Vec<(String, Label)> = store.trial_labels().iter().map(|(k, v)| (k.clone(), *v)).collect();
    (store, manifest_for(&labels))
}

pub fn small_synth(n: usize, seed: u64) -> SynthConfig {
    SynthConfig { n_trials: n, seed, width: 32, height: 24, ..SynthConfig::default() }
}

/// A network small enough to train in well under a second per fold.
pub fn tiny_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        clip_size: 16,
        freeze_boundary: "stem".into(),
        network: NetworkConfig::scaled(64),
        ..TrainConfig::default()
    }
}
