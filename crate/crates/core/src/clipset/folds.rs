use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Label};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub repeat: usize,
    pub fold: usize,
    pub train_trials: Vec<String>,
    pub test_trials: Vec<String>,
}

impl Fold {
    pub fn id(&self) -> String {
        format!("r{:02}-f{:02}", self.repeat, self.fold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Repeated stratified k-fold split by trial. Within each repeat, trials of
/// each label are shuffled and dealt round-robin, the second label
/// continuing where the first stopped, so fold sizes differ by at most one.
pub fn build_folds(manifest: &DatasetManifest, k: usize, repeats: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(CoreError::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    if repeats == 0 {
        return Err(CoreError::InvalidConfig("repeats must be at least 1".into()));
    }
    let labels = manifest.trial_labels();
    let by_label: Vec<Vec<String>> = Label::ALL
        .iter()
        .map(|l| labels.iter().filter(|(_, v)| *v == l).map(|(id, _)| id.clone()).collect())
        .collect();
    for (l, ids) in Label::ALL.iter().zip(&by_label) {
        if ids.len() < k {
            return Err(CoreError::InsufficientTrials { label: l.to_string(), count: ids.len(), needed: k });
        }
    }
    let mut folds = Vec::with_capacity(k * repeats);
    for r in 0..repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64));
        let mut assignment: Vec<Vec<String>> = vec![Vec::new(); k];
        let mut slot = 0;
        for ids in &by_label {
            let mut ids = ids.clone();
            ids.shuffle(&mut rng);
            for id in ids {
                assignment[slot % k].push(id);
                slot += 1;
            }
        }
        for (f, test) in assignment.iter().enumerate() {
            let mut test = test.clone();
            test.sort();
            let train = labels.keys().filter(|id| test.binary_search(id).is_err()).cloned().collect();
            folds.push(Fold { repeat: r, fold: f, train_trials: train, test_trials: test });
        }
    }
    Ok(FoldPlan { k, repeats, seed, folds })
}
