use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clipset::{
    resize_segment, segment_video, storage, AxisOrder, ClipTensor, DatasetManifest, Label, Normalization, Segment,
    TrialVideo,
};
use crate::error::{CoreError, Result};
use crate::perturb::{subsample_frames, FrameSelection};
use crate::r2p1d::Tensor;

/// One segment addressed by trial and period.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sample {
    pub trial_id: String,
    pub period: u8,
    pub label: Label,
}

/// Resized, unnormalized clips keyed by `(trial_id, period)`. Perturbations
/// operate on these before normalization at batch time.
#[derive(Debug, Clone, Default)]
pub struct ClipStore {
    size: usize,
    clips: BTreeMap<(String, u8), ClipTensor>,
    labels: BTreeMap<String, Label>,
}

impl ClipStore {
    pub fn new(size: usize) -> Self {
        Self { size, ..Self::default() }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn insert_segment(&mut self, segment: &Segment) {
        self.labels.insert(segment.trial_id.clone(), segment.label);
        self.clips.insert((segment.trial_id.clone(), segment.period), resize_segment(segment, self.size));
    }

    pub fn insert_trial(&mut self, trial: &TrialVideo) -> Result<()> {
        for seg in segment_video(trial)? {
            self.insert_segment(&seg);
        }
        Ok(())
    }

    pub fn from_manifest(manifest: &DatasetManifest, size: usize) -> Result<Self> {
        let mut store = Self::new(size);
        for entry in manifest.entries() {
            store.insert_segment(&storage::read_segment(manifest, entry)?);
        }
        Ok(store)
    }

    pub fn get(&self, trial_id: &str, period: u8) -> Option<&ClipTensor> {
        self.clips.get(&(trial_id.to_string(), period))
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn trial_labels(&self) -> &BTreeMap<String, Label> {
        &self.labels
    }

    /// Overrides the label of a stored trial.
    pub fn relabel(&mut self, trial_id: &str, label: Label) -> Result<()> {
        match self.labels.get_mut(trial_id) {
            Some(l) => {
                *l = label;
                Ok(())
            }
            None => Err(CoreError::InvalidTrial { trial_id: trial_id.into(), reason: "not present in the clip store".into() }),
        }
    }

    /// Every stored segment of the given trials, ordered by trial then period.
    pub fn samples(&self, trials: &[String]) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for id in trials {
            let label = *self.labels.get(id).ok_or_else(|| CoreError::InvalidTrial {
                trial_id: id.clone(),
                reason: "not present in the clip store".into(),
            })?;
            out.extend(
                self.clips
                    .range((id.clone(), 0)..=(id.clone(), u8::MAX))
                    .map(|((t, p), _)| Sample { trial_id: t.clone(), period: *p, label }),
            );
        }
        Ok(out)
    }
}

/// Clip transformation applied to the unnormalized clip before frame
/// selection and normalization.
pub type ClipTransform<'a> = &'a (dyn Fn(&ClipTensor) -> Result<ClipTensor> + Sync);

/// Packs samples into an `N × 3 × F × H × W` network input.
pub fn make_batch(
    store: &ClipStore,
    samples: &[Sample],
    selection: FrameSelection,
    norm: Normalization,
    transform: Option<ClipTransform<'_>>,
) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut dims = None;
    for s in samples {
        let clip = store.get(&s.trial_id, s.period).ok_or_else(|| CoreError::InvalidTrial {
            trial_id: s.trial_id.clone(),
            reason: format!("period {} not in the clip store", s.period),
        })?;
        let clip = match transform {
            Some(t) => t(clip)?,
            None => clip.clone(),
        };
        let clip = subsample_frames(&clip, selection)?.normalized(norm).to_order(AxisOrder::Cfhw);
        dims.get_or_insert([clip.frames(), clip.height(), clip.width()]);
        data.extend_from_slice(clip.values());
    }
    let [f, h, w] = dims.unwrap_or([selection.frames(), store.size, store.size]);
    Ok(Tensor::from_vec(&[samples.len(), 3, f, h, w], data))
}
