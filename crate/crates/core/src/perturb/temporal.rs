use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clipset::{AxisOrder, ClipTensor, FRAMES_PER_SEGMENT};
use crate::error::{CoreError, Result};

/// Which frames of a 16-frame segment a model consumes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSelection {
    #[default]
    All,
    /// Every second frame starting at the first: indices 0, 2, ..., 14.
    Uniform8,
    First2,
    Last2,
}

impl FrameSelection {
    pub fn frames(self) -> usize {
        match self {
            FrameSelection::All => FRAMES_PER_SEGMENT,
            FrameSelection::Uniform8 => 8,
            FrameSelection::First2 | FrameSelection::Last2 => 2,
        }
    }

    pub fn indices(self) -> Vec<usize> {
        match self {
            FrameSelection::All => (0..FRAMES_PER_SEGMENT).collect(),
            FrameSelection::Uniform8 => (0..FRAMES_PER_SEGMENT).step_by(2).collect(),
            FrameSelection::First2 => vec![0, 1],
            FrameSelection::Last2 => vec![FRAMES_PER_SEGMENT - 2, FRAMES_PER_SEGMENT - 1],
        }
    }
}

/// Reorders frames so output frame `i` is input frame `order[i]`, keeping the
/// clip's layout.
pub fn select_frames(clip: &ClipTensor, order: &[usize]) -> ClipTensor {
    let layout = clip.axis_order();
    let canonical = clip.to_order(AxisOrder::Fchw);
    let frames: Vec<&[f32]> = order.iter().map(|&i| canonical.frame(i)).collect();
    ClipTensor::from_frames(&frames, clip.height(), clip.width(), clip.normalization())
        .expect("frames share one size")
        .to_order(layout)
}

/// Picks the frames of `selection` from a 16-frame clip, preserving order.
pub fn subsample_frames(clip: &ClipTensor, selection: FrameSelection) -> Result<ClipTensor> {
    if clip.frames() != FRAMES_PER_SEGMENT {
        return Err(CoreError::WrongFrameCount { expected: FRAMES_PER_SEGMENT, got: clip.frames() });
    }
    if selection == FrameSelection::All {
        return Ok(clip.clone());
    }
    Ok(select_frames(clip, &selection.indices()))
}

/// Seed-deterministic uniform permutation of `0..n` (Fisher-Yates).
pub fn frame_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

pub fn shuffle_frames(clip: &ClipTensor, seed: u64) -> ClipTensor {
    select_frames(clip, &frame_permutation(clip.frames(), seed))
}

pub fn reverse_frames(clip: &ClipTensor) -> ClipTensor {
    let order: Vec<usize> = (0..clip.frames()).rev().collect();
    select_frames(clip, &order)
}
