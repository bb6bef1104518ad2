//! Trial footage, the five pre-decision periods, clip preprocessing, fold
//! planning and a planted-signal generator.

mod folds;
mod manifest;
mod preprocess;
pub mod storage;
mod synth;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use folds::{build_folds, Fold, FoldPlan};
pub use manifest::{DatasetManifest, LabelCounts, ManifestEntry, Provenance};
pub use preprocess::{
    preprocess, resize_bilinear, resize_segment, AxisOrder, ClipTensor, Normalization, CLIP_SIZE, KINETICS_MEAN,
    KINETICS_STD,
};
pub use synth::{generate_synthetic, validate_schedule, CueKind, SynthConfig, SyntheticGenerator};

pub const PERIODS: u8 = 5;
pub const FRAMES_PER_SEGMENT: usize = 16;
pub const SEGMENT_SECONDS: f64 = 0.5;
/// Start of period 1 relative to the decision.
pub const FIRST_WINDOW_START_S: f64 = -4.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fall,
    Collide,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Fall, Label::Collide];

    /// Training target: collide is the positive class.
    pub fn target(self) -> f32 {
        match self {
            Label::Fall => 0.0,
            Label::Collide => 1.0,
        }
    }

    pub fn from_probability(p: f64) -> Self {
        if p >= 0.5 {
            Label::Collide
        } else {
            Label::Fall
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fall => "fall",
            Label::Collide => "collide",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fall" => Ok(Label::Fall),
            "collide" => Ok(Label::Collide),
            other => Err(CoreError::InvalidConfig(format!("unknown label `{other}`"))),
        }
    }
}

/// Window of period `p` (1-based) in seconds relative to the decision.
pub fn period_window(p: u8) -> (f64, f64) {
    assert!((1..=PERIODS).contains(&p), "period {p} out of range");
    let start = FIRST_WINDOW_START_S + SEGMENT_SECONDS * f64::from(p - 1);
    (start, start + SEGMENT_SECONDS)
}

/// Raw labelled footage of one trial. Frame `i` is shown at `i / fps`
/// seconds; `decision_time_s` is on the same clock.
#[derive(Debug, Clone)]
pub struct TrialVideo {
    pub trial_id: String,
    pub frames: Vec<RgbImage>,
    pub width_px: u32,
    pub height_px: u32,
    pub fps: f64,
    pub label: Label,
    pub decision_time_s: f64,
}

impl TrialVideo {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(CoreError::InvalidTrial { trial_id: self.trial_id.clone(), reason });
        if self.frames.is_empty() {
            return bad("no frames".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !self.decision_time_s.is_finite() {
            return bad("decision time is not finite".into());
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.dimensions() != (self.width_px, self.height_px) {
                return Err(CoreError::FrameExtraction {
                    trial_id: self.trial_id.clone(),
                    index: i,
                    reason: format!("frame is {:?}, trial declares {}x{}", f.dimensions(), self.width_px, self.height_px),
                });
            }
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

/// One period of a trial: 16 frames covering a 0.5 s window.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub trial_id: String,
    pub period: u8,
    pub frames: Vec<RgbImage>,
    /// `(start_s, end_s)` relative to the decision.
    pub window: (f64, f64),
    pub label: Label,
}

/// Source frame index shown nearest to time `t`; ties go to the earlier frame.
pub fn nearest_frame(t: f64, fps: f64, frame_count: usize) -> usize {
    let x = t * fps;
    let lo = x.floor();
    let idx = if x - lo <= lo + 1.0 - x { lo } else { lo + 1.0 };
    (idx.max(0.0) as usize).min(frame_count - 1)
}

/// Source frame indices for the 16 slots of period `p`: slot `j` sits at
/// `start + j * 0.5 / 16` seconds.
pub fn frame_indices(trial: &TrialVideo, p: u8) -> Vec<usize> {
    let (start, _) = period_window(p);
    let abs_start = trial.decision_time_s + start;
    let step = SEGMENT_SECONDS / FRAMES_PER_SEGMENT as f64;
    (0..FRAMES_PER_SEGMENT)
        .map(|j| nearest_frame(abs_start + j as f64 * step, trial.fps, trial.frames.len()))
        .collect()
}

/// Splits a trial into its five periods.
pub fn segment_video(trial: &TrialVideo) -> Result<Vec<Segment>> {
    trial.validate()?;
    let needed_start = trial.decision_time_s + FIRST_WINDOW_START_S;
    let needed_end = trial.decision_time_s + period_window(PERIODS).1;
    // the footage must contain a frame within half a frame period of both ends
    let half = 0.5 / trial.fps;
    if needed_start < -half || needed_end > trial.duration_s() + half {
        return Err(CoreError::FootageTooShort {
            trial_id: trial.trial_id.clone(),
            needed: (needed_start, needed_end),
            available: (0.0, trial.duration_s()),
        });
    }
    Ok((1..=PERIODS)
        .map(|p| Segment {
            trial_id: trial.trial_id.clone(),
            period: p,
            frames: frame_indices(trial, p).into_iter().map(|i| trial.frames[i].clone()).collect(),
            window: period_window(p),
            label: trial.label,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank_trial(fps: f64, n: usize, decision: f64) -> TrialVideo {
        TrialVideo {
            trial_id: "t".into(),
            frames: (0..n).map(|i| RgbImage::from_pixel(2, 2, image::Rgb([i as u8, 0, 0]))).collect(),
            width_px: 2,
            height_px: 2,
            fps,
            label: Label::Fall,
            decision_time_s: decision,
        }
    }

    #[test]
    fn windows_tile_the_pre_decision_interval() {
        assert_eq!(period_window(1), (-4.5, -4.0));
        assert_eq!(period_window(5), (-2.5, -2.0));
        for p in 1..PERIODS {
            assert_eq!(period_window(p).1, period_window(p + 1).0);
        }
    }

    #[test]
    fn native_rate_takes_consecutive_frames() {
        let trial = blank_trial(32.0, 160, 5.0);
        // period 1 starts at 0.5 s = frame 16
        assert_eq!(frame_indices(&trial, 1), (16..32).collect::<Vec<_>>());
        assert_eq!(frame_indices(&trial, 5), (80..96).collect::<Vec<_>>());
    }

    #[test]
    fn ties_resolve_to_the_earlier_frame() {
        assert_eq!(nearest_frame(0.5, 1.0, 10), 0);
        assert_eq!(nearest_frame(1.5, 1.0, 10), 1);
        assert_eq!(nearest_frame(1.51, 1.0, 10), 2);
    }

    #[test]
    fn short_footage_is_rejected() {
        let trial = blank_trial(32.0, 40, 3.0);
        assert!(matches!(segment_video(&trial), Err(CoreError::FootageTooShort { .. })));
    }

    #[test]
    fn mismatched_frame_is_an_extraction_failure() {
        let mut trial = blank_trial(32.0, 160, 5.0);
        trial.frames[3] = RgbImage::new(3, 2);
        assert!(matches!(segment_video(&trial), Err(CoreError::FrameExtraction { index: 3, .. })));
    }
}
