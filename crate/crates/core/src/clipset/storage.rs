//! On-disk layout.
//!
//! A trial directory holds `trial.json` plus either numbered PNG frames
//! (`000000.png`, ...) or one raw `video.rgb` file of packed 8-bit RGB
//! frames. A segment directory holds its 16 frames as `00.png` ... `15.png`.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{segment_video, DatasetManifest, Label, ManifestEntry, Provenance, Segment, TrialVideo};
use crate::error::{CoreError, IoContext, Result};
use crate::fsutil::{create_dir, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    Png,
    Rgb24,
}

/// Contents of `trial.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub trial_id: String,
    pub label: Label,
    pub fps: f64,
    pub decision_time_s: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub frame_count: usize,
    pub format: FrameFormat,
    pub provenance: Provenance,
}

const RAW_VIDEO: &str = "video.rgb";

pub fn write_trial(root: &Path, trial: &TrialVideo, format: FrameFormat, provenance: Provenance) -> Result<PathBuf> {
    let dir = root.join(&trial.trial_id);
    create_dir(&dir)?;
    match format {
        FrameFormat::Png => {
            for (i, f) in trial.frames.iter().enumerate() {
                f.save(dir.join(format!("{i:06}.png")))?;
            }
        }
        FrameFormat::Rgb24 => {
            let bytes: Vec<u8> = trial.frames.iter().flat_map(|f| f.as_raw().iter().copied()).collect();
            write_atomic(&dir.join(RAW_VIDEO), &bytes)?;
        }
    }
    let meta = TrialMeta {
        trial_id: trial.trial_id.clone(),
        label: trial.label,
        fps: trial.fps,
        decision_time_s: trial.decision_time_s,
        width_px: trial.width_px,
        height_px: trial.height_px,
        frame_count: trial.frames.len(),
        format,
        provenance,
    };
    write_atomic(&dir.join("trial.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(dir)
}

pub fn read_trial_meta(dir: &Path) -> Result<TrialMeta> {
    let path = dir.join("trial.json");
    Ok(serde_json::from_str(&fs::read_to_string(&path).at(&path)?)?)
}

pub fn read_trial(dir: &Path) -> Result<(TrialVideo, Provenance)> {
    let meta = read_trial_meta(dir)?;
    let fail = |index: usize, reason: String| CoreError::FrameExtraction { trial_id: meta.trial_id.clone(), index, reason };
    let frames = match meta.format {
        FrameFormat::Png => (0..meta.frame_count)
            .map(|i| {
                image::open(dir.join(format!("{i:06}.png")))
                    .map(|img| img.to_rgb8())
                    .map_err(|e| fail(i, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?,
        FrameFormat::Rgb24 => {
            let path = dir.join(RAW_VIDEO);
            let bytes = fs::read(&path).at(&path)?;
            let size = meta.width_px as usize * meta.height_px as usize * 3;
            if bytes.len() != size * meta.frame_count {
                return Err(fail(bytes.len() / size.max(1), format!("raw video holds {} bytes, expected {}", bytes.len(), size * meta.frame_count)));
            }
            bytes
                .chunks_exact(size)
                .map(|c| RgbImage::from_raw(meta.width_px, meta.height_px, c.to_vec()).expect("chunk matches frame size"))
                .collect()
        }
    };
    let trial = TrialVideo {
        trial_id: meta.trial_id.clone(),
        frames,
        width_px: meta.width_px,
        height_px: meta.height_px,
        fps: meta.fps,
        label: meta.label,
        decision_time_s: meta.decision_time_s,
    };
    Ok((trial, meta.provenance))
}

/// Trial directories (those holding `trial.json`) directly under `root`, sorted.
pub fn list_trials(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .at(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("trial.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn segment_dir_name(trial_id: &str, period: u8) -> String {
    format!("{trial_id}_p{period}")
}

pub fn write_segment(dir: &Path, segment: &Segment) -> Result<()> {
    create_dir(dir)?;
    for (i, f) in segment.frames.iter().enumerate() {
        f.save(dir.join(format!("{i:02}.png")))?;
    }
    Ok(())
}

/// Loads the frames of a manifest entry.
pub fn read_segment(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Segment> {
    let dir = manifest.resolve(entry);
    let frames = (0..super::FRAMES_PER_SEGMENT)
        .map(|i| {
            image::open(dir.join(format!("{i:02}.png"))).map(|img| img.to_rgb8()).map_err(|e| CoreError::FrameExtraction {
                trial_id: entry.trial_id.clone(),
                index: i,
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Segment {
        trial_id: entry.trial_id.clone(),
        period: entry.period,
        frames,
        window: (entry.window_start_s, entry.window_end_s),
        label: entry.label,
    })
}

/// Segments every trial under `trials_root`, writes segment directories
/// under `out/segments` and the manifest to `out/manifest.json`.
pub fn prepare(trials_root: &Path, out: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for dir in list_trials(trials_root)? {
        let (trial, provenance) = read_trial(&dir)?;
        for seg in segment_video(&trial)? {
            let rel = PathBuf::from("segments").join(segment_dir_name(&seg.trial_id, seg.period));
            write_segment(&out.join(&rel), &seg)?;
            entries.push(ManifestEntry {
                trial_id: seg.trial_id.clone(),
                period: seg.period,
                label: seg.label,
                window_start_s: seg.window.0,
                window_end_s: seg.window.1,
                path: rel,
                provenance,
            });
        }
    }
    let manifest = DatasetManifest::new(entries, out)?;
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}
