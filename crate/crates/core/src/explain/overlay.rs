use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{linear_taps, AttentionMap};
use crate::clipset::{Label, Segment};
use crate::error::{CoreError, IoContext, Result};
use crate::fsutil::{create_dir, write_atomic};

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Jet,
    Hot,
}

impl Colormap {
    /// RGB in `[0, 255]` for a heat value in `[0, 1]`.
    pub fn color(self, v: f64) -> [f64; 3] {
        let v = v.clamp(0.0, 1.0);
        let rgb = match self {
            Colormap::Jet => {
                let ramp = |c: f64| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
                [ramp(3.0), ramp(2.0), ramp(1.0)]
            }
            Colormap::Hot => [(3.0 * v).min(1.0), (3.0 * v - 1.0).clamp(0.0, 1.0), (3.0 * v - 2.0).clamp(0.0, 1.0)],
        };
        rgb.map(|c| c * 255.0)
    }
}

impl std::str::FromStr for Colormap {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jet" => Ok(Colormap::Jet),
            "hot" => Ok(Colormap::Hot),
            _ => Err(CoreError::InvalidConfig(format!("unknown colormap `{s}`"))),
        }
    }
}

fn resize_plane(plane: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let (ty, tx) = (linear_taps(h, out_h), linear_taps(w, out_w));
    let at = |y: usize, x: usize| f64::from(plane[y * w + x]);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Blends the heatmap over each frame: a pixel with heat `h` moves a
/// fraction `alpha · h` toward the colormap colour of `h`.
pub fn overlay(map: &AttentionMap, segment: &Segment, colormap: Colormap, alpha: f64) -> Result<Vec<RgbImage>> {
    if map.frames() != segment.frames.len() {
        return Err(CoreError::LengthMismatch { what: "attention frames vs segment frames", left: map.frames(), right: segment.frames.len() });
    }
    Ok(map
        .upsampled
        .iter()
        .zip(&segment.frames)
        .map(|(heat, frame)| {
            let (fw, fh) = frame.dimensions();
            let heat = resize_plane(heat, map.height, map.width, fh as usize, fw as usize);
            let mut out = frame.clone();
            for (i, px) in out.pixels_mut().enumerate() {
                let a = alpha * heat[i];
                if a == 0.0 {
                    continue;
                }
                let col = colormap.color(heat[i]);
                *px = Rgb([0, 1, 2].map(|c| (f64::from(px[c]) * (1.0 - a) + col[c] * a).round().clamp(0.0, 255.0) as u8));
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySidecar {
    pub trial_id: String,
    pub period: u8,
    pub layer: String,
    pub class: Label,
    pub normalization_max: f64,
    pub map_dims: [usize; 3],
    pub mean: f64,
    /// Mean of the upsampled map per input frame.
    pub frame_means: Vec<f64>,
    pub colormap: Colormap,
    pub alpha: f64,
}

/// Writes `frame_NN.png` overlays, an animated `overlay.gif` and an
/// `attention.json` sidecar into `dir`.
pub fn export_overlays(
    dir: &Path,
    map: &AttentionMap,
    segment: &Segment,
    colormap: Colormap,
    alpha: f64,
    fps: f64,
) -> Result<OverlaySidecar> {
    let frames = overlay(map, segment, colormap, alpha)?;
    create_dir(dir)?;
    for (i, f) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:02}.png"));
        f.save(&path)?;
    }
    let gif_path = dir.join("overlay.gif");
    {
        let file = File::create(&gif_path).at(&gif_path)?;
        let mut enc = GifEncoder::new(BufWriter::new(file));
        enc.set_repeat(Repeat::Infinite)?;
        let delay = Delay::from_numer_denom_ms(1000, fps.round().max(1.0) as u32);
        for f in &frames {
            let rgba = image::DynamicImage::ImageRgb8(f.clone()).into_rgba8();
            enc.encode_frame(Frame::from_parts(rgba, 0, 0, delay))?;
        }
    }
    let frame_means: Vec<f64> =
        map.upsampled.iter().map(|p| p.iter().map(|v| f64::from(*v)).sum::<f64>() / p.len() as f64).collect();
    let sidecar = OverlaySidecar {
        trial_id: segment.trial_id.clone(),
        period: segment.period,
        layer: map.layer.clone(),
        class: map.target,
        normalization_max: map.raw_max,
        map_dims: map.dims,
        mean: map.values.iter().map(|v| f64::from(*v)).sum::<f64>() / map.values.len() as f64,
        frame_means,
        colormap,
        alpha,
    };
    write_atomic(&dir.join("attention.json"), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(sidecar)
}
