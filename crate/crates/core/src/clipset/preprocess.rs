use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::Segment;
use crate::error::{CoreError, Result};

pub const CLIP_SIZE: usize = 112;
pub const KINETICS_MEAN: [f32; 3] = [0.43216, 0.394666, 0.37645];
pub const KINETICS_STD: [f32; 3] = [0.22803, 0.22145, 0.216989];

/// Memory layout of a clip. `Fchw` is the canonical in-memory order;
/// `Fcwh` is the frames-channels-width-height notation used for
/// interchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AxisOrder {
    Fchw,
    Cfhw,
    Fcwh,
}

impl AxisOrder {
    /// Position of (frame, channel, row, column) within the layout's dims.
    fn positions(self) -> [usize; 4] {
        match self {
            AxisOrder::Fchw => [0, 1, 2, 3],
            AxisOrder::Cfhw => [1, 0, 2, 3],
            AxisOrder::Fcwh => [0, 1, 3, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const KINETICS: Normalization = Normalization { mean: KINETICS_MEAN, std: KINETICS_STD };
}

/// A clip of `frames × 3 × height × width` values stored in `axis_order`.
/// Values are in `[0, 1]` until a normalization is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    values: Vec<f32>,
    frames: usize,
    height: usize,
    width: usize,
    axis_order: AxisOrder,
    normalization: Option<Normalization>,
}

impl ClipTensor {
    pub fn new(
        values: Vec<f32>,
        frames: usize,
        height: usize,
        width: usize,
        axis_order: AxisOrder,
        normalization: Option<Normalization>,
    ) -> Result<Self> {
        let expected = frames * 3 * height * width;
        if values.len() != expected {
            return Err(CoreError::LengthMismatch { what: "clip values vs dims", left: values.len(), right: expected });
        }
        Ok(Self { values, frames, height, width, axis_order, normalization })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn axis_order(&self) -> AxisOrder {
        self.axis_order
    }

    pub fn normalization(&self) -> Option<Normalization> {
        self.normalization
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    /// Dimensions in storage order.
    pub fn shape(&self) -> [usize; 4] {
        let logical = [self.frames, 3, self.height, self.width];
        let pos = self.axis_order.positions();
        let mut dims = [0; 4];
        for (axis, p) in pos.iter().enumerate() {
            dims[*p] = logical[axis];
        }
        dims
    }

    fn strides(&self) -> [usize; 4] {
        let dims = self.shape();
        let storage = [dims[1] * dims[2] * dims[3], dims[2] * dims[3], dims[3], 1];
        self.axis_order.positions().map(|p| storage[p])
    }

    pub fn get(&self, f: usize, c: usize, y: usize, x: usize) -> f32 {
        let s = self.strides();
        self.values[f * s[0] + c * s[1] + y * s[2] + x * s[3]]
    }

    /// Same clip re-laid out in `order`.
    pub fn to_order(&self, order: AxisOrder) -> ClipTensor {
        if order == self.axis_order {
            return self.clone();
        }
        let mut out = ClipTensor { values: vec![0.0; self.values.len()], axis_order: order, ..self.clone() };
        let s = out.strides();
        for f in 0..self.frames {
            for c in 0..3 {
                for y in 0..self.height {
                    for x in 0..self.width {
                        out.values[f * s[0] + c * s[1] + y * s[2] + x * s[3]] = self.get(f, c, y, x);
                    }
                }
            }
        }
        out
    }

    /// One frame as `3 × height × width` (canonical layout only).
    pub fn frame(&self, f: usize) -> &[f32] {
        assert_eq!(self.axis_order, AxisOrder::Fchw, "frame access needs the canonical layout");
        let n = 3 * self.height * self.width;
        &self.values[f * n..(f + 1) * n]
    }

    /// Builds a canonical clip from per-frame `3 × height × width` slices.
    pub fn from_frames(frames: &[&[f32]], height: usize, width: usize, normalization: Option<Normalization>) -> Result<Self> {
        let values: Vec<f32> = frames.iter().flat_map(|f| f.iter().copied()).collect();
        Self::new(values, frames.len(), height, width, AxisOrder::Fchw, normalization)
    }

    /// Applies `(v - mean_c) / std_c` per channel. A clip that already
    /// carries a normalization is returned unchanged.
    pub fn normalized(mut self, norm: Normalization) -> Self {
        if self.normalization.is_some() {
            return self;
        }
        let s = self.strides();
        for f in 0..self.frames {
            for c in 0..3 {
                let (m, sd) = (norm.mean[c], norm.std[c]);
                for y in 0..self.height {
                    for x in 0..self.width {
                        let v = &mut self.values[f * s[0] + c * s[1] + y * s[2] + x * s[3]];
                        *v = (*v - m) / sd;
                    }
                }
            }
        }
        self.normalization = Some(norm);
        self
    }

    /// Undoes the recorded normalization.
    pub fn denormalized(mut self) -> Self {
        let Some(norm) = self.normalization.take() else {
            return self;
        };
        let s = self.strides();
        for f in 0..self.frames {
            for c in 0..3 {
                for y in 0..self.height {
                    for x in 0..self.width {
                        let v = &mut self.values[f * s[0] + c * s[1] + y * s[2] + x * s[3]];
                        *v = *v * norm.std[c] + norm.mean[c];
                    }
                }
            }
        }
        self
    }
}

/// Per-axis source taps for half-pixel-centred bilinear sampling.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(src - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect()
}

/// Bilinear resize of the whole frame to `out_h × out_w`, scaled to `[0, 1]`
/// and returned channel-major (`3 × out_h × out_w`).
pub fn resize_bilinear(img: &RgbImage, out_h: usize, out_w: usize) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let xs = taps(w, out_w);
    let ys = taps(h, out_h);
    let raw = img.as_raw();
    let px = |y: usize, x: usize, c: usize| f64::from(raw[(y * w + x) * 3 + c]);
    let mut out = vec![0.0f32; 3 * out_h * out_w];
    for c in 0..3 {
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let top = (1.0 - wx) * px(y0, x0, c) + wx * px(y0, x1, c);
                let bottom = (1.0 - wx) * px(y1, x0, c) + wx * px(y1, x1, c);
                out[(c * out_h + oy) * out_w + ox] = (((1.0 - wy) * top + wy * bottom) / 255.0) as f32;
            }
        }
    }
    out
}

/// Resized, unnormalized canonical clip of a segment.
pub fn resize_segment(segment: &Segment, size: usize) -> ClipTensor {
    let frames: Vec<Vec<f32>> = segment.frames.iter().map(|f| resize_bilinear(f, size, size)).collect();
    let slices: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
    ClipTensor::from_frames(&slices, size, size, None).expect("consistent frame sizes")
}

/// Full-frame bilinear resize to 112 × 112 followed by per-channel
/// normalization.
pub fn preprocess(segment: &Segment) -> ClipTensor {
    resize_segment(segment, CLIP_SIZE).normalized(Normalization::KINETICS)
}
