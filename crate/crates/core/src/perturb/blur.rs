use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clipset::{AxisOrder, ClipTensor};

/// Rows affected by a spatial degradation, as a fraction of frame height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "side", content = "fraction")]
pub enum Region {
    Top(f64),
    Bottom(f64),
}

/// Rows over which the degraded image fades in, counted from the region edge.
pub const BLEND_ROWS: usize = 3;

impl Region {
    /// Half-open row range `[start, end)` of the region in a frame of `height` rows.
    pub fn rows(self, height: usize) -> (usize, usize) {
        match self {
            Region::Top(f) => (0, ((height as f64 * f).round() as usize).min(height)),
            Region::Bottom(f) => (height - ((height as f64 * f).round() as usize).min(height), height),
        }
    }

    /// Weight of the degraded image on `row`: 0 outside the region, ramping
    /// 1/4, 1/2, 3/4 over the blend rows next to the interior edge, 1 beyond.
    pub fn weight(self, row: usize, height: usize) -> f32 {
        let (start, end) = self.rows(height);
        if row < start || row >= end {
            return 0.0;
        }
        let depth = match self {
            Region::Top(_) if end < height => end - 1 - row,
            Region::Bottom(_) if start > 0 => row - start,
            _ => usize::MAX,
        };
        if depth < BLEND_ROWS {
            (depth + 1) as f32 / (BLEND_ROWS + 1) as f32
        } else {
            1.0
        }
    }
}

/// Index into `0..n` under whole-sample symmetric reflection.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Normalized sampled Gaussian truncated at `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur of one `h × w` plane with reflected borders.
fn blur_plane(plane: &[f32], h: usize, w: usize, kernel: &[f64]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * f64::from(plane[y * w + reflect(x as isize + k as isize - r, w)]))
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(y as isize + k as isize - r, h) * w + x])
                .sum::<f64>() as f32;
        }
    }
    out
}

fn degrade(clip: &ClipTensor, region: Region, mut f: impl FnMut(&[f32]) -> Vec<f32>) -> ClipTensor {
    let layout = clip.axis_order();
    let mut out = clip.to_order(AxisOrder::Fchw);
    let (h, w) = (clip.height(), clip.width());
    let (start, end) = region.rows(h);
    if start == end {
        return clip.clone();
    }
    let plane = h * w;
    for p in 0..clip.frames() * 3 {
        let src = &out.values()[p * plane..(p + 1) * plane];
        let degraded = f(src);
        let dst = &mut out.values_mut()[p * plane..(p + 1) * plane];
        for y in start..end {
            let a = region.weight(y, h);
            for x in 0..w {
                let i = y * w + x;
                dst[i] = if a == 1.0 { degraded[i] } else { (1.0 - a) * dst[i] + a * degraded[i] };
            }
        }
    }
    out.to_order(layout)
}

/// Gaussian low-pass inside `region` only; rows outside are bit-identical.
/// `sigma` is in clip pixels; 0 returns the input unchanged.
pub fn blur_region(clip: &ClipTensor, region: Region, sigma: f64) -> ClipTensor {
    if sigma <= 0.0 {
        return clip.clone();
    }
    let kernel = gaussian_kernel(sigma);
    degrade(clip, region, |plane| blur_plane(plane, clip.height(), clip.width(), &kernel))
}

/// Additive Gaussian noise (standard deviation `sd` in value units) inside
/// `region`, seeded.
pub fn noise_region(clip: &ClipTensor, region: Region, sd: f64, seed: u64) -> ClipTensor {
    if sd <= 0.0 {
        return clip.clone();
    }
    let normal = Normal::new(0.0, sd).expect("finite sd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    degrade(clip, region, |plane| plane.iter().map(|v| v + normal.sample(&mut rng) as f32).collect())
}
