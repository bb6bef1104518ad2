//! Grad-CAM over spatio-temporal feature maps and per-frame heatmap overlays.

mod overlay;

use serde::{Deserialize, Serialize};

use crate::clipset::{AxisOrder, ClipTensor, Label, Normalization};
use crate::error::{CoreError, Result};
use crate::r2p1d::{Mode, Network, Real, Tensor};

pub use overlay::{export_overlays, overlay, Colormap, OverlaySidecar, DEFAULT_ALPHA};

/// Output of the last residual stage.
pub const DEFAULT_LAYER: &str = "conv5";

/// A network that can expose an intermediate activation and the gradient of
/// its logits with respect to it.
pub trait CamModel {
    type Elem: Real;

    /// Evaluation-mode logits (collide) and the activation of `layer`, which
    /// must be `N × C × T × H × W`.
    fn capture(&mut self, x: Tensor<Self::Elem>, layer: &str) -> Result<(Vec<Self::Elem>, Tensor<Self::Elem>)>;

    /// Gradient of `Σ dlogits[i] · logit[i]` with respect to the captured
    /// activation of the last `capture` call.
    fn gradient(&mut self, dlogits: &[Self::Elem], layer: &str) -> Result<Tensor<Self::Elem>>;
}

impl<T: Real> CamModel for Network<T> {
    type Elem = T;

    fn capture(&mut self, x: Tensor<T>, layer: &str) -> Result<(Vec<T>, Tensor<T>)> {
        self.forward_capture(x, Mode::Eval, layer)
    }

    fn gradient(&mut self, dlogits: &[T], layer: &str) -> Result<Tensor<T>> {
        let g = self.backward_to(dlogits, layer);
        self.zero_grad();
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    /// `T′ × H′ × W′` map at the layer's resolution, in `[0, 1]`.
    pub values: Vec<f32>,
    pub dims: [usize; 3],
    /// One `height × width` map per input frame.
    pub upsampled: Vec<Vec<f32>>,
    pub height: usize,
    pub width: usize,
    pub target: Label,
    pub layer: String,
    /// Maximum of the rectified map before rescaling; 0 for an all-zero map.
    pub raw_max: f64,
    /// Mean score gradient per channel.
    pub channel_weights: Vec<f64>,
}

impl AttentionMap {
    pub fn frames(&self) -> usize {
        self.upsampled.len()
    }

    /// Share of the upsampled attention mass lying in rows `[start, end)`;
    /// NaN for an all-zero map.
    pub fn mass_fraction(&self, start: usize, end: usize) -> f64 {
        let (mut inside, mut total) = (0.0, 0.0);
        for frame in &self.upsampled {
            for (i, v) in frame.iter().enumerate() {
                let v = f64::from(*v);
                total += v;
                if (start..end).contains(&(i / self.width)) {
                    inside += v;
                }
            }
        }
        inside / total
    }
}

/// Sign that turns the collide logit into the score of `target`.
fn class_sign(target: Label) -> f64 {
    match target {
        Label::Collide => 1.0,
        Label::Fall => -1.0,
    }
}

fn network_input<T: Real>(clips: &[&ClipTensor]) -> Result<Tensor<T>> {
    let first = clips.first().ok_or_else(|| CoreError::InvalidConfig("no clips given".into()))?;
    let [f, _, h, w] = [first.frames(), 3, first.height(), first.width()];
    let mut data = Vec::with_capacity(clips.len() * 3 * f * h * w);
    for c in clips {
        if (c.frames(), c.height(), c.width()) != (f, h, w) {
            return Err(CoreError::UnsupportedShape {
                expected: format!("{f} x 3 x {h} x {w}"),
                got: c.shape().to_vec(),
            });
        }
        let c = match c.normalization() {
            Some(_) => (*c).clone(),
            None => (*c).clone().normalized(Normalization::KINETICS),
        };
        data.extend(c.to_order(AxisOrder::Cfhw).values().iter().map(|v| T::from_f64(f64::from(*v))));
    }
    Ok(Tensor::from_vec(&[clips.len(), 3, f, h, w], data))
}

/// Grad-CAM for each clip of a batch. Unnormalized clips get the Kinetics
/// normalization first.
pub fn grad_cam_batch<M: CamModel>(
    model: &mut M,
    clips: &[&ClipTensor],
    target: Label,
    layer: &str,
) -> Result<Vec<AttentionMap>> {
    let x = network_input::<M::Elem>(clips)?;
    let (logits, act) = model.capture(x, layer)?;
    if act.shape().len() != 5 {
        return Err(CoreError::NoSpatialExtent(layer.to_string()));
    }
    let sign = M::Elem::from_f64(class_sign(target));
    let grad = model.gradient(&vec![sign; logits.len()], layer)?;
    let (n, c, t, h, w) = act.dims5();
    let vol = t * h * w;
    let (a, g) = (act.data(), grad.data());
    let first = clips[0];
    Ok((0..n)
        .map(|i| {
            let base = i * c * vol;
            let weights: Vec<f64> = (0..c)
                .map(|ch| g[base + ch * vol..][..vol].iter().map(|v| v.as_f64()).sum::<f64>() / vol as f64)
                .collect();
            let mut map: Vec<f64> = (0..vol)
                .map(|j| weights.iter().enumerate().map(|(ch, wc)| wc * a[base + ch * vol + j].as_f64()).sum::<f64>().max(0.0))
                .collect();
            let raw_max = map.iter().cloned().fold(0.0, f64::max);
            if raw_max > 0.0 {
                map.iter_mut().for_each(|v| *v /= raw_max);
            }
            let values: Vec<f32> = map.iter().map(|v| *v as f32).collect();
            let upsampled = upsample_trilinear(&map, [t, h, w], [first.frames(), first.height(), first.width()]);
            AttentionMap {
                values,
                dims: [t, h, w],
                upsampled,
                height: first.height(),
                width: first.width(),
                target,
                layer: layer.to_string(),
                raw_max,
                channel_weights: weights,
            }
        })
        .collect())
}

pub fn grad_cam<M: CamModel>(model: &mut M, clip: &ClipTensor, target: Label, layer: &str) -> Result<AttentionMap> {
    Ok(grad_cam_batch(model, &[clip], target, layer)?.remove(0))
}

/// Source coordinates and weights along one axis for half-pixel-aligned
/// linear resampling.
fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Trilinear resampling of a `T × H × W` volume into per-frame planes.
pub fn upsample_trilinear(values: &[f64], from: [usize; 3], to: [usize; 3]) -> Vec<Vec<f32>> {
    let [t, h, w] = from;
    let (tt, th, tw) = (linear_taps(t, to[0]), linear_taps(h, to[1]), linear_taps(w, to[2]));
    let at = |a: usize, b: usize, c: usize| values[(a * h + b) * w + c];
    tt.iter()
        .map(|&(t0, t1, ft)| {
            let mut plane = Vec::with_capacity(to[1] * to[2]);
            for &(y0, y1, fy) in &th {
                for &(x0, x1, fx) in &tw {
                    let lerp2 = |tz: usize| {
                        let top = at(tz, y0, x0) * (1.0 - fx) + at(tz, y0, x1) * fx;
                        let bottom = at(tz, y1, x0) * (1.0 - fx) + at(tz, y1, x1) * fx;
                        top * (1.0 - fy) + bottom * fy
                    };
                    plane.push((lerp2(t0) * (1.0 - ft) + lerp2(t1) * ft) as f32);
                }
            }
            plane
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsampling_a_constant_volume_is_constant() {
        let up = upsample_trilinear(&[0.5; 2 * 3 * 4], [2, 3, 4], [16, 7, 9]);
        assert_eq!(up.len(), 16);
        assert!(up.iter().flatten().all(|v| *v == 0.5));
    }

    #[test]
    fn upsampling_by_two_follows_half_pixel_alignment() {
        let up = upsample_trilinear(&[0.0, 1.0], [1, 1, 2], [1, 1, 4]);
        assert_eq!(up[0], [0.0, 0.25, 0.75, 1.0]);
    }
}
