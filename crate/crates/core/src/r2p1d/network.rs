use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{BlockSpec, NetworkConfig};
use super::layers::{relu_backward, relu_forward, BatchNorm3d, Conv3d, Linear, Mode, Param};
use super::tensor::{Real, Tensor};
use crate::error::{CoreError, Result};

/// Frame counts a network can be built for.
pub const SUPPORTED_FRAMES: [usize; 3] = [16, 8, 2];

#[derive(Debug, Clone)]
struct Conv2Plus1d<T: Real> {
    spatial: Conv3d<T>,
    bn_mid: BatchNorm3d<T>,
    mask: Vec<bool>,
    temporal: Conv3d<T>,
}

impl<T: Real> Conv2Plus1d<T> {
    fn new(spec: &BlockSpec, rng: &mut ChaCha8Rng) -> Self {
        let (kt, kh, kw) = (spec.kernel_t, spec.kernel_h, spec.kernel_w);
        Self {
            spatial: Conv3d::new(
                spec.in_channels,
                spec.midplanes,
                [1, kh, kw],
                [1, spec.stride_h, spec.stride_w],
                [0, kh / 2, kw / 2],
                rng,
            ),
            bn_mid: BatchNorm3d::new(spec.midplanes),
            mask: Vec::new(),
            temporal: Conv3d::new(spec.midplanes, spec.out_channels, [kt, 1, 1], [spec.stride_t, 1, 1], [kt / 2, 0, 0], rng),
        }
    }

    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = self.spatial.forward(x);
        let mut y = self.bn_mid.forward(y, mode);
        self.mask = relu_forward(&mut y);
        self.temporal.forward(y)
    }

    fn backward(&mut self, d: &Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        let mut d = self.temporal.backward(d, true).expect("input grad requested");
        relu_backward(&mut d, &self.mask);
        let d = self.bn_mid.backward(d);
        self.spatial.backward(&d, need_input)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.spatial.visit_params(&format!("{prefix}.spatial"), f);
        self.bn_mid.visit_params(&format!("{prefix}.bn_mid"), f);
        self.temporal.visit_params(&format!("{prefix}.temporal"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.bn_mid.visit_buffers(&format!("{prefix}.bn_mid"), f);
    }
}

#[derive(Debug, Clone)]
struct Stem<T: Real> {
    conv: Conv2Plus1d<T>,
    bn: BatchNorm3d<T>,
    mask: Vec<bool>,
}

impl<T: Real> Stem<T> {
    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = self.conv.forward(x, mode);
        let mut y = self.bn.forward(y, mode);
        self.mask = relu_forward(&mut y);
        y
    }

    fn backward(&mut self, mut d: Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        relu_backward(&mut d, &self.mask);
        let d = self.bn.backward(d);
        self.conv.backward(&d, need_input)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv.visit_params("stem", f);
        self.bn.visit_params("stem.bn", f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.conv.visit_buffers("stem", f);
        self.bn.visit_buffers("stem.bn", f);
    }
}

#[derive(Debug, Clone)]
struct BasicBlock<T: Real> {
    conv1: Conv2Plus1d<T>,
    bn1: BatchNorm3d<T>,
    mask1: Vec<bool>,
    conv2: Conv2Plus1d<T>,
    bn2: BatchNorm3d<T>,
    downsample: Option<(Conv3d<T>, BatchNorm3d<T>)>,
    mask_out: Vec<bool>,
}

impl<T: Real> BasicBlock<T> {
    fn new(specs: &[BlockSpec; 2], rng: &mut ChaCha8Rng) -> Self {
        let [s1, s2] = specs;
        let conv1 = Conv2Plus1d::new(s1, rng);
        let conv2 = Conv2Plus1d::new(s2, rng);
        let downsample = (s1.stride() != [1, 1, 1] || s1.in_channels != s1.out_channels).then(|| {
            (
                Conv3d::new(s1.in_channels, s1.out_channels, [1, 1, 1], s1.stride(), [0, 0, 0], rng),
                BatchNorm3d::new(s1.out_channels),
            )
        });
        Self {
            conv1,
            bn1: BatchNorm3d::new(s1.out_channels),
            mask1: Vec::new(),
            conv2,
            bn2: BatchNorm3d::new(s2.out_channels),
            downsample,
            mask_out: Vec::new(),
        }
    }

    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let shortcut = match self.downsample.as_mut() {
            Some((conv, bn)) => {
                let s = conv.forward(x.clone());
                bn.forward(s, mode)
            }
            None => x.clone(),
        };
        let y = self.conv1.forward(x, mode);
        let mut y = self.bn1.forward(y, mode);
        self.mask1 = relu_forward(&mut y);
        let y = self.conv2.forward(y, mode);
        let mut y = self.bn2.forward(y, mode);
        y.add_assign(&shortcut);
        self.mask_out = relu_forward(&mut y);
        y
    }

    fn backward(&mut self, mut d: Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        relu_backward(&mut d, &self.mask_out);
        let d_short = match self.downsample.as_mut() {
            Some((conv, bn)) => {
                let g = bn.backward(d.clone());
                conv.backward(&g, need_input)
            }
            None => need_input.then(|| d.clone()),
        };
        let g = self.bn2.backward(d);
        let mut g = self.conv2.backward(&g, true).expect("input grad requested");
        relu_backward(&mut g, &self.mask1);
        let g = self.bn1.backward(g);
        let mut dx = self.conv1.backward(&g, need_input)?;
        dx.add_assign(&d_short.expect("shortcut grad present when input grad requested"));
        Some(dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.bn1.visit_params(&format!("{prefix}.bn1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.bn2.visit_params(&format!("{prefix}.bn2"), f);
        if let Some((conv, bn)) = self.downsample.as_mut() {
            conv.visit_params(&format!("{prefix}.downsample"), f);
            bn.visit_params(&format!("{prefix}.downsample_bn"), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.conv1.visit_buffers(&format!("{prefix}.conv1"), f);
        self.bn1.visit_buffers(&format!("{prefix}.bn1"), f);
        self.conv2.visit_buffers(&format!("{prefix}.conv2"), f);
        self.bn2.visit_buffers(&format!("{prefix}.bn2"), f);
        if let Some((_, bn)) = self.downsample.as_mut() {
            bn.visit_buffers(&format!("{prefix}.downsample_bn"), f);
        }
    }
}

#[derive(Debug, Clone)]
struct Head<T: Real> {
    fc: Linear<T>,
    pooled_from: Vec<usize>,
}

impl<T: Real> Head<T> {
    /// Global average pool over time and space, then the linear unit.
    fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let (n, c, t, h, w) = x.dims5();
        let area = t * h * w;
        let scale = T::from_f64(1.0 / area as f64);
        let pooled: Vec<T> = x.data().chunks(area).map(|ch| ch.iter().copied().sum::<T>() * scale).collect();
        self.pooled_from = x.shape().to_vec();
        self.fc.forward(Tensor::from_vec(&[n, c], pooled))
    }

    fn backward(&mut self, d: &Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        let dp = self.fc.backward(d);
        if !need_input {
            return None;
        }
        let area: usize = self.pooled_from[2..].iter().product();
        let scale = T::from_f64(1.0 / area as f64);
        let mut dx = Tensor::zeros(&self.pooled_from);
        for (chunk, g) in dx.data_mut().chunks_mut(area).zip(dp.data()) {
            chunk.fill(*g * scale);
        }
        Some(dx)
    }
}

/// The (2+1)D residual classifier. Layers are indexed in forward order:
/// 0 is the stem, `1..=stages` the residual stages, and the last index the
/// pooled linear head. The network returns one logit per clip; the
/// probability of `collide` is its sigmoid.
#[derive(Debug, Clone)]
pub struct Network<T: Real = f32> {
    config: NetworkConfig,
    frames: usize,
    stem: Stem<T>,
    stages: Vec<Vec<BasicBlock<T>>>,
    head: Head<T>,
    frozen_below: usize,
}

impl<T: Real> Network<T> {
    /// Deterministic initialisation from `seed`.
    pub fn build(config: &NetworkConfig, frames: usize, seed: u64) -> Result<Self> {
        if !SUPPORTED_FRAMES.contains(&frames) {
            return Err(CoreError::UnsupportedFrames(frames));
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Stem {
            conv: Conv2Plus1d::new(&config.stem, &mut rng),
            bn: BatchNorm3d::new(config.stem.out_channels),
            mask: Vec::new(),
        };
        let mut stages: Vec<Vec<BasicBlock<T>>> = config.stages.iter().map(|_| Vec::new()).collect();
        for (si, _, specs) in config.residual_specs() {
            stages[si].push(BasicBlock::new(&specs, &mut rng));
        }
        let head = Head { fc: Linear::new(config.head_features(), 1, &mut rng), pooled_from: Vec::new() };
        Ok(Self { config: config.clone(), frames, stem, stages, head, frozen_below: 0 })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    fn head_index(&self) -> usize {
        self.stages.len() + 1
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.config.layer_names()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layer_names().iter().position(|n| n == name).ok_or_else(|| CoreError::UnknownLayer(name.to_string()))
    }

    /// Name of the first trainable layer.
    pub fn freeze_boundary(&self) -> String {
        self.layer_names()[self.frozen_below].clone()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let ok = s.len() == 5 && s[0] >= 1 && s[1] == self.config.in_channels() && s[2] == self.frames && s[3] >= 1 && s[4] >= 1;
        if ok {
            Ok(())
        } else {
            Err(CoreError::UnsupportedShape {
                expected: format!("N x {} x {} x H x W", self.config.in_channels(), self.frames),
                got: s.to_vec(),
            })
        }
    }

    fn forward_layer(&mut self, idx: usize, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        if idx == 0 {
            self.stem.forward(x, mode)
        } else if idx == self.head_index() {
            self.head.forward(x)
        } else {
            self.stages[idx - 1].iter_mut().fold(x, |y, block| block.forward(y, mode))
        }
    }

    fn backward_layer(&mut self, idx: usize, d: Tensor<T>, need_input: bool) -> Option<Tensor<T>> {
        if idx == 0 {
            self.stem.backward(d, need_input)
        } else if idx == self.head_index() {
            self.head.backward(&d, need_input)
        } else {
            let mut g = Some(d);
            for (i, block) in self.stages[idx - 1].iter_mut().enumerate().rev() {
                g = block.backward(g.expect("gradient flows between blocks"), need_input || i > 0);
            }
            g
        }
    }

    fn run(&mut self, start: usize, x: Tensor<T>, mode: Mode, capture: Option<usize>) -> (Vec<T>, Option<Tensor<T>>) {
        let mut y = x;
        let mut captured = None;
        for idx in start..=self.head_index() {
            y = self.forward_layer(idx, y, mode);
            if capture == Some(idx) {
                captured = Some(y.clone());
            }
        }
        (y.into_data(), captured)
    }

    /// Logits for an `N × 3 × F × H × W` batch.
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Vec<T>> {
        self.check_input(&x)?;
        Ok(self.run(0, x, mode, None).0)
    }

    /// Collide probabilities in evaluation mode.
    pub fn predict(&mut self, x: Tensor<T>) -> Result<Vec<f64>> {
        Ok(self.forward(x, Mode::Eval)?.into_iter().map(|l| sigmoid(l.as_f64())).collect())
    }

    /// Forward pass that also returns the output of `layer`.
    pub fn forward_capture(&mut self, x: Tensor<T>, mode: Mode, layer: &str) -> Result<(Vec<T>, Tensor<T>)> {
        self.check_input(&x)?;
        let idx = self.layer_index(layer)?;
        let (logits, captured) = self.run(0, x, mode, Some(idx));
        Ok((logits, captured.expect("captured layer output")))
    }

    /// Runs the layers above `layer` on a given activation of `layer`.
    pub fn forward_from(&mut self, layer: &str, activation: Tensor<T>, mode: Mode) -> Result<Vec<T>> {
        let idx = self.layer_index(layer)?;
        if idx == self.head_index() {
            return Err(CoreError::NoSpatialExtent(layer.to_string()));
        }
        Ok(self.run(idx + 1, activation, mode, None).0)
    }

    /// Backpropagates logit gradients from the last forward pass, accumulating
    /// parameter gradients of trainable layers only.
    pub fn backward(&mut self, dlogits: &[T]) {
        let d = Tensor::from_vec(&[dlogits.len(), 1], dlogits.to_vec());
        let lowest = self.frozen_below;
        let mut g = Some(d);
        for idx in (lowest..=self.head_index()).rev() {
            g = self.backward_layer(idx, g.expect("gradient flows between layers"), idx > lowest);
        }
    }

    /// Gradient of the logits (weighted by `dlogits`) with respect to the
    /// output of `layer` from the last forward pass.
    pub fn backward_to(&mut self, dlogits: &[T], layer: &str) -> Result<Tensor<T>> {
        let target = self.layer_index(layer)?;
        if target == self.head_index() {
            return Err(CoreError::NoSpatialExtent(layer.to_string()));
        }
        let mut g = Tensor::from_vec(&[dlogits.len(), 1], dlogits.to_vec());
        for idx in (target + 1..=self.head_index()).rev() {
            g = self.backward_layer(idx, g, true).expect("input grad requested");
        }
        Ok(g)
    }

    /// Freezes every layer before `boundary`; `boundary` and everything after
    /// it stay trainable.
    pub fn freeze_below(&mut self, boundary: &str) -> Result<()> {
        let b = self.layer_index(boundary)?;
        self.frozen_below = b;
        let names = self.layer_names();
        self.visit_params(&mut |name, p| {
            let layer = name.split('.').next().unwrap_or_default();
            let idx = names.iter().position(|n| n == layer).expect("parameter belongs to a layer");
            p.frozen = idx < b;
        });
        Ok(())
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.stem.visit_params(f);
        for (si, blocks) in self.stages.iter_mut().enumerate() {
            for (bi, block) in blocks.iter_mut().enumerate() {
                block.visit_params(&format!("conv{}.{bi}", si + 2), f);
            }
        }
        self.head.fc.visit_params("fc", f);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.stem.visit_buffers(f);
        for (si, blocks) in self.stages.iter_mut().enumerate() {
            for (bi, block) in blocks.iter_mut().enumerate() {
                block.visit_buffers(&format!("conv{}.{bi}", si + 2), f);
            }
        }
    }

    pub fn parameter_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(n));
        names
    }

    pub fn trainable_parameter_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, p| {
            if !p.frozen {
                names.push(n)
            }
        });
        names
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut total = 0;
        self.visit_params(&mut |_, p| total += p.value.len());
        total
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    /// Parameters and buffers as owned named tensors, in traversal order.
    pub fn state(&mut self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, p| out.push((n, p.value.clone())));
        self.visit_buffers(&mut |n, b| out.push((n, b.clone())));
        out
    }

    /// Head weight and bias, e.g. for hand-built test networks.
    pub fn head_mut(&mut self) -> (&mut Param<T>, &mut Param<T>) {
        (&mut self.head.fc.weight, &mut self.head.fc.bias)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
