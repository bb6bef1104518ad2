//! Layers with explicit forward/backward passes.
//!
//! Activations are `N × C × T × H × W`. Each layer caches what its backward
//! pass needs during the most recent forward call; calling `backward` without
//! a preceding forward panics.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::tensor::{Real, Tensor};

/// Whether batch statistics are used (and updated) by batch normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub frozen: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, frozen: false }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Output columns `[lo, hi)` whose unit-stride source column `wo + shift`
/// falls inside `0..w`.
fn unit_stride_span(w: usize, wo_n: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).clamp(0, wo_n as isize) as usize;
    let hi = (w as isize - shift).clamp(lo as isize, wo_n as isize) as usize;
    (lo, hi)
}

#[derive(Debug, Clone)]
pub struct Conv3d<T: Real> {
    pub weight: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    input: Option<Tensor<T>>,
    cols: Vec<T>,
}

impl<T: Real> Conv3d<T> {
    /// Kaiming-normal initialisation (fan-out, ReLU gain).
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut R,
    ) -> Self {
        let fan_out = out_channels * kernel.iter().product::<usize>();
        let std = (2.0 / fan_out as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = out_channels * in_channels * kernel.iter().product::<usize>();
        let data = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
        let shape = [out_channels, in_channels, kernel[0], kernel[1], kernel[2]];
        Self {
            weight: Param::new(Tensor::from_vec(&shape, data)),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input: None,
            cols: Vec::new(),
        }
    }

    pub fn output_dims(&self, t: usize, h: usize, w: usize) -> (usize, usize, usize) {
        let out = |n: usize, i: usize| (n + 2 * self.padding[i] - self.kernel[i]) / self.stride[i] + 1;
        (out(t, 0), out(h, 1), out(w, 2))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn im2col(&self, x: &[T], dims: (usize, usize, usize), out: (usize, usize, usize), cols: &mut [T]) {
        let (t, h, w) = dims;
        let (to_n, ho_n, wo_n) = out;
        let p = to_n * ho_n * wo_n;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding.map(|v| v as isize);
        let mut row = 0;
        for c in 0..self.in_channels {
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let dst = &mut cols[row * p..(row + 1) * p];
                        row += 1;
                        for to in 0..to_n {
                            let ti = (to * st + dt) as isize - pt;
                            for ho in 0..ho_n {
                                let hi = (ho * sh + dh) as isize - ph;
                                let base = (to * ho_n + ho) * wo_n;
                                let run = &mut dst[base..base + wo_n];
                                if ti < 0 || ti >= t as isize || hi < 0 || hi >= h as isize {
                                    run.fill(T::zero());
                                    continue;
                                }
                                let src = &x[((c * t + ti as usize) * h + hi as usize) * w..][..w];
                                if sw == 1 {
                                    let (lo, hi) = unit_stride_span(w, wo_n, dw as isize - pw);
                                    let shift = dw as isize - pw;
                                    run[..lo].fill(T::zero());
                                    run[lo..hi].copy_from_slice(&src[(lo as isize + shift) as usize..(hi as isize + shift) as usize]);
                                    run[hi..].fill(T::zero());
                                    continue;
                                }
                                for (wo, v) in run.iter_mut().enumerate() {
                                    let wi = (wo * sw + dw) as isize - pw;
                                    *v = if wi >= 0 && wi < w as isize { src[wi as usize] } else { T::zero() };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], dims: (usize, usize, usize), out: (usize, usize, usize), dx: &mut [T]) {
        let (t, h, w) = dims;
        let (to_n, ho_n, wo_n) = out;
        let p = to_n * ho_n * wo_n;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding.map(|v| v as isize);
        let mut row = 0;
        for c in 0..self.in_channels {
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let src = &cols[row * p..(row + 1) * p];
                        row += 1;
                        for to in 0..to_n {
                            let ti = (to * st + dt) as isize - pt;
                            if ti < 0 || ti >= t as isize {
                                continue;
                            }
                            for ho in 0..ho_n {
                                let hi = (ho * sh + dh) as isize - ph;
                                if hi < 0 || hi >= h as isize {
                                    continue;
                                }
                                let base = (to * ho_n + ho) * wo_n;
                                let dst = &mut dx[((c * t + ti as usize) * h + hi as usize) * w..][..w];
                                if sw == 1 {
                                    let (lo, hi) = unit_stride_span(w, wo_n, dw as isize - pw);
                                    let shift = dw as isize - pw;
                                    let d = &mut dst[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                                    for (a, b) in d.iter_mut().zip(&src[base + lo..base + hi]) {
                                        *a += *b;
                                    }
                                    continue;
                                }
                                for wo in 0..wo_n {
                                    let wi = (wo * sw + dw) as isize - pw;
                                    if wi >= 0 && wi < w as isize {
                                        dst[wi as usize] += src[base + wo];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let (n, c, t, h, w) = x.dims5();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (to, ho, wo) = self.output_dims(t, h, w);
        let p = to * ho * wo;
        let k = self.patch_len();
        let mut out = Tensor::zeros(&[n, self.out_channels, to, ho, wo]);
        let in_len = c * t * h * w;
        let out_len = self.out_channels * p;
        let mut cols = std::mem::take(&mut self.cols);
        if !self.is_pointwise() {
            cols.resize(k * p, T::zero());
        }
        for s in 0..n {
            let xs = &x.data()[s * in_len..(s + 1) * in_len];
            let b: &[T] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, (t, h, w), (to, ho, wo), &mut cols);
                &cols
            };
            T::gemm(
                self.out_channels,
                k,
                p,
                T::one(),
                self.weight.value.data(),
                (k as isize, 1),
                b,
                (p as isize, 1),
                T::zero(),
                &mut out.data_mut()[s * out_len..(s + 1) * out_len],
                (p as isize, 1),
            );
        }
        self.cols = cols;
        self.input = Some(x);
        out
    }

    /// Accumulates the weight gradient (unless frozen) and returns the input
    /// gradient when `need_input_grad`.
    pub fn backward(&mut self, dout: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let x = self.input.take().expect("Conv3d::backward called before forward");
        let (n, c, t, h, w) = x.dims5();
        let (_, _, to, ho, wo) = dout.dims5();
        let p = to * ho * wo;
        let k = self.patch_len();
        let in_len = c * t * h * w;
        let out_len = self.out_channels * p;
        let want_weight = !self.weight.frozen;
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        let mut cols = std::mem::take(&mut self.cols);
        let pointwise = self.is_pointwise();
        if !pointwise {
            cols.resize(k * p, T::zero());
        }
        let mut dcols = if need_input_grad && !pointwise { vec![T::zero(); k * p] } else { Vec::new() };
        for s in 0..n {
            let ds = &dout.data()[s * out_len..(s + 1) * out_len];
            if want_weight {
                let xs = &x.data()[s * in_len..(s + 1) * in_len];
                let b: &[T] = if pointwise {
                    xs
                } else {
                    self.im2col(xs, (t, h, w), (to, ho, wo), &mut cols);
                    &cols
                };
                // dW (out × K) += dout (out × P) · colsᵀ (P × K)
                T::gemm(
                    self.out_channels,
                    p,
                    k,
                    T::one(),
                    ds,
                    (p as isize, 1),
                    b,
                    (1, p as isize),
                    T::one(),
                    self.weight.grad.data_mut(),
                    (k as isize, 1),
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.data_mut()[s * in_len..(s + 1) * in_len];
                // dcols (K × P) = Wᵀ (K × out) · dout (out × P)
                let target: &mut [T] = if pointwise { dxs } else { &mut dcols };
                T::gemm(
                    k,
                    self.out_channels,
                    p,
                    T::one(),
                    self.weight.value.data(),
                    (1, k as isize),
                    ds,
                    (p as isize, 1),
                    T::zero(),
                    target,
                    (p as isize, 1),
                );
                if !pointwise {
                    self.col2im(&dcols, (t, h, w), (to, ho, wo), dxs);
                }
            }
        }
        self.cols = cols;
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm3d<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    momentum: f64,
    eps: f64,
    xhat: Option<Tensor<T>>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Real> BatchNorm3d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            xhat: None,
            inv_std: Vec::new(),
            batch_stats: false,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Frozen layers always normalise with running statistics.
    pub fn forward(&mut self, mut x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, t, h, w) = x.dims5();
        assert_eq!(c, self.channels(), "batch norm channels");
        let spatial = t * h * w;
        let count = n * spatial;
        let use_batch = mode == Mode::Train && !self.gamma.frozen;
        let eps = T::from_f64(self.eps);
        let mut means = vec![T::zero(); c];
        let mut vars = vec![T::zero(); c];
        if use_batch {
            for ch in 0..c {
                let mut sum = 0.0f64;
                for s in 0..n {
                    let off = (s * c + ch) * spatial;
                    sum += x.data()[off..off + spatial].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for s in 0..n {
                    let off = (s * c + ch) * spatial;
                    sq += x.data()[off..off + spatial].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
                }
                let var = sq / count as f64;
                means[ch] = T::from_f64(mean);
                vars[ch] = T::from_f64(var);
                let m = self.momentum;
                let unbiased = if count > 1 { var * count as f64 / (count - 1) as f64 } else { var };
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = T::from_f64((1.0 - m) * rm.as_f64() + m * mean);
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = T::from_f64((1.0 - m) * rv.as_f64() + m * unbiased);
            }
        } else {
            means.copy_from_slice(self.running_mean.data());
            vars.copy_from_slice(self.running_var.data());
        }
        self.inv_std = vars.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * spatial;
                let (mean, inv, g, b) =
                    (means[ch], self.inv_std[ch], self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                let xs = &mut x.data_mut()[off..off + spatial];
                let hs = &mut xhat.data_mut()[off..off + spatial];
                for (v, hv) in xs.iter_mut().zip(hs.iter_mut()) {
                    *hv = (*v - mean) * inv;
                    *v = g * *hv + b;
                }
            }
        }
        self.xhat = Some(xhat);
        self.batch_stats = use_batch;
        x
    }

    pub fn backward(&mut self, mut dy: Tensor<T>) -> Tensor<T> {
        let xhat = self.xhat.take().expect("BatchNorm3d::backward called before forward");
        let (n, c, t, h, w) = dy.dims5();
        let spatial = t * h * w;
        let count = T::from_f64((n * spatial) as f64);
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for s in 0..n {
                let off = (s * c + ch) * spatial;
                for (d, x) in dy.data()[off..off + spatial].iter().zip(&xhat.data()[off..off + spatial]) {
                    sum_dy += *d;
                    sum_dy_xhat += *d * *x;
                }
            }
            if !self.gamma.frozen {
                self.gamma.grad.data_mut()[ch] += sum_dy_xhat;
                self.beta.grad.data_mut()[ch] += sum_dy;
            }
            let g = self.gamma.value.data()[ch];
            let inv = self.inv_std[ch];
            for s in 0..n {
                let off = (s * c + ch) * spatial;
                let ds = &mut dy.data_mut()[off..off + spatial];
                let xs = &xhat.data()[off..off + spatial];
                if self.batch_stats {
                    let scale = g * inv / count;
                    for (d, x) in ds.iter_mut().zip(xs) {
                        *d = scale * (count * *d - sum_dy - *x * sum_dy_xhat);
                    }
                } else {
                    let scale = g * inv;
                    for d in ds.iter_mut() {
                        *d *= scale;
                    }
                }
            }
        }
        dy
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.gamma);
        f(join(prefix, "bias"), &mut self.beta);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}

/// In-place ReLU returning the activation mask for the backward pass.
pub fn relu_forward<T: Real>(x: &mut Tensor<T>) -> Vec<bool> {
    x.data_mut()
        .iter_mut()
        .map(|v| {
            if *v > T::zero() {
                true
            } else {
                *v = T::zero();
                false
            }
        })
        .collect()
}

pub fn relu_backward<T: Real>(dy: &mut Tensor<T>, mask: &[bool]) {
    for (d, keep) in dy.data_mut().iter_mut().zip(mask) {
        if !keep {
            *d = T::zero();
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let w = (0..in_features * out_features).map(|_| T::from_f64(uniform.sample(rng))).collect();
        let b = (0..out_features).map(|_| T::from_f64(uniform.sample(rng))).collect();
        Self {
            weight: Param::new(Tensor::from_vec(&[out_features, in_features], w)),
            bias: Param::new(Tensor::from_vec(&[out_features], b)),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// `x` is `N × in`; returns `N × out`.
    pub fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let n = x.shape()[0];
        let (inf, outf) = (self.in_features(), self.out_features());
        let mut y = Tensor::zeros(&[n, outf]);
        for s in 0..n {
            for o in 0..outf {
                let w = &self.weight.value.data()[o * inf..(o + 1) * inf];
                let xs = &x.data()[s * inf..(s + 1) * inf];
                let dot: T = w.iter().zip(xs).map(|(a, b)| *a * *b).sum();
                y.data_mut()[s * outf + o] = dot + self.bias.value.data()[o];
            }
        }
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("Linear::backward called before forward");
        let n = x.shape()[0];
        let (inf, outf) = (self.in_features(), self.out_features());
        let mut dx = Tensor::zeros(x.shape());
        for s in 0..n {
            for o in 0..outf {
                let d = dy.data()[s * outf + o];
                if !self.weight.frozen {
                    let gw = &mut self.weight.grad.data_mut()[o * inf..(o + 1) * inf];
                    for (g, xv) in gw.iter_mut().zip(&x.data()[s * inf..(s + 1) * inf]) {
                        *g += d * *xv;
                    }
                    self.bias.grad.data_mut()[o] += d;
                }
                let w = &self.weight.value.data()[o * inf..(o + 1) * inf];
                for (dxv, wv) in dx.data_mut()[s * inf..(s + 1) * inf].iter_mut().zip(w) {
                    *dxv += d * *wv;
                }
            }
        }
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
