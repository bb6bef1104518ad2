use foresight_core::clipset::{AxisOrder, ClipTensor, Label, Normalization, Segment};
use foresight_core::explain::{export_overlays, grad_cam, grad_cam_batch, overlay, upsample_trilinear, AttentionMap, CamModel, Colormap};
use foresight_core::r2p1d::{BlockSpec, Mode, Network, NetworkConfig, StageSpec, Tensor};
use foresight_core::Result;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_clip(frames: usize, size: usize, seed: u64) -> ClipTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..frames * 3 * size * size).map(|_| rng.random::<f32>()).collect();
    ClipTensor::new(values, frames, size, size, AxisOrder::Fchw, None).unwrap()
}

fn small_config() -> NetworkConfig {
    let mut cfg = NetworkConfig::scaled(16);
    cfg.stem = BlockSpec::new([3, 3, 3], 3, 4, [1, 2, 2]);
    cfg.stages = vec![StageSpec { channels: 4, blocks: 1, stride: 1 }, StageSpec { channels: 6, blocks: 1, stride: 2 }];
    cfg
}

/// Activation is the network input itself and the logit is its sum, so the
/// gradient with respect to the activation is the logit gradient broadcast.
struct SumScoreModel {
    shape: Vec<usize>,
}

impl CamModel for SumScoreModel {
    type Elem = f64;

    fn capture(&mut self, x: Tensor<f64>, _layer: &str) -> Result<(Vec<f64>, Tensor<f64>)> {
        self.shape = x.shape().to_vec();
        let per: usize = self.shape[1..].iter().product();
        let logits = x.data().chunks(per).map(|c| c.iter().sum()).collect();
        Ok((logits, x))
    }

    fn gradient(&mut self, dlogits: &[f64], _layer: &str) -> Result<Tensor<f64>> {
        let per: usize = self.shape[1..].iter().product();
        let data = dlogits.iter().flat_map(|d| std::iter::repeat_n(*d, per)).collect();
        Ok(Tensor::from_vec(&self.shape, data))
    }
}

#[test]
fn sum_score_map_is_the_rectified_channel_sum() {
    let clip = random_clip(4, 6, 1);
    let normalized = clip.clone().normalized(Normalization::KINETICS);
    for (target, sign) in [(Label::Collide, 1.0), (Label::Fall, -1.0)] {
        let map = grad_cam(&mut SumScoreModel { shape: Vec::new() }, &clip, target, "input").unwrap();
        assert_eq!(map.dims, [4, 6, 6]);
        assert!(map.channel_weights.iter().all(|w| (w - sign).abs() < 1e-12));
        let raw: Vec<f64> = (0..4 * 36)
            .map(|j| {
                let (f, y, x) = (j / 36, (j / 6) % 6, j % 6);
                let s: f64 = (0..3).map(|c| f64::from(normalized.get(f, c, y, x))).sum();
                (sign * s).max(0.0)
            })
            .collect();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        assert!((map.raw_max - max).abs() < 1e-6);
        for (j, v) in map.values.iter().enumerate() {
            assert!((f64::from(*v) - raw[j] / max).abs() < 1e-6, "{target:?} {j}");
        }
        // same resolution: upsampling is the identity
        for (f, plane) in map.upsampled.iter().enumerate() {
            assert_eq!(plane.as_slice(), &map.values[f * 36..(f + 1) * 36]);
        }
    }
}

fn network(seed: u64) -> Network<f64> {
    Network::<f64>::build(&small_config(), 8, seed).unwrap()
}

#[test]
fn zero_head_gives_an_all_zero_map() {
    let mut net = network(2);
    let (w, _) = net.head_mut();
    w.value.fill(0.0);
    let map = grad_cam(&mut net, &random_clip(8, 16, 3), Label::Collide, "conv3").unwrap();
    assert_eq!(map.raw_max, 0.0);
    assert!(map.values.iter().all(|v| *v == 0.0));
    assert!(map.upsampled.iter().flatten().all(|v| *v == 0.0));
    assert!(map.mass_fraction(0, 8).is_nan());
}

#[test]
fn channel_weights_match_finite_differences() {
    let mut net = network(4);
    let clip = random_clip(8, 16, 5);
    for layer in ["conv2", "conv3"] {
        let map = grad_cam(&mut net, &clip, Label::Fall, layer).unwrap();
        let x = Tensor::from_vec(
            &[1, 3, 8, 16, 16],
            clip.clone()
                .normalized(Normalization::KINETICS)
                .to_order(AxisOrder::Cfhw)
                .values()
                .iter()
                .map(|v| f64::from(*v))
                .collect(),
        );
        let (_, act) = net.forward_capture(x, Mode::Eval, layer).unwrap();
        let (_, c, t, h, w) = act.dims5();
        let vol = t * h * w;
        let eps = 1e-5;
        for ch in 0..c {
            let mut shifted = |delta: f64| {
                let mut a = act.clone();
                a.data_mut()[ch * vol..(ch + 1) * vol].iter_mut().for_each(|v| *v += delta);
                // fall score is the negated collide logit
                -net.forward_from(layer, a, Mode::Eval).unwrap()[0]
            };
            let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps * vol as f64);
            let analytic = map.channel_weights[ch];
            assert!((analytic - numeric).abs() < 1e-3, "{layer} channel {ch}: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn map_is_invariant_to_positive_logit_scaling() {
    let clip = random_clip(8, 16, 6);
    let mut net = network(7);
    let base = grad_cam(&mut net, &clip, Label::Collide, "conv3").unwrap();
    let (w, b) = net.head_mut();
    w.value.data_mut().iter_mut().for_each(|v| *v *= 3.5);
    b.value.data_mut().iter_mut().for_each(|v| *v *= 3.5);
    let scaled = grad_cam(&mut net, &clip, Label::Collide, "conv3").unwrap();
    assert!(base.raw_max > 0.0);
    assert!((scaled.raw_max / base.raw_max - 3.5).abs() < 1e-9);
    for (a, b) in base.values.iter().zip(&scaled.values) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn batch_maps_equal_single_clip_maps() {
    let mut net = network(8);
    let clips: Vec<ClipTensor> = (0..8).map(|i| random_clip(8, 16, 100 + i)).collect();
    let refs: Vec<&ClipTensor> = clips.iter().collect();
    let batch = grad_cam_batch(&mut net, &refs, Label::Fall, "conv3").unwrap();
    assert_eq!(batch.len(), 8);
    for (clip, from_batch) in clips.iter().zip(&batch) {
        let single = grad_cam(&mut net, clip, Label::Fall, "conv3").unwrap();
        assert_eq!(single.dims, from_batch.dims);
        for (a, b) in single.values.iter().zip(&from_batch.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    let pre = clips[0].clone().normalized(Normalization::KINETICS);
    let again = grad_cam(&mut net, &pre, Label::Fall, "conv3").unwrap();
    assert_eq!(again.values, grad_cam(&mut net, &clips[0], Label::Fall, "conv3").unwrap().values);
}

#[test]
fn unknown_layer_is_an_error() {
    let mut net = network(9);
    assert!(grad_cam(&mut net, &random_clip(8, 16, 1), Label::Fall, "conv9").is_err());
}

fn segment(frames: usize, w: u32, h: u32) -> Segment {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    Segment {
        trial_id: "t".into(),
        period: 5,
        frames: (0..frames).map(|_| RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))).collect(),
        window: (-2.5, -2.0),
        label: Label::Collide,
    }
}

fn constant_map(value: f32, frames: usize) -> AttentionMap {
    AttentionMap {
        values: vec![value; 2 * 2 * 2],
        dims: [2, 2, 2],
        upsampled: vec![vec![value; 8 * 8]; frames],
        height: 8,
        width: 8,
        target: Label::Collide,
        layer: "conv5".into(),
        raw_max: f64::from(value),
        channel_weights: vec![1.0],
    }
}

#[test]
fn zero_map_leaves_frames_untouched() {
    let seg = segment(16, 20, 12);
    let frames = overlay(&constant_map(0.0, 16), &seg, Colormap::Jet, 0.5).unwrap();
    assert_eq!(frames.len(), 16);
    assert_eq!(frames, seg.frames);
}

#[test]
fn full_heat_blends_toward_the_top_colour() {
    let seg = segment(16, 20, 12);
    for (alpha, colormap, top) in [(0.5, Colormap::Jet, [127.5, 0.0, 0.0]), (0.3, Colormap::Hot, [255.0; 3])] {
        let frames = overlay(&constant_map(1.0, 16), &seg, colormap, alpha).unwrap();
        for (out, src) in frames.iter().zip(&seg.frames) {
            assert_eq!(out.dimensions(), (20, 12));
            for (o, s) in out.pixels().zip(src.pixels()) {
                for c in 0..3 {
                    let want = (f64::from(s[c]) * (1.0 - alpha) + top[c] * alpha).round() as u8;
                    assert_eq!(o[c], want);
                }
            }
        }
    }
    assert!(overlay(&constant_map(1.0, 15), &seg, Colormap::Jet, 0.5).is_err());
}

#[test]
fn export_writes_frames_gif_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let seg = segment(16, 20, 12);
    let mut map = constant_map(0.25, 16);
    map.upsampled[3] = vec![1.0; 64];
    let sidecar = export_overlays(tmp.path(), &map, &seg, Colormap::Jet, 0.5, 32.0).unwrap();
    for i in 0..16 {
        let img = image::open(tmp.path().join(format!("frame_{i:02}.png"))).unwrap().into_rgb8();
        assert_eq!(img.dimensions(), (20, 12));
    }
    assert!(tmp.path().join("overlay.gif").metadata().unwrap().len() > 0);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("attention.json")).unwrap()).unwrap();
    assert_eq!(json["period"], 5);
    assert_eq!(json["class"], "collide");
    assert_eq!(sidecar.frame_means.len(), 16);
    assert!((sidecar.frame_means[3] - 1.0).abs() < 1e-12);
    assert!((sidecar.frame_means[0] - 0.25).abs() < 1e-12);
}

#[test]
fn mass_fraction_splits_rows() {
    let mut map = constant_map(0.0, 1);
    for x in 0..8 {
        map.upsampled[0][x] = 1.0;
        map.upsampled[0][7 * 8 + x] = 3.0;
    }
    assert!((map.mass_fraction(0, 4) - 0.25).abs() < 1e-12);
    assert!((map.mass_fraction(0, 8) - 1.0).abs() < 1e-12);
}

/// Half-pixel aligned linear weights along one axis, clamped at the borders.
fn linear_1d(src: &[f64], out: usize) -> Vec<f64> {
    let n = src.len();
    (0..out)
        .map(|i| {
            let p = ((i as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = p.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            src[lo] * (1.0 - (p - lo as f64)) + src[hi] * (p - lo as f64)
        })
        .collect()
}

#[test]
fn upsampling_is_half_pixel_aligned() {
    let row = upsample_trilinear(&[0.0, 1.0], [1, 1, 2], [1, 1, 4]);
    let want = [0.0, 0.25, 0.75, 1.0];
    for (a, b) in row[0].iter().zip(want) {
        assert!((f64::from(*a) - b).abs() < 1e-6);
    }

    // separable oracle on a random volume
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (from, to) = ([2usize, 3, 4], [8usize, 12, 10]);
    let v: Vec<f64> = (0..24).map(|_| rng.random()).collect();
    let along_w: Vec<Vec<f64>> = v.chunks(4).map(|r| linear_1d(r, to[2])).collect();
    let mut along_h = vec![vec![0.0; to[1] * to[2]]; from[0]];
    for t in 0..from[0] {
        for x in 0..to[2] {
            let col: Vec<f64> = (0..from[1]).map(|y| along_w[t * from[1] + y][x]).collect();
            for (y, c) in linear_1d(&col, to[1]).into_iter().enumerate() {
                along_h[t][y * to[2] + x] = c;
            }
        }
    }
    let got = upsample_trilinear(&v, from, to);
    assert_eq!(got.len(), to[0]);
    for j in 0..to[1] * to[2] {
        let line: Vec<f64> = along_h.iter().map(|p| p[j]).collect();
        for (f, want) in linear_1d(&line, to[0]).into_iter().enumerate() {
            assert!((f64::from(got[f][j]) - want).abs() < 1e-5, "frame {f} pixel {j}");
        }
    }
}
