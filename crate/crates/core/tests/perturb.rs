mod common;

use std::collections::BTreeMap;

use foresight_core::clipset::{build_folds, AxisOrder, ClipTensor, Normalization};
use foresight_core::perturb::{
    blur_region, evaluate_perturbed, frame_permutation, noise_region, read_results_csv, reverse_frames, shuffle_frames,
    subsample_frames, write_results_csv, FrameSelection, ModelSource, Perturbation, PerturbationKind, Region,
};
use foresight_core::trainer::{evaluate_fold, initial_network, CvOptions, Level};
use foresight_core::CoreError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{small_synth, synthetic_store, tiny_train_config};

fn random_clip(frames: usize, h: usize, w: usize, seed: u64) -> ClipTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..frames * 3 * h * w).map(|_| rng.random::<f32>()).collect();
    ClipTensor::new(values, frames, h, w, AxisOrder::Fchw, None).unwrap()
}

/// Clip whose frame `f` is filled with the constant `f`.
fn numbered_clip(frames: usize) -> ClipTensor {
    let (h, w) = (3, 2);
    let values = (0..frames).flat_map(|f| std::iter::repeat_n(f as f32, 3 * h * w)).collect();
    ClipTensor::new(values, frames, h, w, AxisOrder::Fchw, None).unwrap()
}

fn frame_ids(clip: &ClipTensor) -> Vec<usize> {
    (0..clip.frames()).map(|f| clip.get(f, 0, 0, 0) as usize).collect()
}

/// Direct 2D Gaussian convolution with whole-sample reflection at `(y, x)`.
fn blur_oracle(clip: &ClipTensor, f: usize, c: usize, y: usize, x: usize, sigma: f64) -> f64 {
    let (h, w) = (clip.height() as isize, clip.width() as isize);
    let r = (4.0 * sigma).ceil() as isize;
    let reflect = |i: isize, n: isize| {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let (mut acc, mut norm) = (0.0, 0.0);
    for dy in -r..=r {
        for dx in -r..=r {
            let k = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
            norm += k;
            acc += k * f64::from(clip.get(f, c, reflect(y as isize + dy, h), reflect(x as isize + dx, w)));
        }
    }
    acc / norm
}

#[test]
fn zero_sigma_is_the_identity() {
    let clip = random_clip(4, 12, 10, 1);
    assert_eq!(blur_region(&clip, Region::Top(0.6), 0.0), clip);
    let p = Perturbation { sigma: 0.0, ..Perturbation::new(PerturbationKind::BlurTop) };
    assert_eq!(p.apply(&clip), clip);
    assert_eq!(Perturbation::new(PerturbationKind::None).apply(&clip), clip);
}

#[test]
fn blur_matches_direct_convolution_and_spares_other_rows() {
    let clip = random_clip(2, 20, 14, 2);
    let sigma = 1.3;
    for region in [Region::Top(0.6), Region::Bottom(0.4)] {
        let out = blur_region(&clip, region, sigma);
        let (start, end) = region.rows(20);
        assert_eq!((end - start), if matches!(region, Region::Top(_)) { 12 } else { 8 });
        for f in 0..2 {
            for c in 0..3 {
                for y in 0..20 {
                    let a = f64::from(region.weight(y, 20));
                    for x in 0..14 {
                        let got = out.get(f, c, y, x);
                        let orig = clip.get(f, c, y, x);
                        if y < start || y >= end {
                            assert_eq!(got.to_bits(), orig.to_bits(), "row {y} outside the region changed");
                        } else {
                            let want = (1.0 - a) * f64::from(orig) + a * blur_oracle(&clip, f, c, y, x, sigma);
                            assert!((f64::from(got) - want).abs() < 1e-5, "{region:?} ({y},{x}): {got} vs {want}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn blend_band_ramps_into_the_region() {
    let top = Region::Top(0.6);
    let (_, end) = top.rows(112);
    assert_eq!(end, 67);
    let weights: Vec<f32> = (60..70).map(|y| top.weight(y, 112)).collect();
    assert_eq!(weights, [1.0, 1.0, 1.0, 1.0, 0.75, 0.5, 0.25, 0.0, 0.0, 0.0]);
    let bottom = Region::Bottom(0.4);
    let (start, _) = bottom.rows(112);
    assert_eq!(start, 67);
    let weights: Vec<f32> = (65..72).map(|y| bottom.weight(y, 112)).collect();
    assert_eq!(weights, [0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0]);
    assert_eq!(Region::Top(1.0).weight(111, 112), 1.0);
}

#[test]
fn gaussian_blurs_compose_in_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (64, 64);
    let values = (0..3 * h * w).map(|_| rng.random::<f32>()).collect();
    let clip = ClipTensor::new(values, 1, h, w, AxisOrder::Fchw, None).unwrap();
    let all = Region::Top(1.0);
    let twice = blur_region(&blur_region(&clip, all, 3.0), all, 4.0);
    let once = blur_region(&clip, all, 5.0);
    for c in 0..3 {
        for y in 22..42 {
            for x in 22..42 {
                let d = (twice.get(0, c, y, x) - once.get(0, c, y, x)).abs();
                assert!(d < 1e-4, "({c},{y},{x}) differs by {d}");
            }
        }
    }
}

#[test]
fn blur_is_layout_independent_and_scales_with_clip_size() {
    let clip = random_clip(3, 16, 16, 4);
    let p = Perturbation::new(PerturbationKind::BlurBottom);
    let a = p.apply(&clip);
    let b = p.apply(&clip.to_order(AxisOrder::Cfhw));
    assert_eq!(b.axis_order(), AxisOrder::Cfhw);
    assert_eq!(b.to_order(AxisOrder::Fchw), a);
    // sigma is given at 112-pixel scale
    assert_eq!(a, blur_region(&clip, Region::Bottom(0.4), 8.0 * 16.0 / 112.0));
}

#[test]
fn noise_degradation_is_seeded_and_local() {
    let clip = random_clip(2, 10, 10, 5);
    let a = noise_region(&clip, Region::Top(0.5), 0.1, 7);
    assert_eq!(a, noise_region(&clip, Region::Top(0.5), 0.1, 7));
    assert_ne!(a, noise_region(&clip, Region::Top(0.5), 0.1, 8));
    for f in 0..2 {
        for y in 5..10 {
            assert_eq!(a.get(f, 1, y, 3), clip.get(f, 1, y, 3));
        }
    }
}

#[test]
fn frame_selections_pick_the_documented_frames() {
    let clip = numbered_clip(16);
    let uniform = subsample_frames(&clip, FrameSelection::Uniform8).unwrap();
    // 1-based frames 1, 3, ..., 15
    assert_eq!(frame_ids(&uniform), [0, 2, 4, 6, 8, 10, 12, 14]);
    assert_eq!(frame_ids(&subsample_frames(&clip, FrameSelection::First2).unwrap()), [0, 1]);
    assert_eq!(frame_ids(&subsample_frames(&clip, FrameSelection::Last2).unwrap()), [14, 15]);
    assert_eq!(subsample_frames(&clip, FrameSelection::All).unwrap(), clip);
    assert!(matches!(
        subsample_frames(&uniform, FrameSelection::Uniform8),
        Err(CoreError::WrongFrameCount { expected: 16, got: 8 })
    ));
    let cfhw = subsample_frames(&clip.to_order(AxisOrder::Cfhw), FrameSelection::Last2).unwrap();
    assert_eq!(cfhw.axis_order(), AxisOrder::Cfhw);
    assert_eq!(frame_ids(&cfhw), [14, 15]);
}

#[test]
fn reverse_is_an_involution() {
    let clip = random_clip(16, 4, 5, 6);
    let r = reverse_frames(&clip);
    assert_eq!(frame_ids(&reverse_frames(&numbered_clip(16))), (0..16).rev().collect::<Vec<_>>());
    assert_ne!(r, clip);
    assert_eq!(reverse_frames(&r), clip);
}

#[test]
fn shuffle_is_seeded_and_preserves_frames() {
    let clip = numbered_clip(16);
    let a = shuffle_frames(&clip, 11);
    assert_eq!(a, shuffle_frames(&clip, 11));
    assert_ne!(frame_ids(&a), frame_ids(&shuffle_frames(&clip, 12)));
    let mut ids = frame_ids(&a);
    ids.sort();
    assert_eq!(ids, (0..16).collect::<Vec<_>>());
    assert_eq!(frame_ids(&a), frame_permutation(16, 11));

    let mut same = random_clip(1, 4, 4, 7).values().to_vec();
    same = same.repeat(16);
    let constant = ClipTensor::new(same, 16, 4, 4, AxisOrder::Fchw, None).unwrap();
    assert_eq!(shuffle_frames(&constant, 3), constant);
}

#[test]
fn shuffle_permutations_are_uniform() {
    let mut counts: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let n = 1000;
    for seed in 0..n {
        *counts.entry(frame_permutation(4, seed)).or_default() += 1.0;
    }
    assert_eq!(counts.len(), 24);
    let expected = n as f64 / 24.0;
    let chi2: f64 = counts.values().map(|o| (o - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(23.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi-square {chi2}, p = {p}");
}

#[test]
fn normalization_commutes_with_temporal_perturbations() {
    let clip = random_clip(16, 5, 4, 8);
    let norm = Normalization::KINETICS;
    assert_eq!(reverse_frames(&clip.clone().normalized(norm)), reverse_frames(&clip).normalized(norm));
    assert_eq!(shuffle_frames(&clip.clone().normalized(norm), 2), shuffle_frames(&clip, 2).normalized(norm));
}

#[test]
fn kinds_parse_and_validate() {
    for kind in PerturbationKind::ALL {
        assert_eq!(kind.as_str().parse::<PerturbationKind>().unwrap(), kind);
    }
    assert!("sideways".parse::<PerturbationKind>().is_err());
    let bad = Perturbation { region_fraction: Some(1.0), ..Perturbation::new(PerturbationKind::BlurTop) };
    assert!(bad.validate().is_err());
    let bad = Perturbation { sigma: -1.0, ..Perturbation::new(PerturbationKind::BlurTop) };
    assert!(bad.validate().is_err());
    assert!(Perturbation::new(PerturbationKind::Last2).requires_retraining());
    assert!(!Perturbation::new(PerturbationKind::Shuffle).requires_retraining());
}

#[test]
fn evaluation_pairs_models_with_conditions() {
    let (store, manifest) = synthetic_store(small_synth(6, 9), 16);
    let plan = build_folds(&manifest, 2, 1, 0).unwrap();
    let cfg = tiny_train_config(1);
    let mut models: BTreeMap<String, _> =
        plan.folds.iter().map(|f| (f.id(), initial_network(&cfg, None).unwrap())).collect();

    let none = Perturbation::new(PerturbationKind::None);
    let eval = evaluate_perturbed(ModelSource::Trained(&mut models), &store, &none, &plan, "m", Level::Fold).unwrap();
    for (fold, got) in plan.folds.iter().zip(&eval.folds) {
        let net = models.get_mut(&fold.id()).unwrap();
        let want = evaluate_fold(net, &store, fold, FrameSelection::All, 4, None).unwrap();
        assert_eq!(got, &want, "`none` reproduces the plain evaluation");
    }
    assert_eq!(eval.summary.len(), 5);

    let uniform8 = Perturbation::new(PerturbationKind::Uniform8);
    assert!(matches!(
        evaluate_perturbed(ModelSource::Trained(&mut models), &store, &uniform8, &plan, "m", Level::Fold),
        Err(CoreError::MismatchedPairing { .. })
    ));
    let blur = Perturbation::new(PerturbationKind::BlurTop);
    let recipe = ModelSource::Recipe { cfg: &cfg, opts: CvOptions::default() };
    assert!(matches!(
        evaluate_perturbed(recipe, &store, &blur, &plan, "m", Level::Fold),
        Err(CoreError::MismatchedPairing { .. })
    ));

    let recipe = ModelSource::Recipe { cfg: &cfg, opts: CvOptions::default() };
    let retrained = evaluate_perturbed(recipe, &store, &uniform8, &plan, "m8", Level::Fold).unwrap();
    assert_eq!(retrained.folds.len(), 2);
    assert!(retrained.folds.iter().all(|f| f.predictions.len() == 15));

    let mut eight: BTreeMap<String, _> = plan
        .folds
        .iter()
        .map(|f| (f.id(), initial_network(&cfg.with_selection(FrameSelection::Uniform8), None).unwrap()))
        .collect();
    assert!(matches!(
        evaluate_perturbed(ModelSource::Trained(&mut eight), &store, &blur, &plan, "m", Level::Fold),
        Err(CoreError::MismatchedPairing { .. })
    ));

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("results.csv");
    write_results_csv(&path, &[eval.clone(), retrained.clone()]).unwrap();
    let rows = read_results_csv(&path).unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0].0, "none");
    assert_eq!(rows[5].0, "uniform8");
    assert_eq!(rows[3].1, eval.summary[3]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("perturbation,period,mean_accuracy,margin,n,model_id,seed\n"));
}
