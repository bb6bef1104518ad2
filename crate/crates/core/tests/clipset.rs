use std::collections::{BTreeMap, BTreeSet};

use foresight_core::clipset::storage::{self, FrameFormat};
use foresight_core::clipset::{
    build_folds, frame_indices, period_window, resize_bilinear, segment_video, validate_schedule, CueKind, DatasetManifest,
    Label, ManifestEntry, Provenance, SynthConfig, SyntheticGenerator, TrialVideo,
};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn indexed_trial(fps: f64, n: usize, decision: f64) -> TrialVideo {
    TrialVideo {
        trial_id: "t".into(),
        frames: (0..n).map(|i| RgbImage::from_pixel(2, 2, Rgb([(i % 256) as u8, (i / 256) as u8, 0]))).collect(),
        width_px: 2,
        height_px: 2,
        fps,
        label: Label::Collide,
        decision_time_s: decision,
    }
}

/// Index of the frame whose timestamp is closest to `t`, scanning all frames.
fn brute_nearest(t: f64, fps: f64, n: usize) -> usize {
    let mut best = 0;
    for i in 1..n {
        let (d_best, d_i) = ((best as f64 / fps - t).abs(), (i as f64 / fps - t).abs());
        if d_i < d_best - 1e-12 {
            best = i;
        }
    }
    best
}

#[test]
fn resampler_matches_brute_force_nearest_frame() {
    for &(fps, decision) in &[(30.0f64, 5.0f64), (29.97, 6.123), (25.0, 4.5), (60.0, 4.51), (12.5, 7.0), (32.0, 4.5)] {
        let n = ((decision + 0.5) * fps).ceil() as usize + 2;
        let trial = indexed_trial(fps, n, decision);
        for p in 1..=5u8 {
            let (start, _) = period_window(p);
            let got = frame_indices(&trial, p);
            assert_eq!(got.len(), 16);
            for (j, &idx) in got.iter().enumerate() {
                let t = decision + start + j as f64 * 0.5 / 16.0;
                assert_eq!(idx, brute_nearest(t, fps, n), "fps {fps} period {p} slot {j}");
            }
            assert!(got.windows(2).all(|w| w[0] <= w[1]));
        }
        let segments = segment_video(&trial).unwrap();
        assert_eq!(segments.len(), 5);
        for s in &segments {
            assert_eq!(s.frames.len(), 16);
            assert_eq!(s.window, period_window(s.period));
        }
    }
}

/// Direct half-pixel bilinear sample of channel `c` at output pixel (oy, ox).
fn bilinear_oracle(img: &RgbImage, oh: usize, ow: usize, c: usize, oy: usize, ox: usize) -> f64 {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let sy = ((oy as f64 + 0.5) * h / oh as f64 - 0.5).clamp(0.0, h - 1.0);
    let sx = ((ox as f64 + 0.5) * w / ow as f64 - 0.5).clamp(0.0, w - 1.0);
    let mut acc = 0.0;
    for yy in 0..img.height() {
        for xx in 0..img.width() {
            let ky = (1.0 - (sy - f64::from(yy)).abs()).max(0.0);
            let kx = (1.0 - (sx - f64::from(xx)).abs()).max(0.0);
            acc += ky * kx * f64::from(img.get_pixel(xx, yy)[c]);
        }
    }
    acc / 255.0
}

#[test]
fn bilinear_resize_matches_tent_filter_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(w, h, ow, oh) in &[(13, 9, 7, 7), (5, 4, 11, 9), (20, 16, 8, 8), (9, 9, 9, 9), (1, 6, 3, 2)] {
        let img = RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        let out = resize_bilinear(&img, oh, ow);
        assert_eq!(out.len(), 3 * oh * ow);
        for c in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let got = f64::from(out[(c * oh + oy) * ow + ox]);
                    let want = bilinear_oracle(&img, oh, ow, c, oy, ox);
                    assert!((got - want).abs() <= 1e-5, "{w}x{h}->{ow}x{oh} c{c} ({oy},{ox}): {got} vs {want}");
                }
            }
        }
    }
}

fn manifest_with(labels: &[Label]) -> DatasetManifest {
    let entries = labels
        .iter()
        .enumerate()
        .flat_map(|(i, &label)| {
            (1..=5u8).map(move |p| {
                let (s, e) = period_window(p);
                ManifestEntry {
                    trial_id: format!("t{i:03}"),
                    period: p,
                    label,
                    window_start_s: s,
                    window_end_s: e,
                    path: format!("seg/t{i:03}_p{p}").into(),
                    provenance: Provenance::Synthetic,
                }
            })
        })
        .collect();
    DatasetManifest::new(entries, "/data").unwrap()
}

#[test]
fn folds_partition_trials_and_stratify_labels() {
    let labels: Vec<Label> = (0..74).map(|i| if i % 74 < 23 { Label::Fall } else { Label::Collide }).collect();
    let manifest = manifest_with(&labels);
    let label_of = manifest.trial_labels();
    let all: BTreeSet<String> = label_of.keys().cloned().collect();
    let plan = build_folds(&manifest, 5, 20, 3).unwrap();
    assert_eq!(plan.folds.len(), 100);
    for r in 0..20 {
        let folds: Vec<_> = plan.folds.iter().filter(|f| f.repeat == r).collect();
        assert_eq!(folds.iter().map(|f| f.fold).collect::<Vec<_>>(), (0..5).collect::<Vec<_>>());
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &folds {
            let test: BTreeSet<String> = f.test_trials.iter().cloned().collect();
            let train: BTreeSet<String> = f.train_trials.iter().cloned().collect();
            assert!(test.is_disjoint(&train));
            assert_eq!(test.union(&train).cloned().collect::<BTreeSet<_>>(), all);
            for t in &f.test_trials {
                *seen.entry(t).or_default() += 1;
            }
            assert!((14..=15).contains(&f.test_trials.len()), "{}", f.test_trials.len());
            let falls = f.test_trials.iter().filter(|t| label_of[*t] == Label::Fall).count();
            assert!((4..=5).contains(&falls), "fold {} has {falls} fall trials", f.id());
        }
        assert_eq!(seen.len(), 74);
        assert!(seen.values().all(|&c| c == 1));
    }
    assert_eq!(build_folds(&manifest, 5, 20, 3).unwrap(), plan);
    let other = build_folds(&manifest, 5, 20, 4).unwrap();
    assert_ne!(other.folds[0].test_trials, plan.folds[0].test_trials);
    assert_ne!(plan.folds[0].test_trials, plan.folds[5].test_trials, "repeats reshuffle");
}

#[test]
fn folds_enumerate_every_split_of_a_tiny_set() {
    // Two trials of each label and k = 2: every fold holds one of each, so
    // across many repeats all four test sets appear.
    let manifest = manifest_with(&[Label::Fall, Label::Fall, Label::Collide, Label::Collide]);
    let plan = build_folds(&manifest, 2, 64, 0).unwrap();
    let mut sets = BTreeSet::new();
    for f in &plan.folds {
        assert_eq!(f.test_trials.len(), 2);
        assert_eq!(f.train_trials.len(), 2);
        sets.insert(f.test_trials.clone());
    }
    let expected: BTreeSet<Vec<String>> = [("t000", "t002"), ("t000", "t003"), ("t001", "t002"), ("t001", "t003")]
        .iter()
        .map(|(a, b)| vec![a.to_string(), b.to_string()])
        .collect();
    assert_eq!(sets, expected);
}

#[test]
fn folds_reject_bad_parameters() {
    let manifest = manifest_with(&[Label::Fall, Label::Fall, Label::Collide, Label::Collide]);
    assert!(build_folds(&manifest, 1, 1, 0).is_err());
    assert!(build_folds(&manifest, 2, 0, 0).is_err());
    assert!(build_folds(&manifest, 3, 1, 0).is_err());
}

/// Horizontal centroid of marker pixels (darker than the sky) in a frame.
fn marker_x(img: &RgbImage) -> f64 {
    let horizon = (0.6 * f64::from(img.height())) as u32;
    let (mut sum, mut mass) = (0.0, 0.0);
    for y in 0..horizon {
        // the sky is constant along a row, so its brightest pixel is background
        let bg = (0..img.width()).map(|x| img.get_pixel(x, y)[0]).max().unwrap();
        for x in 0..img.width() {
            let darkness = f64::from(bg - img.get_pixel(x, y)[0]);
            sum += darkness * f64::from(x);
            mass += darkness;
        }
    }
    assert!(mass > 0.0, "marker not visible");
    sum / mass
}

#[test]
fn synthetic_motion_cue_grows_with_period() {
    let schedule = vec![0.1, 0.2, 0.4, 0.7, 1.0];
    let cfg = SynthConfig { n_trials: 6, schedule: schedule.clone(), noise: 0.0, width: 96, height: 64, ..SynthConfig::default() };
    let generator = SyntheticGenerator::new(cfg.clone()).unwrap();
    for i in 0..generator.len() {
        let trial = generator.trial(i);
        let segments = segment_video(&trial).unwrap();
        let dir = if trial.label == Label::Fall { 1.0 } else { -1.0 };
        let mut travel = Vec::new();
        for s in &segments {
            let d = marker_x(&s.frames[15]) - marker_x(&s.frames[0]);
            // 16 slots cover 15/16 of the window
            let expected = dir * schedule[usize::from(s.period) - 1] * cfg.max_drift * f64::from(cfg.width) * 15.0 / 16.0;
            assert!((d - expected).abs() < 0.5, "trial {i} period {}: {d} vs {expected}", s.period);
            travel.push(d * dir);
        }
        assert!(travel.windows(2).all(|w| w[1] > w[0]), "{travel:?}");
    }
}

#[test]
fn synthetic_static_cue_has_no_motion() {
    let cfg = SynthConfig { n_trials: 4, noise: 0.0, cue: CueKind::Static, ..SynthConfig::default() };
    let generator = SyntheticGenerator::new(cfg).unwrap();
    for trial in generator.trials() {
        for s in segment_video(&trial).unwrap() {
            assert!(s.frames.windows(2).all(|w| w[0] == w[1]), "static cue frames differ within a period");
        }
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let cfg = SynthConfig { n_trials: 3, ..SynthConfig::default() };
    let a = SyntheticGenerator::new(cfg.clone()).unwrap().trial(2);
    let b = SyntheticGenerator::new(cfg.clone()).unwrap().trial(2);
    assert_eq!(a.frames, b.frames);
    let c = SyntheticGenerator::new(SynthConfig { seed: 1, ..cfg }).unwrap().trial(2);
    assert_ne!(a.frames, c.frames);
}

#[test]
fn schedules_must_be_five_non_decreasing_unit_values() {
    assert!(validate_schedule(&[0.0, 0.0, 0.5, 0.5, 1.0]).is_ok());
    for bad in [&[0.1, 0.2, 0.3, 0.4][..], &[0.5, 0.4, 0.6, 0.7, 0.8], &[0.1, 0.2, 0.3, 0.4, 1.5], &[-0.1, 0.2, 0.3, 0.4, 0.5]] {
        assert!(validate_schedule(bad).is_err(), "{bad:?}");
    }
    assert!(validate_schedule(&[0.1, 0.2, f64::NAN, 0.4, 0.5]).is_err());
}

#[test]
fn seventy_four_trials_prepare_into_a_balanced_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let trials = tmp.path().join("trials");
    let generator = SyntheticGenerator::new(SynthConfig { width: 16, height: 12, ..SynthConfig::default() }).unwrap();
    for (i, trial) in generator.trials().enumerate() {
        let format = if i % 2 == 0 { FrameFormat::Png } else { FrameFormat::Rgb24 };
        storage::write_trial(&trials, &trial, format, Provenance::Synthetic).unwrap();
    }
    let out = tmp.path().join("data");
    let manifest = storage::prepare(&trials, &out).unwrap();
    assert_eq!(manifest.entries().len(), 370);
    assert_eq!(manifest.trial_count(), 74);
    let by_period = manifest.counts_by_period();
    assert_eq!(by_period.len(), 5);
    for counts in by_period.values() {
        assert_eq!((counts.fall, counts.collide), (23, 51));
    }
    assert_eq!(manifest.provenance(), Some(Provenance::Synthetic));

    let reread = DatasetManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(reread.entries(), manifest.entries());
    let entry = &reread.entries()[7];
    let seg = storage::read_segment(&reread, entry).unwrap();
    assert_eq!(seg.frames.len(), 16);
    assert_eq!((seg.trial_id.as_str(), seg.period), (entry.trial_id.as_str(), entry.period));
    let original = generator.trial(1);
    let segs = segment_video(&original).unwrap();
    let stored = storage::read_segment(&reread, &reread.entries()[5]).unwrap();
    assert_eq!(stored.frames, segs[0].frames, "stored segment matches re-segmented footage");
}

#[test]
fn manifest_rejects_inconsistent_entries() {
    let good = manifest_with(&[Label::Fall]);
    let mut entries = good.entries().to_vec();
    entries.pop();
    assert!(DatasetManifest::new(entries, "/").is_err());
    let mut entries = good.entries().to_vec();
    entries[2].label = Label::Collide;
    assert!(DatasetManifest::new(entries, "/").is_err());
    let mut entries = good.entries().to_vec();
    entries[1].window_start_s += 0.1;
    assert!(DatasetManifest::new(entries, "/").is_err());
}
