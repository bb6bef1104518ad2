//! Planted-signal trials. A small dark marker sits in the upper image band
//! on a static scene. In the motion variant it drifts left for `collide` and
//! right for `fall`; in the static variant it stands still and its colour
//! tint encodes the label. Cue strength per period scales the label-driven
//! part of the signal, and a per-trial nuisance term shared by all periods
//! blurs it, so a trial recognisable at a weak period stays recognisable at
//! every stronger one.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Label, TrialVideo, FIRST_WINDOW_START_S, PERIODS, SEGMENT_SECONDS};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueKind {
    Motion,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_trials: usize,
    pub schedule: Vec<f64>,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub fall_fraction: f64,
    pub cue: CueKind,
    /// Scales both the per-trial nuisance term and the pixel noise; 0 gives
    /// a noiseless render.
    pub noise: f64,
    /// Standard deviation of the per-trial nuisance, in units of the full
    /// cue (drift velocity or tint).
    pub nuisance_sd: f64,
    /// Standard deviation of per-pixel noise in 8-bit levels.
    pub pixel_noise_sd: f64,
    /// Marker travel over one period at cue strength 1, as a fraction of width.
    pub max_drift: f64,
    /// Vertical band holding the marker centre, as fractions of height.
    pub marker_band: (f64, f64),
    /// Marker side as a fraction of height.
    pub marker_size: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_trials: 74,
            schedule: vec![0.1, 0.2, 0.4, 0.7, 1.0],
            seed: 0,
            width: 64,
            height: 48,
            fps: 32.0,
            fall_fraction: 23.0 / 74.0,
            cue: CueKind::Motion,
            noise: 1.0,
            nuisance_sd: 0.4,
            pixel_noise_sd: 10.0,
            max_drift: 0.25,
            marker_band: (0.15, 0.35),
            marker_size: 0.12,
        }
    }
}

/// Cue strengths must be five values in `[0, 1]`, non-decreasing.
pub fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.len() != PERIODS as usize {
        return Err(CoreError::InvalidSchedule(format!("expected {PERIODS} values, got {}", schedule.len())));
    }
    if let Some(v) = schedule.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CoreError::InvalidSchedule(format!("cue strength {v} outside [0, 1]")));
    }
    if schedule.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoreError::InvalidSchedule(format!("{schedule:?} decreases")));
    }
    Ok(())
}

/// Streams trials one at a time so large sets need not sit in memory.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    config: SynthConfig,
    labels: Vec<Label>,
}

struct Scene {
    background: Vec<f64>,
    marker_y: f64,
}

impl SyntheticGenerator {
    pub fn new(config: SynthConfig) -> Result<Self> {
        validate_schedule(&config.schedule)?;
        if config.n_trials < 2 {
            return Err(CoreError::InvalidConfig(format!("need at least 2 trials, got {}", config.n_trials)));
        }
        if !(0.0..=1.0).contains(&config.fall_fraction) || config.width < 8 || config.height < 8 || config.fps <= 0.0 {
            return Err(CoreError::InvalidConfig("synthetic geometry or label fraction out of range".into()));
        }
        let n_fall = (config.n_trials as f64 * config.fall_fraction).round() as usize;
        let mut labels: Vec<Label> =
            (0..config.n_trials).map(|i| if i < n_fall { Label::Fall } else { Label::Collide }).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_1AB5));
        Ok(Self { config, labels })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn trial_id(i: usize) -> String {
        format!("syn{i:04}")
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    fn scene(&self, rng: &mut ChaCha8Rng) -> Scene {
        let (w, h) = (self.config.width as usize, self.config.height as usize);
        let horizon = (0.6 * h as f64) as usize;
        let mut background = vec![0.0; w * h * 3];
        // sky gradient above the horizon, road below with a few static blotches
        let blotches: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(horizon as f64..h as f64), rng.random_range(-40.0..40.0)))
            .collect();
        for y in 0..h {
            for x in 0..w {
                let px = &mut background[(y * w + x) * 3..][..3];
                if y < horizon {
                    let t = y as f64 / horizon as f64;
                    px.copy_from_slice(&[150.0 + 60.0 * t, 180.0 + 40.0 * t, 230.0 - 10.0 * t]);
                } else {
                    let mut g = 110.0;
                    for (bx, by, amp) in &blotches {
                        let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                        g += amp * (-d2 / 18.0).exp();
                    }
                    px.copy_from_slice(&[g, g, g + 5.0]);
                }
            }
        }
        let (lo, hi) = self.config.marker_band;
        Scene { background, marker_y: rng.random_range(lo..hi) * h as f64 }
    }

    /// Renders trial `i`; identical for identical configs.
    pub fn trial(&self, i: usize) -> TrialVideo {
        let cfg = &self.config;
        let label = self.labels[i];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(i as u64 + 1));
        let scene = self.scene(&mut rng);
        let (w, h) = (cfg.width as usize, cfg.height as usize);
        let dir = match label {
            Label::Collide => -1.0,
            Label::Fall => 1.0,
        };
        let nuisance = if cfg.noise > 0.0 {
            let n: f64 = Normal::new(0.0, cfg.nuisance_sd * cfg.noise).expect("finite sd").sample(&mut rng);
            n.clamp(-2.5 * cfg.nuisance_sd * cfg.noise, 2.5 * cfg.nuisance_sd * cfg.noise)
        } else {
            0.0
        };
        let side = cfg.marker_size * h as f64;
        let margin = side;
        // per-period marker path: start position and velocity (px per second)
        let paths: Vec<(f64, f64, f64)> = cfg
            .schedule
            .iter()
            .map(|&cue| {
                let signal = cue * dir + nuisance;
                match cfg.cue {
                    CueKind::Motion => {
                        let travel = signal * cfg.max_drift * w as f64;
                        let (min_x, max_x) = (margin - travel.min(0.0), w as f64 - margin - travel.max(0.0));
                        let x0 = if max_x > min_x { rng.random_range(min_x..max_x) } else { w as f64 / 2.0 - travel / 2.0 };
                        (x0, travel / SEGMENT_SECONDS, 0.0)
                    }
                    CueKind::Static => (rng.random_range(margin..w as f64 - margin), 0.0, signal),
                }
            })
            .collect();
        let span = SEGMENT_SECONDS * PERIODS as f64;
        let n_frames = (span * cfg.fps).round() as usize;
        let noise = Normal::new(0.0, (cfg.pixel_noise_sd * cfg.noise).max(0.0)).expect("finite sd");
        let frames = (0..n_frames)
            .map(|f| {
                let t = f as f64 / cfg.fps;
                let p = ((t / SEGMENT_SECONDS) as usize).min(PERIODS as usize - 1);
                let (x0, v, tint) = paths[p];
                let cx = x0 + v * (t - p as f64 * SEGMENT_SECONDS);
                // tint moves the marker from neutral dark grey toward red (fall) or blue (collide)
                let colour = [60.0 + 120.0 * tint.max(0.0), 60.0, 60.0 + 120.0 * (-tint).max(0.0)];
                let mut img = RgbImage::new(cfg.width, cfg.height);
                for y in 0..h {
                    let cy = coverage(y as f64, scene.marker_y, side);
                    for x in 0..w {
                        let cov = if cy > 0.0 { cy * coverage(x as f64, cx, side) } else { 0.0 };
                        let bg = &scene.background[(y * w + x) * 3..][..3];
                        let mut px = [0u8; 3];
                        for c in 0..3 {
                            let mut v = bg[c] * (1.0 - cov) + colour[c] * cov;
                            if cfg.noise > 0.0 && cfg.pixel_noise_sd > 0.0 {
                                v += noise.sample(&mut rng);
                            }
                            px[c] = v.round().clamp(0.0, 255.0) as u8;
                        }
                        img.put_pixel(x as u32, y as u32, Rgb(px));
                    }
                }
                img
            })
            .collect();
        TrialVideo {
            trial_id: Self::trial_id(i),
            frames,
            width_px: cfg.width,
            height_px: cfg.height,
            fps: cfg.fps,
            label,
            decision_time_s: -FIRST_WINDOW_START_S,
        }
    }

    pub fn trials(&self) -> impl Iterator<Item = TrialVideo> + '_ {
        (0..self.len()).map(|i| self.trial(i))
    }
}

/// Overlap of pixel `[p, p + 1)` with the interval centred at `c` of width `side`.
fn coverage(p: f64, c: f64, side: f64) -> f64 {
    let lo = (c - side / 2.0).max(p);
    let hi = (c + side / 2.0).min(p + 1.0);
    (hi - lo).max(0.0)
}

pub fn generate_synthetic(n_trials: usize, schedule: &[f64], seed: u64) -> Result<Vec<TrialVideo>> {
    let cfg = SynthConfig { n_trials, schedule: schedule.to_vec(), seed, ..SynthConfig::default() };
    Ok(SyntheticGenerator::new(cfg)?.trials().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_validation() {
        assert!(validate_schedule(&[0.1, 0.2, 0.4, 0.7, 1.0]).is_ok());
        assert!(validate_schedule(&[0.1, 0.2, 0.4, 0.7]).is_err());
        assert!(validate_schedule(&[0.1, 0.2, 0.1, 0.7, 1.0]).is_err());
        assert!(validate_schedule(&[0.1, 0.2, 0.4, 0.7, 1.5]).is_err());
        assert!(generate_synthetic(1, &[0.0; 5], 0).is_err());
    }

    #[test]
    fn label_ratio_follows_fraction() {
        let g = SyntheticGenerator::new(SynthConfig::default()).unwrap();
        let falls = (0..g.len()).filter(|&i| g.label(i) == Label::Fall).count();
        assert_eq!((falls, g.len() - falls), (23, 51));
    }

    #[test]
    fn coverage_of_box() {
        assert_eq!(coverage(0.0, 0.5, 1.0), 1.0);
        assert_eq!(coverage(0.0, 1.0, 1.0), 0.5);
        assert_eq!(coverage(3.0, 0.5, 1.0), 0.0);
    }
}
