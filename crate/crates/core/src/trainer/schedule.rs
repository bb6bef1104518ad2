use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clipset::Label;
use crate::error::{CoreError, Result};
use crate::r2p1d::{Network, Param};

/// Fraction of the steps spent warming up to the peak rate.
pub const PCT_START: f64 = 0.3;

/// One-cycle learning rate: cosine rise from `lr_min` at step 0 to `lr_max`
/// at the peak step, then cosine annealing back to `lr_min` at the last step.
pub fn one_cycle_lr(step: usize, total_steps: usize, lr_min: f64, lr_max: f64) -> f64 {
    assert!(step < total_steps, "step {step} outside 0..{total_steps}");
    if step == 0 {
        return lr_min;
    }
    let peak = peak_step(total_steps);
    let cos_interp = |from: f64, to: f64, frac: f64| to + (from - to) * (1.0 + (PI * frac).cos()) / 2.0;
    if step <= peak {
        cos_interp(lr_min, lr_max, step as f64 / peak as f64)
    } else {
        let last = total_steps - 1;
        cos_interp(lr_max, lr_min, (step - peak) as f64 / (last - peak) as f64)
    }
}

/// Step at which [`one_cycle_lr`] reaches `lr_max`.
pub fn peak_step(total_steps: usize) -> usize {
    if total_steps <= 1 {
        return 0;
    }
    // keep at least one annealing step
    ((PCT_START * (total_steps - 1) as f64).round() as usize).clamp(1, total_steps - 1)
}

/// Rebalances to 1:1 labels: every majority item once, the minority drawn
/// with replacement up to the majority count, then shuffled. With equal
/// counts the fall class is the one redrawn.
pub fn balance_resample<T: Clone>(items: &[T], label: impl Fn(&T) -> Label, seed: u64) -> Result<Vec<T>> {
    let (fall, collide): (Vec<&T>, Vec<&T>) = items.iter().partition(|t| label(t) == Label::Fall);
    if fall.is_empty() || collide.is_empty() {
        return Err(CoreError::SingleLabel);
    }
    let (majority, minority) = if collide.len() >= fall.len() { (collide, fall) } else { (fall, collide) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<T> = majority.iter().map(|t| (*t).clone()).collect();
    out.extend((0..majority.len()).map(|_| minority[rng.random_range(0..minority.len())].clone()));
    out.shuffle(&mut rng);
    Ok(out)
}

/// Adamax with PyTorch's update rule.
#[derive(Debug, Clone)]
pub struct Adamax {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    u: Vec<Vec<f32>>,
}

impl Adamax {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, m: Vec::new(), u: Vec::new() }
    }

    /// Updates trainable parameters from their accumulated gradients.
    pub fn step(&mut self, net: &mut Network<f32>, lr: f64) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, self.eps as f32);
        let step_size = (lr / (1.0 - self.beta1.powi(self.step))) as f32;
        let mut i = 0;
        let (ms, us) = (&mut self.m, &mut self.u);
        net.visit_params(&mut |_, p: &mut Param<f32>| {
            if ms.len() <= i {
                ms.push(vec![0.0; p.value.len()]);
                us.push(vec![0.0; p.value.len()]);
            }
            if !p.frozen {
                let (m, u) = (&mut ms[i], &mut us[i]);
                let grads = p.grad.data().to_vec();
                for (((v, g), m), u) in p.value.data_mut().iter_mut().zip(&grads).zip(m.iter_mut()).zip(u.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *u = (b2 * *u).max(g.abs() + eps);
                    *v -= step_size * *m / *u;
                }
            }
            i += 1;
        });
    }
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
