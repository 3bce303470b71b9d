use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_LO: f64 = 1e-4;
pub const DEFAULT_BETA_HI: f64 = 0.05;

/// `alpha[t-1]` is α_t for t in 1..=T; `alpha_bar[t-1] = Π_{s≤t} α_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Validation("schedule needs at least one step".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Validation(format!("alpha {a} outside (0, 1]")));
        }
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule { alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Validation(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// Linearly spaced β_t from `beta_lo` to `beta_hi`, α_t = 1 − β_t.
pub fn make_schedule(steps: usize, beta_lo: f64, beta_hi: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Validation("schedule needs at least one step".into()));
    }
    if !(0.0 <= beta_lo && beta_lo <= beta_hi && beta_hi < 1.0) {
        return Err(Error::Validation(format!("need 0 <= beta_lo <= beta_hi < 1, got [{beta_lo}, {beta_hi}]")));
    }
    let alpha = (0..steps)
        .map(|i| {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            1.0 - (beta_lo + (beta_hi - beta_lo) * frac)
        })
        .collect();
    NoiseSchedule::from_alphas(alpha)
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_LO, DEFAULT_BETA_HI).expect("valid defaults")
    }
}

/// A flattened latent grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentImage {
    pub values: Vec<f64>,
    /// (height, width, channels) of the latent grid.
    pub shape: (usize, usize, usize),
}

impl LatentImage {
    pub fn new(values: Vec<f64>, shape: (usize, usize, usize)) -> Result<Self> {
        if values.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::Shape(format!("{} latent values for shape {shape:?}", values.len())));
        }
        Ok(LatentImage { values, shape })
    }

    pub fn flat(values: Vec<f64>) -> Self {
        let n = values.len();
        LatentImage { values, shape: (1, 1, n) }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn combine(z: &LatentImage, eps: &[f64], keep: f64, noise: f64) -> Result<LatentImage> {
    if eps.len() != z.len() {
        return Err(Error::Shape(format!("noise has length {}, latent {}", eps.len(), z.len())));
    }
    let (a, b) = (keep.sqrt(), noise.sqrt());
    let values = z.values.iter().zip(eps).map(|(v, e)| a * v + b * e).collect();
    Ok(LatentImage { values, shape: z.shape })
}

/// One forward step `z_t = √α_t z_{t−1} + √(1 − α_t) ε`.
pub fn forward_step(z_prev: &LatentImage, t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<LatentImage> {
    sched.check_step(t)?;
    let a = sched.alpha(t);
    combine(z_prev, eps, a, 1.0 - a)
}

/// Closed-form jump `z_t = √ᾱ_t z_0 + √(1 − ᾱ_t) ε`.
pub fn forward_jump(z0: &LatentImage, t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<LatentImage> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    combine(z0, eps, ab, 1.0 - ab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_schedule() {
        let s = make_schedule(1, 0.0, 0.0).unwrap();
        assert_eq!(s.alpha, vec![1.0]);
        assert_eq!(s.alpha_bar, vec![1.0]);
        let z = LatentImage::flat(vec![1.0, -2.0]);
        assert_eq!(forward_step(&z, 1, &[5.0, 5.0], &s).unwrap(), z);
        assert_eq!(forward_jump(&z, 1, &[5.0, 5.0], &s).unwrap(), z);
    }

    #[test]
    fn default_has_fifty_steps_and_moderate_end() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 50);
        let end = s.alpha_bar(50);
        assert!(end > 0.25 && end < 0.5, "alpha_bar_T = {end}");
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn near_zero_alpha_returns_noise() {
        let s = NoiseSchedule::from_alphas(vec![1e-12]).unwrap();
        let z = LatentImage::flat(vec![3.0, -4.0]);
        let out = forward_step(&z, 1, &[0.5, -0.25], &s).unwrap();
        assert!((out.values[0] - 0.5).abs() < 1e-5 && (out.values[1] + 0.25).abs() < 1e-5);
    }

    #[test]
    fn zero_noise_jump_scales() {
        let s = NoiseSchedule::default();
        let z = LatentImage::flat(vec![2.0]);
        let out = forward_jump(&z, 10, &[0.0], &s).unwrap();
        assert_eq!(out.values[0], s.alpha_bar(10).sqrt() * 2.0);
    }

    #[test]
    fn validation() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(5, 0.3, 0.2).is_err());
        assert!(make_schedule(5, 0.1, 1.0).is_err());
        let s = NoiseSchedule::default();
        let z = LatentImage::flat(vec![0.0]);
        assert!(forward_step(&z, 0, &[0.0], &s).is_err());
        assert!(forward_step(&z, 51, &[0.0], &s).is_err());
        assert!(forward_jump(&z, 3, &[0.0, 1.0], &s).is_err());
    }
}
