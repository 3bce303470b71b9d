use ndarray::{Array1, Axis};

use super::{ae_decode, ae_encode, forward_jump, EpsPredictor, LatentAeParams, LatentImage, NoiseSchedule};
use crate::error::{Error, Result};
use crate::ppm::Image;
use crate::rng;

pub const DEFAULT_STRENGTH: f64 = 0.75;

/// Number of forward-noising steps for an image-to-image pass:
/// `⌊strength · T⌋`, at least 1. Strength 0.75 over 50 steps gives 37.
pub fn img2img_start_step(strength: f64, steps: usize) -> Result<usize> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::Validation(format!("strength must be in (0, 1], got {strength}")));
    }
    Ok(((strength * steps as f64 + 1e-9).floor() as usize).clamp(1, steps))
}

/// Ancestral DDPM sampling from `t_start` down to step 1. Intermediate steps
/// add noise with variance `β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`; the last step is
/// the noiseless posterior mean.
pub fn reverse_sample<P: EpsPredictor>(
    params: &P,
    z_start: &LatentImage,
    t_start: usize,
    c: &[f64],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<LatentImage> {
    sched.check_step(t_start)?;
    let mut r = rng::stream(seed, 0x5A3);
    let cm = Array1::from(c.to_vec()).insert_axis(Axis(0));
    let mut z = Array1::from(z_start.values.clone()).insert_axis(Axis(0));
    for t in (1..=t_start).rev() {
        let eps = params.predict_eps(&z, t, &cm)?;
        let (a, ab, ab_prev) = (sched.alpha(t), sched.alpha_bar(t), sched.alpha_bar(t - 1));
        let beta = 1.0 - a;
        let coef = if 1.0 - ab > 0.0 { beta / (1.0 - ab).sqrt() } else { 0.0 };
        let mut mean = &z - &(eps * coef);
        mean /= a.sqrt();
        if t > 1 {
            let var = if 1.0 - ab > 0.0 { beta * (1.0 - ab_prev) / (1.0 - ab) } else { 0.0 };
            let sd = var.sqrt();
            mean.mapv_inplace(|m| m + sd * rng::gaussian(&mut r));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite latent at reverse step {t}")));
        }
        z = mean;
    }
    Ok(LatentImage { values: z.row(0).to_vec(), shape: z_start.shape })
}

/// Encode, noise forward to `⌊strength·T⌋` with seeded noise, denoise back
/// under conditioning `c`, decode.
pub fn img2img<P: EpsPredictor>(
    aep: &LatentAeParams,
    params: &P,
    init_image: &Image,
    strength: f64,
    c: &[f64],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Image> {
    let t_start = img2img_start_step(strength, sched.steps())?;
    let z0 = ae_encode(aep, init_image)?;
    let mut r = rng::stream(seed, 0x12F);
    let eps = rng::gaussian_vec(&mut r, z0.len());
    let zt = forward_jump(&z0, t_start, &eps, sched)?;
    let z = reverse_sample(params, &zt, t_start, c, sched, rng::mix(seed, 0x5EED))?;
    ae_decode(aep, &z)
}
