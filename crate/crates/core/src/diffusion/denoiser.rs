//! Conditioned noise predictor `ε_θ(z_t, t, c)`.
//!
//! Two tanh hidden layers (the second residual) read `[z_t ‖ emb(t)]`; the
//! conditioning vector is injected into both hidden layers through its own
//! linear maps, so every layer is modulated by `c`.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::matfile;
use crate::nn::{self, Dense, Parameters, SgdConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub latent_len: usize,
    pub cond_len: usize,
    pub time_dim: usize,
    pub hidden: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_len == 0 || self.hidden == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Validation("denoiser needs positive widths and an even time embedding".into()));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of the step index.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = 1.0 / 1000f64.powf(k as f64 / half.max(1) as f64);
        out.push((t as f64 * freq).sin());
        out.push((t as f64 * freq).cos());
    }
    out
}

/// Anything that predicts the injected noise. Rows of `z_t` and `c` are
/// batch items.
pub trait EpsPredictor {
    fn predict_eps(&self, z_t: &Array2<f64>, t: usize, c: &Array2<f64>) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub input: Dense,
    pub cond1: Dense,
    pub hidden: Dense,
    pub cond2: Dense,
    pub output: Dense,
}

impl Parameters for DenoiserParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        [&self.input, &self.cond1, &self.hidden, &self.cond2, &self.output]
            .into_iter()
            .flat_map(|d| d.params())
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t: Vec<&mut Array2<f64>> = Vec::new();
        t.extend(self.input.params_mut());
        t.extend(self.cond1.params_mut());
        t.extend(self.hidden.params_mut());
        t.extend(self.cond2.params_mut());
        t.extend(self.output.params_mut());
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        ["input", "cond1", "hidden", "cond2", "output"]
            .iter()
            .flat_map(|l| [format!("{l}.w"), format!("{l}.b")])
            .collect()
    }
}

struct DenForward {
    a: Array2<f64>,
    h1: Array2<f64>,
    r: Array2<f64>,
    h2: Array2<f64>,
    out: Array2<f64>,
}

impl DenoiserParams {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, 0xDE);
        let (l, c, td, h) = (config.latent_len, config.cond_len, config.time_dim, config.hidden);
        let mut output = Dense::new(h, l, &mut r);
        output.w *= 0.1;
        Ok(DenoiserParams {
            input: Dense::new(l + td, h, &mut r),
            cond1: Dense::new(c, h, &mut r),
            hidden: Dense::new(h, h, &mut r),
            cond2: Dense::new(c, h, &mut r),
            output,
            config,
        })
    }

    fn check(&self, z_t: &Array2<f64>, c: &Array2<f64>) -> Result<()> {
        if z_t.ncols() != self.config.latent_len || c.ncols() != self.config.cond_len || z_t.nrows() != c.nrows() {
            return Err(Error::Shape(format!(
                "denoiser expects latents of {} and conditioning of {}, got {:?} and {:?}",
                self.config.latent_len,
                self.config.cond_len,
                z_t.dim(),
                c.dim()
            )));
        }
        Ok(())
    }

    fn forward(&self, z_t: &Array2<f64>, ts: &[usize], c: &Array2<f64>) -> DenForward {
        let td = self.config.time_dim;
        let mut temb = Array2::zeros((ts.len(), td));
        for (row, &t) in ts.iter().enumerate() {
            temb.row_mut(row).assign(&Array1::from(time_embedding(t, td)));
        }
        let a = nn::hcat(&[z_t, &temb]);
        let h1 = nn::tanh(self.input.forward(&a) + self.cond1.forward(c));
        let r = nn::tanh(self.hidden.forward(&h1) + self.cond2.forward(c));
        let h2 = &h1 + &r;
        let out = self.output.forward(&h2);
        DenForward { a, h1, r, h2, out }
    }

    /// Mean over the batch of `‖ε − ε_θ(z_t, t, c)‖²` and its gradient, where
    /// `z_t = √ᾱ_t z_0 + √(1−ᾱ_t) ε` row by row.
    pub fn loss_and_grad(
        &self,
        z0: &Array2<f64>,
        ts: &[usize],
        eps: &Array2<f64>,
        c: &Array2<f64>,
        sched: &NoiseSchedule,
    ) -> Result<(f64, DenoiserParams)> {
        self.check(z0, c)?;
        if eps.dim() != z0.dim() || ts.len() != z0.nrows() {
            return Err(Error::Shape("noise, steps and latents disagree".into()));
        }
        let mut z_t = z0.clone();
        for (row, &t) in ts.iter().enumerate() {
            sched.check_step(t)?;
            let ab = sched.alpha_bar(t);
            let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
            let mut zr = z_t.row_mut(row);
            zr *= a;
            zr.scaled_add(s, &eps.row(row));
        }
        let b = z0.nrows() as f64;
        let f = self.forward(&z_t, ts, c);
        let diff = &f.out - eps;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / b;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite denoising loss".into()));
        }
        let mut g = self.zeros_like();
        let dout = diff * (2.0 / b);
        let dh2 = self.output.backward(&f.h2, &dout, &mut g.output);
        let dr = nn::tanh_backward(&f.r, &dh2);
        self.cond2.backward(c, &dr, &mut g.cond2);
        let mut dh1 = self.hidden.backward(&f.h1, &dr, &mut g.hidden);
        dh1 += &dh2;
        let dpre1 = nn::tanh_backward(&f.h1, &dh1);
        self.cond1.backward(c, &dpre1, &mut g.cond1);
        self.input.backward(&f.a, &dpre1, &mut g.input);
        Ok((loss, g))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        matfile::save(path, &self.to_matrices(), &serde_json::json!({ "kind": "denoiser", "config": self.config }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mats, side) = matfile::load(path)?;
        let config: DenoiserConfig = serde_json::from_value(side["config"].clone())?;
        let mut p = DenoiserParams::new(config, 0)?;
        p.load_matrices(mats)?;
        Ok(p)
    }
}

impl EpsPredictor for DenoiserParams {
    fn predict_eps(&self, z_t: &Array2<f64>, t: usize, c: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(z_t, c)?;
        let ts = vec![t; z_t.nrows()];
        let out = self.forward(z_t, &ts, c).out;
        nn::check_finite(&out, "denoiser output")?;
        Ok(out)
    }
}

/// Single-sample estimator `‖ε − ε_θ(forward_jump(z0, t, ε), t, c)‖²`.
pub fn denoise_loss<P: EpsPredictor>(
    params: &P,
    z0: &[f64],
    t: usize,
    eps: &[f64],
    c: &[f64],
    sched: &NoiseSchedule,
) -> Result<f64> {
    let zt = super::forward_jump(&super::LatentImage::flat(z0.to_vec()), t, eps, sched)?;
    let zt = Array1::from(zt.values).insert_axis(Axis(0));
    let cm = Array1::from(c.to_vec()).insert_axis(Axis(0));
    let pred = params.predict_eps(&zt, t, &cm)?;
    let loss: f64 = pred.iter().zip(eps).map(|(p, e)| (e - p).powi(2)).sum();
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite denoising loss".into()));
    }
    Ok(loss)
}

/// SGD on the denoising objective with t uniform in 1..=T and unit Gaussian
/// noise, both drawn from `opt.seed`. Aborts when the loss exceeds 1e6.
pub fn train_denoiser(
    params: &mut DenoiserParams,
    latents: &Array2<f64>,
    cond: &Array2<f64>,
    sched: &NoiseSchedule,
    opt: &SgdConfig,
) -> Result<Vec<f64>> {
    if latents.nrows() == 0 {
        return Err(Error::Validation("denoiser training set is empty".into()));
    }
    if cond.nrows() != latents.nrows() {
        return Err(Error::Shape("one conditioning row per latent is required".into()));
    }
    let seed = opt.seed;
    let t_max = sched.steps();
    nn::train_sgd(params, opt, latents.nrows(), |p, batch, step| {
        let mut r = rng::stream(rng::mix(seed, step as u64), 0xD1F);
        let z0 = latents.select(Axis(0), batch);
        let c = cond.select(Axis(0), batch);
        let ts: Vec<usize> = batch.iter().map(|_| r.random_range(1..=t_max)).collect();
        let eps = Array2::from_shape_fn(z0.dim(), |_| rng::gaussian(&mut r));
        let (loss, g) = p.loss_and_grad(&z0, &ts, &eps, &c, sched)?;
        if loss > 1e6 {
            return Err(Error::Numeric(format!("denoiser diverged at step {step} (loss {loss:.3e})")));
        }
        Ok((loss, g))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DenoiserParams {
        DenoiserParams::new(DenoiserConfig { latent_len: 3, cond_len: 2, time_dim: 4, hidden: 5 }, 1).unwrap()
    }

    struct Oracle(Vec<f64>);

    impl EpsPredictor for Oracle {
        fn predict_eps(&self, z: &Array2<f64>, _: usize, _: &Array2<f64>) -> Result<Array2<f64>> {
            Ok(Array1::from(self.0.clone()).insert_axis(Axis(0)).broadcast(z.dim()).unwrap().to_owned())
        }
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let s = NoiseSchedule::default();
        let eps = vec![0.3, -1.0, 2.0];
        let l = denoise_loss(&Oracle(eps.clone()), &[1.0, 2.0, 3.0], 20, &eps, &[0.0, 0.0], &s).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn loss_is_nonnegative_and_matches_batch() {
        let s = NoiseSchedule::default();
        let p = tiny();
        let z0 = [0.5, -0.2, 1.0];
        let eps = [0.1, 0.4, -0.7];
        let c = [1.0, -1.0];
        let single = denoise_loss(&p, &z0, 7, &eps, &c, &s).unwrap();
        assert!(single >= 0.0);
        let row = |v: &[f64]| Array1::from(v.to_vec()).insert_axis(Axis(0));
        let (batch, _) = p.loss_and_grad(&row(&z0), &[7], &row(&eps), &row(&c), &s).unwrap();
        assert!((single - batch).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_and_determinism() {
        let s = NoiseSchedule::default();
        let z = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let c = Array2::from_shape_fn((6, 2), |(i, _)| (i % 2) as f64);
        let mut p = tiny();
        let before = p.clone();
        train_denoiser(&mut p, &z, &c, &s, &SgdConfig::new(0.0, 10, 4, 3)).unwrap();
        assert_eq!(p, before);
        let mut a = tiny();
        let mut b = tiny();
        let ca = train_denoiser(&mut a, &z, &c, &s, &SgdConfig::new(0.05, 20, 4, 3)).unwrap();
        let cb = train_denoiser(&mut b, &z, &c, &s, &SgdConfig::new(0.05, 20, 4, 3)).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a, b);
    }

    #[test]
    fn time_embedding_shape() {
        let e = time_embedding(3, 6);
        assert_eq!(e.len(), 6);
        assert!((e[0] - 3f64.sin()).abs() < 1e-15);
    }
}
