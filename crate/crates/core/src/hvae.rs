//! Hierarchical VAE with a layer-wise factorized posterior
//! `q(z_0|x) q(z_1|z_0,x) … q(z_N|z_<N,x)` and a top-down prior
//! `p(z_0) p(z_1|z_0) … p(z_N|z_<N)`, trained on the ELBO with manual
//! backpropagation.
//!
//! The decoder is a residual top-down stream. It starts from a learned state
//! `s_0`; layer `i` reads `s_i` for its prior, `[h(x) ‖ s_i]` for its
//! posterior, and updates `s_{i+1} = s_i + tanh([s_i ‖ z_i] B_i)`. The image
//! head maps `s_N` to continuous-Bernoulli logits. Since `s_i` is a function
//! of `z_<i`, the prior and posterior factorize as above, and a one-layer
//! configuration is an ordinary VAE.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matfile;
use crate::nn::{self, Dense, Parameters, SgdConfig};
use crate::ppm::Image;
use crate::rng;

pub const LOG_VAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvaeConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Latent width of every layer, coarsest (`z_0`) first.
    pub widths: Vec<usize>,
    pub enc_hidden: usize,
    /// Width of the top-down decoder state.
    pub dec_hidden: usize,
}

impl Default for HvaeConfig {
    fn default() -> Self {
        HvaeConfig {
            height: 32,
            width: 32,
            channels: 1,
            widths: vec![8, 16, 32, 64],
            enc_hidden: 128,
            dec_hidden: 128,
        }
    }
}

impl HvaeConfig {
    /// Single-layer VAE with the same total latent size, hidden widths grown
    /// to roughly match the parameter count of `self`.
    pub fn flat_counterpart(&self) -> HvaeConfig {
        let target = HvaeParams::param_count_for(self);
        let mut flat = HvaeConfig { widths: vec![self.total_latent()], ..self.clone() };
        // grow encoder and decoder hidden widths together until the budget is met
        let (e0, d0) = (self.enc_hidden as f64, self.dec_hidden as f64);
        let mut best = flat.clone();
        let mut best_gap = usize::MAX;
        for step in 0..=400 {
            let s = 1.0 + step as f64 * 0.0025;
            flat.enc_hidden = (e0 * s).round() as usize;
            flat.dec_hidden = (d0 * s).round() as usize;
            let gap = HvaeParams::param_count_for(&flat).abs_diff(target);
            if gap < best_gap {
                best_gap = gap;
                best = flat.clone();
            }
        }
        best
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    pub fn total_latent(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Sum of the first `k` layer widths.
    pub fn prefix_latent(&self, k: usize) -> usize {
        self.widths[..k].iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels() == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Validation("hvae config needs positive image size and layer widths".into()));
        }
        if self.enc_hidden == 0 || self.dec_hidden == 0 {
            return Err(Error::Validation("hvae hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian given by mean and clamped log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub log_var: Array1<f64>,
}

/// `KL(q || p)` for diagonal Gaussians.
pub fn gauss_kl(q: &GaussianStats, p: &GaussianStats) -> Result<f64> {
    let n = q.mean.len();
    if q.log_var.len() != n || p.mean.len() != n || p.log_var.len() != n {
        return Err(Error::Shape("gaussian stats differ in length".into()));
    }
    let mut kl = 0.0;
    for d in 0..n {
        let (mq, lq, mp, lp) = (q.mean[d], q.log_var[d], p.mean[d], p.log_var[d]);
        kl += 0.5 * ((lq - lp).exp() + (mq - mp).powi(2) * (-lp).exp() - 1.0 + lp - lq);
    }
    Ok(kl)
}

/// One latent vector per layer, `z_0` first.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentHierarchy {
    pub layers: Vec<Array1<f64>>,
}

impl LatentHierarchy {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub reconstruction_nll: f64,
    pub kl_per_layer: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvaeParams {
    pub config: HvaeConfig,
    pub enc: Dense,
    /// Initial decoder state `s_0`, `1 × dec_hidden`.
    pub state0: Array2<f64>,
    pub prior: Vec<Dense>,
    pub post: Vec<Dense>,
    pub block: Vec<Dense>,
    pub out: Dense,
}

impl Parameters for HvaeParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t: Vec<&Array2<f64>> = self.enc.params().to_vec();
        t.push(&self.state0);
        for i in 0..self.config.layers() {
            t.extend(self.prior[i].params());
            t.extend(self.post[i].params());
            t.extend(self.block[i].params());
        }
        t.extend(self.out.params());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t: Vec<&mut Array2<f64>> = self.enc.params_mut().into_iter().collect();
        t.push(&mut self.state0);
        for ((p, q), b) in self.prior.iter_mut().zip(self.post.iter_mut()).zip(self.block.iter_mut()) {
            t.extend(p.params_mut());
            t.extend(q.params_mut());
            t.extend(b.params_mut());
        }
        t.extend(self.out.params_mut());
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut n = vec!["enc.w".to_string(), "enc.b".into(), "state0".into()];
        for i in 0..self.config.layers() {
            for head in ["prior", "post", "block"] {
                n.push(format!("{head}{i}.w"));
                n.push(format!("{head}{i}.b"));
            }
        }
        n.push("out.w".into());
        n.push("out.b".into());
        n
    }
}

/// Continuous-Bernoulli log normalizer `log C(σ(η)) = log(η / tanh(η/2))`.
pub fn cb_log_norm(eta: f64) -> f64 {
    let a = eta.abs();
    if a < 1e-2 {
        std::f64::consts::LN_2 + eta * eta / 12.0 - 7.0 * eta.powi(4) / 1440.0
    } else {
        (a / (a / 2.0).tanh()).ln()
    }
}

/// Derivative of [`cb_log_norm`]: `1/η − 1/sinh(η)`.
pub fn cb_log_norm_grad(eta: f64) -> f64 {
    if eta.abs() < 1e-2 {
        eta / 6.0 - 7.0 * eta.powi(3) / 360.0
    } else if eta.abs() > 700.0 {
        1.0 / eta
    } else {
        1.0 / eta - 1.0 / eta.sinh()
    }
}

/// Mean of the continuous Bernoulli with logit `η`, in [0, 1].
pub fn cb_mean(eta: f64) -> f64 {
    if eta.abs() < 1e-3 {
        0.5 + eta / 12.0 - eta.powi(3) / 720.0
    } else {
        let v = nn::sigmoid(eta) / (eta / 2.0).tanh() - 1.0 / eta;
        v.clamp(0.0, 1.0)
    }
}

/// Negative log-likelihood of `x` in [0,1] under logit `η`.
pub fn cb_nll(x: f64, eta: f64) -> f64 {
    x * nn::softplus(-eta) + (1.0 - x) * nn::softplus(eta) - cb_log_norm(eta)
}

struct Forward {
    h: Array2<f64>,
    /// Decoder states `s_0..s_N`.
    s: Vec<Array2<f64>>,
    ctx: Vec<Array2<f64>>,
    mu_q: Vec<Array2<f64>>,
    lv_q: Vec<Array2<f64>>,
    raw_lv_q: Vec<Array2<f64>>,
    eps: Vec<Array2<f64>>,
    z: Vec<Array2<f64>>,
    mu_p: Vec<Array2<f64>>,
    lv_p: Vec<Array2<f64>>,
    raw_lv_p: Vec<Array2<f64>>,
    /// Block inputs `[s_i ‖ z_i]` and activations.
    a: Vec<Array2<f64>>,
    u: Vec<Array2<f64>>,
    zcat: Array2<f64>,
    eta: Array2<f64>,
}

fn split_stats(out: Array2<f64>, w: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mu = out.slice(ndarray::s![.., ..w]).to_owned();
    let raw = out.slice(ndarray::s![.., w..]).to_owned();
    let lv = raw.mapv(|v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP));
    (mu, lv, raw)
}

/// How the latent of each layer is chosen during a forward pass.
enum Noise<'a> {
    /// `z = μ + σ·ε` with ε from the given per-layer matrices.
    Given(&'a [Array2<f64>]),
    /// `z = μ`.
    Zero,
}

impl HvaeParams {
    pub fn new(config: HvaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, 0x4AE);
        let (p, e, d) = (config.pixels(), config.enc_hidden, config.dec_hidden);
        let enc = Dense::new(p, e, &mut r);
        let mut prior = Vec::new();
        let mut post = Vec::new();
        let mut block = Vec::new();
        for &w in &config.widths {
            let mut pr = Dense::new(d, 2 * w, &mut r);
            let mut q = Dense::new(e + d, 2 * w, &mut r);
            // small output weights keep the initial posteriors near the prior
            pr.w *= 0.1;
            q.w *= 0.1;
            prior.push(pr);
            post.push(q);
            block.push(Dense::new(d + w, d, &mut r));
        }
        let out = Dense::new(d, p, &mut r);
        Ok(HvaeParams { config, enc, state0: Array2::zeros((1, d)), prior, post, block, out })
    }

    pub fn param_count_for(config: &HvaeConfig) -> usize {
        let (p, e, d) = (config.pixels(), config.enc_hidden, config.dec_hidden);
        let mut n = p * e + e + d + d * p + p;
        for &w in &config.widths {
            n += d * 2 * w + 2 * w;
            n += (e + d) * 2 * w + 2 * w;
            n += (d + w) * d + d;
        }
        n
    }

    fn images_to_matrix(&self, images: &[&Image]) -> Result<Array2<f64>> {
        let c = &self.config;
        let mut x = Array2::zeros((images.len(), c.pixels()));
        for (r, img) in images.iter().enumerate() {
            if img.shape() != (c.height, c.width, c.channels) {
                return Err(Error::Shape(format!(
                    "image is {:?}, model expects {:?}",
                    img.shape(),
                    (c.height, c.width, c.channels)
                )));
            }
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&img.data));
        }
        Ok(x)
    }

    fn prior_stats(&self, i: usize, s: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        split_stats(self.prior[i].forward(s), self.config.widths[i])
    }

    fn initial_state(&self, batch: usize) -> Array2<f64> {
        self.state0.broadcast((batch, self.config.dec_hidden)).expect("row broadcast").to_owned()
    }

    /// `(a, u, s_next)` for block `i`.
    fn step(&self, i: usize, s: &Array2<f64>, z: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let a = nn::hcat(&[s, z]);
        let u = nn::tanh(self.block[i].forward(&a));
        let next = s + &u;
        (a, u, next)
    }

    fn forward(&self, x: &Array2<f64>, noise: Noise<'_>) -> Result<Forward> {
        let b = x.nrows();
        let h = nn::tanh(self.enc.forward(x));
        nn::check_finite(&h, "encoder")?;
        let mut f = Forward {
            h,
            s: vec![self.initial_state(b)],
            ctx: Vec::new(),
            mu_q: Vec::new(),
            lv_q: Vec::new(),
            raw_lv_q: Vec::new(),
            eps: Vec::new(),
            z: Vec::new(),
            mu_p: Vec::new(),
            lv_p: Vec::new(),
            raw_lv_p: Vec::new(),
            a: Vec::new(),
            u: Vec::new(),
            zcat: Array2::zeros((b, 0)),
            eta: Array2::zeros((0, 0)),
        };
        for i in 0..self.config.layers() {
            let w = self.config.widths[i];
            let s = f.s[i].clone();
            let ctx = nn::hcat(&[&f.h, &s]);
            let (mu, lv, raw) = split_stats(self.post[i].forward(&ctx), w);
            nn::check_finite(&mu, &format!("posterior layer {i}"))?;
            let eps = match &noise {
                Noise::Given(e) => e[i].clone(),
                Noise::Zero => Array2::zeros((b, w)),
            };
            let mut z = lv.mapv(|l| (0.5 * l).exp()) * &eps;
            z += &mu;
            let (mu_p, lv_p, raw_p) = self.prior_stats(i, &s);
            nn::check_finite(&mu_p, &format!("prior layer {i}"))?;
            let (a, u, next) = self.step(i, &s, &z);
            f.zcat = nn::hcat(&[&f.zcat, &z]);
            f.s.push(next);
            f.a.push(a);
            f.u.push(u);
            f.ctx.push(ctx);
            f.mu_q.push(mu);
            f.lv_q.push(lv);
            f.raw_lv_q.push(raw);
            f.eps.push(eps);
            f.z.push(z);
            f.mu_p.push(mu_p);
            f.lv_p.push(lv_p);
            f.raw_lv_p.push(raw_p);
        }
        f.eta = self.out.forward(f.s.last().expect("at least one state"));
        nn::check_finite(&f.eta, "image head")?;
        Ok(f)
    }

    fn draw_eps(&self, batch: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut r = rng::stream(seed, 0xE95);
        self.config
            .widths
            .iter()
            .map(|&w| Array2::from_shape_fn((batch, w), |_| rng::gaussian(&mut r)))
            .collect()
    }

    /// Loss (mean per image) and its gradient over a minibatch, with the
    /// reparameterization noise drawn from `seed`.
    pub fn loss_and_grad(&self, images: &[&Image], seed: u64) -> Result<(f64, HvaeParams)> {
        let x = self.images_to_matrix(images)?;
        let eps = self.draw_eps(x.nrows(), seed);
        self.loss_and_grad_matrix(&x, &eps)
    }

    fn loss_and_grad_matrix(&self, x: &Array2<f64>, eps: &[Array2<f64>]) -> Result<(f64, HvaeParams)> {
        let b = x.nrows() as f64;
        let f = self.forward(x, Noise::Given(eps))?;
        let mut g = self.zeros_like();

        let mut loss = 0.0;
        let mut deta = Array2::zeros(f.eta.dim());
        for ((d, &xv), &e) in deta.iter_mut().zip(x.iter()).zip(f.eta.iter()) {
            loss += cb_nll(xv, e);
            *d = (nn::sigmoid(e) - xv - cb_log_norm_grad(e)) / b;
        }
        let d = self.config.dec_hidden;
        let e = self.config.enc_hidden;
        let n_layers = self.config.layers();
        let mut ds = self.out.backward(&f.s[n_layers], &deta, &mut g.out);
        let mut dh = Array2::zeros(f.h.dim());

        for i in (0..n_layers).rev() {
            let w = self.config.widths[i];
            // residual block: s_{i+1} = s_i + u_i
            let du = nn::tanh_backward(&f.u[i], &ds);
            let da = self.block[i].backward(&f.a[i], &du, &mut g.block[i]);
            ds += &da.slice(ndarray::s![.., ..d]);
            let dz = da.slice(ndarray::s![.., d..]).to_owned();

            let (mq, lq, mp, lp) = (&f.mu_q[i], &f.lv_q[i], &f.mu_p[i], &f.lv_p[i]);
            let mut dmq = Array2::zeros((x.nrows(), w));
            let mut dlq = Array2::zeros((x.nrows(), w));
            let mut dmp = Array2::zeros((x.nrows(), w));
            let mut dlp = Array2::zeros((x.nrows(), w));
            for idx in 0..x.nrows() {
                for k in 0..w {
                    let (a, l, c, m) = (mq[[idx, k]], lq[[idx, k]], mp[[idx, k]], lp[[idx, k]]);
                    let ratio = (l - m).exp();
                    let inv = (-m).exp();
                    let diff = a - c;
                    loss += 0.5 * (ratio + diff * diff * inv - 1.0 + m - l);
                    let zgrad = dz[[idx, k]];
                    dmq[[idx, k]] = diff * inv / b + zgrad;
                    dmp[[idx, k]] = -diff * inv / b;
                    let mut gl = 0.5 * (ratio - 1.0) / b + zgrad * 0.5 * (0.5 * l).exp() * f.eps[i][[idx, k]];
                    if f.raw_lv_q[i][[idx, k]].abs() > LOG_VAR_CLAMP {
                        gl = 0.0;
                    }
                    dlq[[idx, k]] = gl;
                    let mut gp = 0.5 * (1.0 - ratio - diff * diff * inv) / b;
                    if f.raw_lv_p[i][[idx, k]].abs() > LOG_VAR_CLAMP {
                        gp = 0.0;
                    }
                    dlp[[idx, k]] = gp;
                }
            }
            let dctx = self.post[i].backward(&f.ctx[i], &nn::hcat(&[&dmq, &dlq]), &mut g.post[i]);
            dh += &dctx.slice(ndarray::s![.., ..e]);
            ds += &dctx.slice(ndarray::s![.., e..]);
            ds += &self.prior[i].backward(&f.s[i], &nn::hcat(&[&dmp, &dlp]), &mut g.prior[i]);
        }
        g.state0 += &ds.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dh = nn::tanh_backward(&f.h, &dh);
        self.enc.backward(x, &dh, &mut g.enc);
        Ok((loss / b, g))
    }

    /// Per-layer posterior statistics and a reparameterized sample.
    pub fn encode(&self, x: &Image, seed: u64) -> Result<(Vec<GaussianStats>, LatentHierarchy)> {
        let xm = self.images_to_matrix(&[x])?;
        let eps = self.draw_eps(1, seed);
        self.encode_with(&xm, Noise::Given(&eps))
    }

    /// Like [`HvaeParams::encode`] with ε forced to zero: every `z_i = μ_i`.
    pub fn encode_mean(&self, x: &Image) -> Result<(Vec<GaussianStats>, LatentHierarchy)> {
        let xm = self.images_to_matrix(&[x])?;
        self.encode_with(&xm, Noise::Zero)
    }

    fn encode_with(&self, x: &Array2<f64>, noise: Noise<'_>) -> Result<(Vec<GaussianStats>, LatentHierarchy)> {
        let f = self.forward(x, noise)?;
        let stats = f
            .mu_q
            .iter()
            .zip(&f.lv_q)
            .map(|(m, l)| GaussianStats { mean: m.row(0).to_owned(), log_var: l.row(0).to_owned() })
            .collect();
        let layers = f.z.iter().map(|z| z.row(0).to_owned()).collect();
        Ok((stats, LatentHierarchy { layers }))
    }

    /// Prior statistics of every layer evaluated along `z`.
    pub fn prior_along(&self, z: &LatentHierarchy) -> Result<Vec<GaussianStats>> {
        self.check_hierarchy(z, self.config.layers())?;
        let mut s = self.initial_state(1);
        let mut out = Vec::new();
        for i in 0..self.config.layers() {
            let (mu, lv, _) = self.prior_stats(i, &s);
            out.push(GaussianStats { mean: mu.row(0).to_owned(), log_var: lv.row(0).to_owned() });
            s = self.step(i, &s, &z.layers[i].clone().insert_axis(Axis(0))).2;
        }
        Ok(out)
    }

    fn check_hierarchy(&self, z: &LatentHierarchy, layers: usize) -> Result<()> {
        if z.layers.len() != layers {
            return Err(Error::Shape(format!("hierarchy has {} layers, expected {layers}", z.layers.len())));
        }
        for (i, l) in z.layers.iter().enumerate() {
            if l.len() != self.config.widths[i] {
                return Err(Error::Shape(format!("layer {i} has width {}, expected {}", l.len(), self.config.widths[i])));
            }
        }
        Ok(())
    }

    /// Image-likelihood mean for a full hierarchy.
    pub fn decode(&self, z: &LatentHierarchy) -> Result<Image> {
        self.check_hierarchy(z, self.config.layers())?;
        let mut s = self.initial_state(1);
        for (i, l) in z.layers.iter().enumerate() {
            s = self.step(i, &s, &l.clone().insert_axis(Axis(0))).2;
        }
        let eta = self.out.forward(&s);
        nn::check_finite(&eta, "image head")?;
        let c = &self.config;
        Image::new(c.height, c.width, c.channels, eta.iter().map(|&e| cb_mean(e)).collect())
    }

    /// Samples `z_K..z_N` from the top-down prior with `z_0..z_{K-1}` fixed.
    pub fn sample_prior(&self, seed: u64, fixed_top: &[Array1<f64>]) -> Result<LatentHierarchy> {
        let n = self.config.layers();
        if fixed_top.len() > n {
            return Err(Error::Shape(format!("{} fixed layers for a {n}-layer model", fixed_top.len())));
        }
        for (i, l) in fixed_top.iter().enumerate() {
            if l.len() != self.config.widths[i] {
                return Err(Error::Shape(format!("fixed layer {i} has width {}, expected {}", l.len(), self.config.widths[i])));
            }
        }
        let mut r = rng::stream(seed, 0x9A1);
        let mut layers: Vec<Array1<f64>> = Vec::with_capacity(n);
        let mut s = self.initial_state(1);
        for i in 0..n {
            let z = match fixed_top.get(i) {
                Some(l) => l.clone(),
                None => {
                    let (mu, lv, _) = self.prior_stats(i, &s);
                    mu.row(0).iter().zip(lv.row(0)).map(|(m, l)| m + (0.5 * l).exp() * rng::gaussian(&mut r)).collect()
                }
            };
            s = self.step(i, &s, &z.clone().insert_axis(Axis(0))).2;
            layers.push(z);
        }
        Ok(LatentHierarchy { layers })
    }

    /// ELBO terms for one image with reparameterization noise from `seed`.
    pub fn elbo(&self, x: &Image, seed: u64) -> Result<ElboBreakdown> {
        let xm = self.images_to_matrix(&[x])?;
        let eps = self.draw_eps(1, seed);
        let f = self.forward(&xm, Noise::Given(&eps))?;
        let reconstruction_nll: f64 = xm.iter().zip(f.eta.iter()).map(|(&xv, &e)| cb_nll(xv, e)).sum();
        let mut kl_per_layer = Vec::new();
        for i in 0..self.config.layers() {
            let q = GaussianStats { mean: f.mu_q[i].row(0).to_owned(), log_var: f.lv_q[i].row(0).to_owned() };
            let p = GaussianStats { mean: f.mu_p[i].row(0).to_owned(), log_var: f.lv_p[i].row(0).to_owned() };
            kl_per_layer.push(gauss_kl(&q, &p)?);
        }
        let total = reconstruction_nll + kl_per_layer.iter().sum::<f64>();
        if !total.is_finite() {
            return Err(Error::Numeric("non-finite ELBO".into()));
        }
        Ok(ElboBreakdown { reconstruction_nll, kl_per_layer, total })
    }

    /// Posterior means of the first `k` layers along the zero-noise path.
    pub fn extract_latent_vector(&self, x: &Image, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.config.layers() {
            return Err(Error::Validation(format!("k must be in 1..={}, got {k}", self.config.layers())));
        }
        let (_, z) = self.encode_mean(x)?;
        Ok(z.layers[..k].iter().flat_map(|l| l.iter().copied()).collect())
    }

    /// Batched [`HvaeParams::extract_latent_vector`]: one row per image.
    pub fn extract_latent_matrix(&self, images: &[&Image], k: usize) -> Result<Array2<f64>> {
        if k == 0 || k > self.config.layers() {
            return Err(Error::Validation(format!("k must be in 1..={}, got {k}", self.config.layers())));
        }
        let x = self.images_to_matrix(images)?;
        let f = self.forward(&x, Noise::Zero)?;
        let cols = self.config.prefix_latent(k);
        Ok(f.zcat.slice(ndarray::s![.., ..cols]).to_owned())
    }

    /// Splits `v` into the first `k` layers, samples the rest from the prior
    /// and decodes.
    pub fn reconstruct_from_vector(&self, v: &[f64], k: usize, seed: u64) -> Result<Image> {
        if k == 0 || k > self.config.layers() {
            return Err(Error::Validation(format!("k must be in 1..={}, got {k}", self.config.layers())));
        }
        let want = self.config.prefix_latent(k);
        if v.len() != want {
            return Err(Error::Shape(format!("latent vector has length {}, expected {want}", v.len())));
        }
        let mut fixed = Vec::with_capacity(k);
        let mut at = 0;
        for &w in &self.config.widths[..k] {
            fixed.push(Array1::from(v[at..at + w].to_vec()));
            at += w;
        }
        let z = self.sample_prior(seed, &fixed)?;
        self.decode(&z)
    }

    /// Zero-noise reconstruction `decode(μ-path of encode(x))`.
    pub fn reconstruct(&self, x: &Image) -> Result<Image> {
        let (_, z) = self.encode_mean(x)?;
        self.decode(&z)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        matfile::save(path, &self.to_matrices(), &serde_json::json!({ "kind": "hvae", "config": self.config }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mats, side) = matfile::load(path)?;
        let config: HvaeConfig = serde_json::from_value(side["config"].clone())?;
        let mut p = HvaeParams::new(config, 0)?;
        p.load_matrices(mats)?;
        Ok(p)
    }
}

/// Minibatch SGD on the negative ELBO. Returns the per-step loss curve.
pub fn train_hvae(params: &mut HvaeParams, dataset: &[Image], opt: &SgdConfig) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Validation("hvae training set is empty".into()));
    }
    let seed = opt.seed;
    nn::train_sgd(params, opt, dataset.len(), |p, batch, step| {
        let imgs: Vec<&Image> = batch.iter().map(|&i| &dataset[i]).collect();
        p.loss_and_grad(&imgs, rng::mix(seed, step as u64 + 1))
    })
}

/// Mean per-pixel squared error of zero-noise reconstructions.
pub fn reconstruction_mse(params: &HvaeParams, images: &[Image]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for img in images {
        let r = params.reconstruct(img)?;
        total += img.data.iter().zip(&r.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += img.data.len();
    }
    Ok(total / n.max(1) as f64)
}

/// Mean per-pixel squared error when only the top `k` layers come from the
/// posterior (means) and the remaining layers are sampled from the prior.
pub fn top_k_mse(params: &HvaeParams, images: &[Image], k: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, img) in images.iter().enumerate() {
        let v = params.extract_latent_vector(img, k)?;
        let r = params.reconstruct_from_vector(&v, k, rng::mix(seed, i as u64))?;
        total += img.data.iter().zip(&r.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += img.data.len();
    }
    Ok(total / n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> HvaeConfig {
        HvaeConfig { height: 2, width: 2, channels: 1, widths: vec![2, 3], enc_hidden: 3, dec_hidden: 3 }
    }

    fn img(v: f64) -> Image {
        Image::new(2, 2, 1, vec![v, 1.0 - v, 0.3, 0.9]).unwrap()
    }

    #[test]
    fn kl_closed_forms() {
        let s = |m: f64, v: f64| GaussianStats { mean: Array1::from(vec![m]), log_var: Array1::from(vec![v.ln()]) };
        assert!(gauss_kl(&s(0.0, 1.0), &s(0.0, 1.0)).unwrap().abs() < 1e-12);
        assert!((gauss_kl(&s(1.0, 1.0), &s(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-12);
        let expected = (2.0 - 1.0 - 2f64.ln()) / 2.0;
        assert!((gauss_kl(&s(0.0, 2.0), &s(0.0, 1.0)).unwrap() - expected).abs() < 1e-12);
        let bad = GaussianStats { mean: Array1::zeros(2), log_var: Array1::zeros(2) };
        assert!(matches!(gauss_kl(&bad, &s(0.0, 1.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn cb_series_and_closed_form_agree() {
        for &e in &[-0.0099f64, -0.003, 0.0, 0.004, 0.0099] {
            let closed = if e == 0.0 { 2f64.ln() } else { (e / (e / 2.0).tanh()).ln() };
            assert!((cb_log_norm(e) - closed).abs() < 1e-12);
        }
        for &e in &[0.011f64, 0.5, -3.0, 20.0] {
            let h = 1e-6;
            let fd = (cb_log_norm(e + h) - cb_log_norm(e - h)) / (2.0 * h);
            assert!((fd - cb_log_norm_grad(e)).abs() < 1e-6);
        }
        assert!((cb_mean(0.0) - 0.5).abs() < 1e-12);
        assert!((cb_mean(1e-3 * 0.999) - cb_mean(1.001e-3)).abs() < 1e-6);
        assert!(cb_mean(50.0) > 0.97 && cb_mean(-50.0) < 0.03);
    }

    #[test]
    fn encode_deterministic_and_zero_noise_is_mean() {
        let p = HvaeParams::new(micro(), 1).unwrap();
        let (_, a) = p.encode(&img(0.2), 9).unwrap();
        let (_, b) = p.encode(&img(0.2), 9).unwrap();
        assert_eq!(a, b);
        let (stats, z) = p.encode_mean(&img(0.2)).unwrap();
        for (s, l) in stats.iter().zip(&z.layers) {
            assert_eq!(&s.mean, l);
        }
    }

    #[test]
    fn top_prior_ignores_image() {
        let mut p = HvaeParams::new(micro(), 2).unwrap();
        p.state0.fill(0.3);
        let (qa, za) = p.encode(&img(0.1), 1).unwrap();
        let (qb, zb) = p.encode(&img(0.9), 1).unwrap();
        assert_ne!(qa[0].mean, qb[0].mean);
        let pa = p.prior_along(&za).unwrap();
        let pb = p.prior_along(&zb).unwrap();
        assert_eq!(pa[0], pb[0]);
    }

    #[test]
    fn decode_range_and_determinism() {
        let p = HvaeParams::new(micro(), 3).unwrap();
        let z = LatentHierarchy { layers: vec![Array1::zeros(2), Array1::zeros(3)] };
        let a = p.decode(&z).unwrap();
        assert_eq!(a, p.decode(&z).unwrap());
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let bad = LatentHierarchy { layers: vec![Array1::zeros(2)] };
        assert!(matches!(p.decode(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn sample_prior_contracts() {
        let p = HvaeParams::new(micro(), 4).unwrap();
        let full = vec![Array1::from(vec![0.1, 0.2]), Array1::from(vec![1.0, 2.0, 3.0])];
        assert_eq!(p.sample_prior(5, &full).unwrap().layers, full);
        assert_eq!(p.sample_prior(5, &[]).unwrap(), p.sample_prior(5, &[]).unwrap());
        let a = p.sample_prior(5, &full[..1]).unwrap();
        let b = p.sample_prior(6, &full[..1]).unwrap();
        assert_eq!(a.layers[0], b.layers[0]);
        assert_ne!(a.layers[1], b.layers[1]);
        assert!(p.sample_prior(5, &[Array1::zeros(3)]).is_err());
    }

    #[test]
    fn elbo_terms() {
        let p = HvaeParams::new(micro(), 5).unwrap();
        for seed in 0..20 {
            let e = p.elbo(&img(0.4), seed).unwrap();
            assert!(e.kl_per_layer.iter().all(|&k| k >= -1e-7));
            assert_eq!(e.total, e.reconstruction_nll + e.kl_per_layer.iter().sum::<f64>());
        }
    }

    #[test]
    fn extract_prefix_and_reconstruct_path() {
        let p = HvaeParams::new(micro(), 6).unwrap();
        let x = img(0.7);
        let v1 = p.extract_latent_vector(&x, 1).unwrap();
        let v2 = p.extract_latent_vector(&x, 2).unwrap();
        assert_eq!(v2.len(), 5);
        assert_eq!(&v2[..2], &v1[..]);
        let r = p.reconstruct_from_vector(&v2, 2, 11).unwrap();
        assert_eq!(r, p.reconstruct(&x).unwrap());
        assert!(p.reconstruct_from_vector(&v1, 2, 0).is_err());
        assert!(p.extract_latent_vector(&x, 0).is_err());
        let garbage = vec![1e3, -1e3];
        let g = p.reconstruct_from_vector(&garbage, 1, 1).unwrap();
        assert!(g.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn batch_loss_matches_single_elbo() {
        let p = HvaeParams::new(micro(), 7).unwrap();
        let x = img(0.25);
        let (loss, _) = p.loss_and_grad(&[&x], 3).unwrap();
        let e = p.elbo(&x, 3).unwrap();
        assert!((loss - e.total).abs() < 1e-10);
    }

    #[test]
    fn flat_counterpart_matches_budget() {
        let c = HvaeConfig::default();
        let flat = c.flat_counterpart();
        assert_eq!(flat.widths, vec![120]);
        let (a, b) = (HvaeParams::param_count_for(&c) as f64, HvaeParams::param_count_for(&flat) as f64);
        assert!((a - b).abs() / a < 0.1);
        let p = HvaeParams::new(c.clone(), 0).unwrap();
        assert_eq!(p.param_count(), HvaeParams::param_count_for(&c));
        assert_eq!(p.tensor_names().len(), p.tensors().len());
    }
}
