//! Minimal dense-network toolkit with hand-written backpropagation.
//!
//! All trainable tensors are `Array2<f64>` (biases are `1×n`) so a model can
//! be flattened, clipped, persisted and finite-difference checked uniformly.

use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// A model whose trainable tensors can be enumerated in a fixed order.
///
/// A zeroed clone of a model doubles as its gradient buffer.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;
    /// One name per tensor, same order as [`Parameters::tensors`].
    fn tensor_names(&self) -> Vec<String>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn to_matrices(&self) -> Vec<Array2<f64>> {
        self.tensors().into_iter().cloned().collect()
    }

    /// Replaces every tensor; shapes must match the current model.
    fn load_matrices(&mut self, mats: Vec<Array2<f64>>) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != mats.len() {
            return Err(Error::Shape(format!(
                "model has {} tensors, container has {}",
                slots.len(),
                mats.len()
            )));
        }
        for (i, (slot, m)) in slots.iter_mut().zip(mats).enumerate() {
            if slot.dim() != m.dim() {
                return Err(Error::Shape(format!(
                    "tensor {i}: expected {:?}, found {:?}",
                    slot.dim(),
                    m.dim()
                )));
            }
            **slot = m;
        }
        Ok(())
    }
}

/// Affine layer `y = x W + b` with `W` stored input × output.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (inputs.max(1) as f64).sqrt();
        Dense {
            w: Array2::from_shape_fn((inputs, outputs), |_| rng::gaussian(rng) * scale),
            b: Array2::zeros((1, outputs)),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { w: Array2::zeros((inputs, outputs)), b: Array2::zeros((1, outputs)) }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn params(&self) -> [&Array2<f64>; 2] {
        [&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Array2<f64>; 2] {
        [&mut self.w, &mut self.b]
    }
}

pub fn tanh(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(f64::tanh)
}

/// Backprop through `y = tanh(x)` given the activation `y`.
pub fn tanh_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut d = dy.clone();
    d.zip_mut_with(y, |g, &a| *g *= 1.0 - a * a);
    d
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Horizontal concatenation of row-aligned blocks.
pub fn hcat(blocks: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("blocks share row count")
}

/// Splits columns into consecutive blocks of the given widths.
pub fn hsplit(x: &Array2<f64>, widths: &[usize]) -> Vec<Array2<f64>> {
    let mut out = Vec::with_capacity(widths.len());
    let mut at = 0;
    for &w in widths {
        out.push(x.slice(ndarray::s![.., at..at + w]).to_owned());
        at += w;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    Adam,
}

/// Minibatch training settings shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

fn default_clip() -> f64 {
    100.0
}

impl SgdConfig {
    pub fn new(lr: f64, steps: usize, batch: usize, seed: u64) -> Self {
        SgdConfig { lr, steps, batch, seed, clip_norm: default_clip(), optimizer: Optimizer::Sgd }
    }

    pub fn adam(lr: f64, steps: usize, batch: usize, seed: u64) -> Self {
        SgdConfig { optimizer: Optimizer::Adam, ..Self::new(lr, steps, batch, seed) }
    }
}

pub fn global_norm<P: Parameters>(g: &P) -> f64 {
    g.tensors()
        .iter()
        .map(|t| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// One clipped SGD update. Returns the pre-clipping gradient norm.
pub fn sgd_update<P: Parameters>(params: &mut P, grad: &P, lr: f64, clip_norm: f64) -> f64 {
    let norm = global_norm(grad);
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    if lr == 0.0 {
        return norm;
    }
    for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
        p.scaled_add(-lr * scale, g);
    }
    norm
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState<P> {
    m: P,
    v: P,
    t: i32,
}

impl<P: Parameters> AdamState<P> {
    pub fn new(like: &P) -> Self {
        AdamState { m: like.zeros_like(), v: like.zeros_like(), t: 0 }
    }

    /// One clipped Adam update. Returns the pre-clipping gradient norm.
    pub fn update(&mut self, params: &mut P, grad: &P, lr: f64, clip_norm: f64) -> f64 {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        let norm = global_norm(grad);
        if lr == 0.0 {
            return norm;
        }
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let step = lr * c2.sqrt() / c1;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g * scale;
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= step * *m / (v.sqrt() + 1e-8);
            });
        }
        norm
    }
}

/// Runs `cfg.steps` minibatch updates over `n_items` training items.
///
/// `loss_grad(params, batch_indices, step)` returns the minibatch loss and its
/// gradient. Minibatches are drawn with replacement from a stream seeded by
/// `cfg.seed`. The returned curve holds the loss of every step.
pub fn train_sgd<P, F>(params: &mut P, cfg: &SgdConfig, n_items: usize, mut loss_grad: F) -> Result<Vec<f64>>
where
    P: Parameters,
    F: FnMut(&P, &[usize], usize) -> Result<(f64, P)>,
{
    if n_items == 0 {
        return Err(Error::Validation("training set is empty".into()));
    }
    let mut sampler = rng::stream(cfg.seed, 0xBA7C);
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut batch = vec![0usize; cfg.batch.max(1)];
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| AdamState::new(params));
    for step in 0..cfg.steps {
        for b in batch.iter_mut() {
            *b = sampler.random_range(0..n_items);
        }
        let (loss, grad) = loss_grad(params, &batch, step)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {step}")));
        }
        match adam.as_mut() {
            Some(state) => state.update(params, &grad, cfg.lr, cfg.clip_norm),
            None => sgd_update(params, &grad, cfg.lr, cfg.clip_norm),
        };
        if !params.all_finite() {
            return Err(Error::Numeric(format!("non-finite parameters after step {step}")));
        }
        curve.push(loss);
    }
    Ok(curve)
}

pub fn check_finite(x: &Array2<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activations in {what}")))
    }
}
