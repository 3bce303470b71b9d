//! Supervised stand-in for the vision and text feature extractors.
//!
//! A two-hidden-layer classifier over frames. `vision_feat` is the second
//! hidden layer; `text_feat(k)` is the output-layer weight column of class `k`,
//! so both live in the same space.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::StimulusMovie;
use crate::error::{Error, Result};
use crate::matfile;
use crate::nn::{self, Dense, Parameters, SgdConfig};
use crate::ppm::Image;
use crate::rng;

pub const MIN_SEMANTIC_ACCURACY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemanticConfig {
    pub hidden: usize,
    pub feature_len: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        SemanticConfig { hidden: 64, feature_len: 16, lr: 0.05, steps: 3000, batch: 32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFeatureModel {
    pub pixels: usize,
    pub n_classes: usize,
    pub l1: Dense,
    pub l2: Dense,
    pub out: Dense,
    /// Held-out classification accuracy measured at fit time.
    pub accuracy: f64,
}

impl Parameters for SemanticFeatureModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        [&self.l1, &self.l2, &self.out].into_iter().flat_map(|d| d.params()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t: Vec<&mut Array2<f64>> = Vec::new();
        t.extend(self.l1.params_mut());
        t.extend(self.l2.params_mut());
        t.extend(self.out.params_mut());
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        ["l1", "l2", "out"].iter().flat_map(|l| [format!("{l}.w"), format!("{l}.b")]).collect()
    }
}

fn images_matrix(images: &[&Image], pixels: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((images.len(), pixels));
    for (i, img) in images.iter().enumerate() {
        if img.data.len() != pixels {
            return Err(Error::Shape(format!("classifier expects {pixels} pixels, got {}", img.data.len())));
        }
        x.row_mut(i).assign(&Array1::from(img.data.clone()));
    }
    Ok(x)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

impl SemanticFeatureModel {
    pub fn new(pixels: usize, n_classes: usize, cfg: &SemanticConfig, seed: u64) -> Result<Self> {
        if pixels == 0 || n_classes < 2 || cfg.hidden == 0 || cfg.feature_len == 0 {
            return Err(Error::Validation("semantic model needs pixels, hidden widths and at least 2 classes".into()));
        }
        let mut r = rng::stream(seed, 0x5E3);
        Ok(SemanticFeatureModel {
            pixels,
            n_classes,
            l1: Dense::new(pixels, cfg.hidden, &mut r),
            l2: Dense::new(cfg.hidden, cfg.feature_len, &mut r),
            out: Dense::new(cfg.feature_len, n_classes, &mut r),
            accuracy: f64::NAN,
        })
    }

    pub fn feature_len(&self) -> usize {
        self.l2.outputs()
    }

    fn hidden(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h1 = nn::tanh(self.l1.forward(x));
        let h2 = nn::tanh(self.l2.forward(&h1));
        (h1, h2)
    }

    pub fn vision_feat(&self, img: &Image) -> Result<Vec<f64>> {
        Ok(self.vision_matrix(&[img])?.row(0).to_vec())
    }

    pub fn vision_matrix(&self, images: &[&Image]) -> Result<Array2<f64>> {
        let x = images_matrix(images, self.pixels)?;
        Ok(self.hidden(&x).1)
    }

    pub fn text_feat(&self, label: usize) -> Result<Vec<f64>> {
        if label >= self.n_classes {
            return Err(Error::Validation(format!("label {label} out of range for {} classes", self.n_classes)));
        }
        Ok(self.out.w.column(label).to_vec())
    }

    pub fn text_matrix(&self, labels: &[usize]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((labels.len(), self.feature_len()));
        for (i, &l) in labels.iter().enumerate() {
            m.row_mut(i).assign(&Array1::from(self.text_feat(l)?));
        }
        Ok(m)
    }

    pub fn classify(&self, img: &Image) -> Result<usize> {
        Ok(self.classify_all(&[img])?[0])
    }

    pub fn classify_all(&self, images: &[&Image]) -> Result<Vec<usize>> {
        let x = images_matrix(images, self.pixels)?;
        let logits = self.out.forward(&self.hidden(&x).1);
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect())
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, images: &[&Image], labels: &[usize]) -> Result<(f64, SemanticFeatureModel)> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(Error::Shape("one label per image is required".into()));
        }
        let x = images_matrix(images, self.pixels)?;
        let (h1, h2) = self.hidden(&x);
        let p = softmax_rows(&self.out.forward(&h2));
        let b = images.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = p.clone();
        for (i, &l) in labels.iter().enumerate() {
            if l >= self.n_classes {
                return Err(Error::Validation(format!("label {l} out of range")));
            }
            loss -= p[[i, l]].max(1e-300).ln();
            dlogits[[i, l]] -= 1.0;
        }
        dlogits /= b;
        let mut g = self.zeros_like();
        let dh2 = self.out.backward(&h2, &dlogits, &mut g.out);
        let dpre2 = nn::tanh_backward(&h2, &dh2);
        let dh1 = self.l2.backward(&h1, &dpre2, &mut g.l2);
        let dpre1 = nn::tanh_backward(&h1, &dh1);
        self.l1.backward(&x, &dpre1, &mut g.l1);
        Ok((loss / b, g))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let side = serde_json::json!({
            "kind": "semantic",
            "pixels": self.pixels,
            "n_classes": self.n_classes,
            "hidden": self.l1.outputs(),
            "feature_len": self.feature_len(),
            "accuracy": self.accuracy,
        });
        matfile::save(path, &self.to_matrices(), &side)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mats, side) = matfile::load(path)?;
        let get = |k: &str| side[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::Validation(format!("sidecar missing {k}")));
        let cfg = SemanticConfig { hidden: get("hidden")?, feature_len: get("feature_len")?, ..SemanticConfig::default() };
        let mut m = SemanticFeatureModel::new(get("pixels")?, get("n_classes")?, &cfg, 0)?;
        m.load_matrices(mats)?;
        m.accuracy = side["accuracy"].as_f64().unwrap_or(f64::NAN);
        Ok(m)
    }
}

/// Trains on `train` frames and gates on accuracy over `held_out` frames.
pub fn fit_semantic_model(
    movie: &StimulusMovie,
    train: &[usize],
    held_out: &[usize],
    cfg: &SemanticConfig,
    seed: u64,
) -> Result<SemanticFeatureModel> {
    let labels = movie
        .frame_labels
        .as_ref()
        .ok_or_else(|| Error::Validation("semantic model needs frame labels".into()))?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let (h, w, c) = movie.image_shape();
    let mut model = SemanticFeatureModel::new(h * w * c, n_classes, cfg, seed)?;
    let opt = SgdConfig::new(cfg.lr, cfg.steps, cfg.batch, seed);
    nn::train_sgd(&mut model, &opt, train.len(), |m, batch, _| {
        let imgs: Vec<&Image> = batch.iter().map(|&i| &movie.frames[train[i]]).collect();
        let ls: Vec<usize> = batch.iter().map(|&i| labels[train[i]]).collect();
        m.loss_and_grad(&imgs, &ls)
    })?;
    let eval: &[usize] = if held_out.is_empty() { train } else { held_out };
    let imgs: Vec<&Image> = eval.iter().map(|&i| &movie.frames[i]).collect();
    let pred = model.classify_all(&imgs)?;
    let correct = pred.iter().zip(eval).filter(|(p, &i)| **p == labels[i]).count();
    model.accuracy = correct as f64 / eval.len() as f64;
    if model.accuracy < MIN_SEMANTIC_ACCURACY {
        return Err(Error::SemanticQuality { accuracy: model.accuracy, required: MIN_SEMANTIC_ACCURACY });
    }
    Ok(model)
}
