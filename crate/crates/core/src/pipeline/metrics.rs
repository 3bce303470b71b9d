//! Reconstruction metrics and the permutation null.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SemanticFeatureModel;
use crate::error::{Error, Result};
use crate::ppm::Image;
use crate::rng;

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson needs equal lengths");
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// Peak signal-to-noise ratio in dB for signals in [0, 1]; capped at 100.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let m = mse(a, b);
    if m <= 1e-10 {
        100.0
    } else {
        -10.0 * m.log10()
    }
}

/// Two-way identification: over every ordered pair `(i, j)`, `i ≠ j`, the
/// reconstruction `i` counts as identified when it correlates more with truth
/// `i` than with truth `j`. Ties count one half.
pub fn identification_accuracy(recons: &[Vec<f64>], truths: &[Vec<f64>]) -> f64 {
    let n = recons.len();
    if n < 2 {
        return f64::NAN;
    }
    let c = correlation_matrix(recons, truths);
    identification_from_matrix(&c, &(0..n).collect::<Vec<_>>())
}

/// `c[i][j] = pearson(recons[i], truths[j])`.
pub fn correlation_matrix(recons: &[Vec<f64>], truths: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((recons.len(), truths.len()), |(i, j)| pearson(&recons[i], &truths[j]))
}

/// Identification accuracy when reconstruction `i` is paired with truth
/// `pairing[i]`.
pub fn identification_from_matrix(c: &Array2<f64>, pairing: &[usize]) -> f64 {
    let n = pairing.len();
    let mut score = 0.0;
    for i in 0..n {
        let own = c[[i, pairing[i]]];
        for j in 0..n {
            if j == i {
                continue;
            }
            let other = c[[i, pairing[j]]];
            if own > other {
                score += 1.0;
            } else if own == other {
                score += 0.5;
            }
        }
    }
    score / (n * (n - 1)) as f64
}

/// Mean over columns of the Pearson correlation between predicted and true
/// latent values, across frames.
pub fn column_mean_correlation(pred: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    column_mean_correlation_paired(pred, truth, &(0..pred.nrows()).collect::<Vec<_>>())
}

fn column_mean_correlation_paired(pred: &Array2<f64>, truth: &Array2<f64>, pairing: &[usize]) -> f64 {
    let cols = pred.ncols();
    if cols == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..cols {
        let p: Vec<f64> = pred.column(j).to_vec();
        let t = truth.column(j);
        let tp: Vec<f64> = pairing.iter().map(|&i| t[i]).collect();
        total += pearson(&p, &tp);
    }
    total / cols as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub correlation: f64,
    pub mse: f64,
    pub psnr: f64,
    pub predicted_label: Option<usize>,
    pub true_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub per_image: Vec<ImageMetrics>,
    pub identification: f64,
    pub semantic_accuracy: Option<f64>,
}

impl MetricsTable {
    pub fn mean_correlation(&self) -> f64 {
        mean(self.per_image.iter().map(|m| m.correlation))
    }

    pub fn mean_mse(&self) -> f64 {
        mean(self.per_image.iter().map(|m| m.mse))
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.per_image.iter().map(|m| m.psnr))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn evaluate(
    recons: &[Image],
    truths: &[Image],
    labels: Option<&[usize]>,
    sem: Option<&SemanticFeatureModel>,
) -> Result<MetricsTable> {
    if recons.len() != truths.len() || labels.is_some_and(|l| l.len() != truths.len()) {
        return Err(Error::Shape(format!(
            "evaluate needs equal lengths: {} reconstructions, {} truths",
            recons.len(),
            truths.len()
        )));
    }
    for (r, t) in recons.iter().zip(truths) {
        if r.shape() != t.shape() {
            return Err(Error::Shape(format!("image shapes differ: {:?} vs {:?}", r.shape(), t.shape())));
        }
    }
    let predicted: Option<Vec<usize>> = match sem {
        Some(s) if !recons.is_empty() => Some(s.classify_all(&recons.iter().collect::<Vec<_>>())?),
        _ => None,
    };
    let per_image: Vec<ImageMetrics> = recons
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (r, t))| ImageMetrics {
            correlation: pearson(&r.data, &t.data),
            mse: mse(&r.data, &t.data),
            psnr: psnr(&r.data, &t.data),
            predicted_label: predicted.as_ref().map(|p| p[i]),
            true_label: labels.map(|l| l[i]),
        })
        .collect();
    let semantic_accuracy = match (&predicted, labels) {
        (Some(p), Some(l)) if !l.is_empty() => {
            Some(p.iter().zip(l).filter(|(a, b)| a == b).count() as f64 / l.len() as f64)
        }
        _ => None,
    };
    let r: Vec<Vec<f64>> = recons.iter().map(|i| i.data.clone()).collect();
    let t: Vec<Vec<f64>> = truths.iter().map(|i| i.data.clone()).collect();
    Ok(MetricsTable { per_image, identification: identification_accuracy(&r, &t), semantic_accuracy })
}

/// Observed statistic with its permutation-null distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullTest {
    pub observed: f64,
    pub null_lo: f64,
    pub null_hi: f64,
    pub p_value: f64,
}

impl NullTest {
    /// Builds the central 95% interval and a one-sided p-value (upper tail,
    /// with the +1 correction) from null samples.
    pub fn from_samples(observed: f64, mut null: Vec<f64>) -> Self {
        null.sort_by(|a, b| a.total_cmp(b));
        let n = null.len();
        let q = |p: f64| null[((p * (n - 1) as f64).round() as usize).min(n - 1)];
        let above = null.iter().filter(|&&v| v >= observed).count();
        NullTest { observed, null_lo: q(0.025), null_hi: q(0.975), p_value: (above + 1) as f64 / (n + 1) as f64 }
    }

    pub fn inside(&self) -> bool {
        self.observed >= self.null_lo && self.observed <= self.null_hi
    }
}

fn permutations(n: usize, count: usize, seed: u64) -> impl Iterator<Item = Vec<usize>> {
    let mut r = rng::stream(seed, 0x9E2);
    (0..count).map(move |_| {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut r);
        p
    })
}

/// Null for [`column_mean_correlation`] by re-pairing predicted rows with
/// permuted truth rows.
pub fn latent_correlation_null(pred: &Array2<f64>, truth: &Array2<f64>, count: usize, seed: u64) -> Result<NullTest> {
    if pred.dim() != truth.dim() || pred.nrows() < 2 || count == 0 {
        return Err(Error::Shape("latent null needs matching matrices with at least 2 rows".into()));
    }
    let observed = column_mean_correlation(pred, truth);
    let null = permutations(pred.nrows(), count, seed)
        .map(|p| column_mean_correlation_paired(pred, truth, &p))
        .collect();
    Ok(NullTest::from_samples(observed, null))
}

/// Null for [`identification_accuracy`] by permuting the reconstruction/truth
/// pairing.
pub fn identification_null(recons: &[Image], truths: &[Image], count: usize, seed: u64) -> Result<NullTest> {
    if recons.len() != truths.len() || recons.len() < 2 || count == 0 {
        return Err(Error::Shape("identification null needs at least 2 pairs".into()));
    }
    let r: Vec<Vec<f64>> = recons.iter().map(|i| i.data.clone()).collect();
    let t: Vec<Vec<f64>> = truths.iter().map(|i| i.data.clone()).collect();
    let c = correlation_matrix(&r, &t);
    let n = r.len();
    let observed = identification_from_matrix(&c, &(0..n).collect::<Vec<_>>());
    let null = permutations(n, count, seed).map(|p| identification_from_matrix(&c, &p)).collect();
    Ok(NullTest::from_samples(observed, null))
}

/// Mean Pearson correlation between paired images after block-averaging both
/// by `factor`.
pub fn downsampled_correlation(a: &[Image], b: &[Image], factor: usize) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape("downsampled correlation needs equal, non-empty image lists".into()));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += pearson(&x.downsample(factor).data, &y.downsample(factor).data);
    }
    Ok(total / a.len() as f64)
}
