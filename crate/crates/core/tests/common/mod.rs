#![allow(dead_code)]

use spikediff::nn::Parameters;

/// Central finite-difference check of an analytic gradient, tensor by tensor.
///
/// Returns `(tensor name, worst relative error)` for every tensor. Relative
/// error is `|a − n| / max(|a| + |n|, floor)`.
pub fn gradcheck<P, L>(params: &P, analytic: &P, h: f64, floor: f64, mut loss: L) -> Vec<(String, f64)>
where
    P: Parameters,
    L: FnMut(&P) -> f64,
{
    let names = params.tensor_names();
    let grads = analytic.to_matrices();
    let mut out = Vec::new();
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        let mut worst = 0.0f64;
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t].as_slice_mut().expect("standard layout")[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].as_slice_mut().expect("standard layout")[k] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = grads[t].as_slice().expect("standard layout")[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push((names[t].clone(), worst));
    }
    out
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Ridge weights from the normal equations `(AᵀA + μI) W = AᵀB`, solved with
/// nalgebra's LU decomposition. `A` is used as given.
pub fn normal_equations(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>, mu: f64) -> ndarray::Array2<f64> {
    let (n, u) = a.dim();
    let am = nalgebra::DMatrix::from_row_iterator(n, u, a.iter().copied());
    let bm = nalgebra::DMatrix::from_row_iterator(n, b.ncols(), b.iter().copied());
    let lhs = am.transpose() * &am + nalgebra::DMatrix::identity(u, u) * mu;
    let rhs = am.transpose() * bm;
    let w = lhs.lu().solve(&rhs).expect("oracle system is nonsingular");
    ndarray::Array2::from_shape_fn((u, b.ncols()), |(i, j)| w[(i, j)])
}

/// Column z-scoring with population std, the oracle counterpart of the
/// ridge standardization.
pub fn zscore(x: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let m = col.sum() / n;
        let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        col.mapv_inplace(|v| (v - m) / s);
    }
    out
}

pub fn center(y: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let m = y.mean_axis(ndarray::Axis(0)).unwrap();
    y - &m
}

pub fn rel_err(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    let num = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    num / den
}

/// Mean and unbiased variance of iterated forward steps and of the
/// closed-form jump from the same `z0`, each over `n` independent draws.
pub fn forward_moments(
    sched: &spikediff::diffusion::NoiseSchedule,
    z0: f64,
    t: usize,
    n: usize,
    seed: u64,
) -> ((f64, f64), (f64, f64)) {
    use spikediff::diffusion::{forward_jump, forward_step, LatentImage};
    let mut r = spikediff::rng::stream(seed, t as u64);
    let mut iterated = Vec::with_capacity(n);
    let mut jumped = Vec::with_capacity(n);
    for _ in 0..n {
        let mut z = LatentImage::flat(vec![z0]);
        for s in 1..=t {
            z = forward_step(&z, s, &[spikediff::rng::gaussian(&mut r)], sched).unwrap();
        }
        iterated.push(z.values[0]);
        let j = forward_jump(&LatentImage::flat(vec![z0]), t, &[spikediff::rng::gaussian(&mut r)], sched).unwrap();
        jumped.push(j.values[0]);
    }
    ((mean(&iterated), variance(&iterated)), (mean(&jumped), variance(&jumped)))
}
