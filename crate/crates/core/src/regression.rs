//! Closed-form ridge regression with temporally blocked cross-validation.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::matfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RidgeOptions {
    /// Standardize every column of X to mean 0, std 1 before solving.
    pub standardize: bool,
    /// Center Y and restore its mean through the intercept.
    pub fit_intercept: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions { standardize: true, fit_intercept: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// Inputs × outputs.
    pub weights: Array2<f64>,
    pub intercept: Array1<f64>,
    pub x_mean: Array1<f64>,
    pub x_std: Array1<f64>,
    pub lambda: f64,
    pub options: RidgeOptions,
    /// Columns whose training std was zero; their std is stored as 1.
    pub constant_columns: Vec<usize>,
}

struct Prepared {
    xs: Array2<f64>,
    yc: Array2<f64>,
    x_mean: Array1<f64>,
    x_std: Array1<f64>,
    y_mean: Array1<f64>,
    constant_columns: Vec<usize>,
}

fn prepare(x: ArrayView2<f64>, y: ArrayView2<f64>, opts: RidgeOptions) -> Prepared {
    let (n, u) = x.dim();
    let (x_mean, x_std, constant_columns) = if opts.standardize {
        let mean = x.mean_axis(Axis(0)).expect("n >= 1");
        let mut std = Array1::zeros(u);
        let mut constant = Vec::new();
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64;
            // relative threshold: columns equal up to rounding count as constant
            if var.sqrt() <= 1e-12 * (1.0 + mean[j].abs()) {
                std[j] = 1.0;
                constant.push(j);
            } else {
                std[j] = var.sqrt();
            }
        }
        (mean, std, constant)
    } else {
        (Array1::zeros(u), Array1::ones(u), Vec::new())
    };
    let mut xs = &x - &x_mean;
    xs /= &x_std;
    for &j in &constant_columns {
        xs.column_mut(j).fill(0.0);
    }
    let y_mean = if opts.fit_intercept {
        y.mean_axis(Axis(0)).expect("n >= 1")
    } else {
        Array1::zeros(y.ncols())
    };
    let yc = &y - &y_mean;
    Prepared { xs, yc, x_mean, x_std, y_mean, constant_columns }
}

fn check_inputs(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!("X has {} rows, Y has {}", x.nrows(), y.nrows())));
    }
    if x.nrows() < 2 {
        return Err(Error::Validation("ridge regression needs at least 2 samples".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Validation(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("X and Y must be finite".into()));
    }
    Ok(())
}

fn solve_penalized(gram: &Array2<f64>, rhs: &Array2<f64>, lambda: f64, n: usize) -> Result<Array2<f64>> {
    let mut a = gram.clone();
    let pen = lambda * n as f64;
    a.diag_mut().mapv_inplace(|d| d + pen);
    let chol = Cholesky::factor(a.view()).map_err(|e| match e {
        Error::Singular(m) if lambda == 0.0 => {
            Error::Singular(format!("{m}; X is rank deficient, use a positive lambda"))
        }
        other => other,
    })?;
    chol.solve(rhs.view())
}

fn assemble(p: Prepared, weights: Array2<f64>, lambda: f64, options: RidgeOptions) -> RidgeModel {
    RidgeModel {
        weights,
        intercept: p.y_mean,
        x_mean: p.x_mean,
        x_std: p.x_std,
        lambda,
        options,
        constant_columns: p.constant_columns,
    }
}

/// Fits `(XsᵀXs + λ·N·I) W = XsᵀYc` with a Cholesky solve.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64) -> Result<RidgeModel> {
    ridge_fit_with(x, y, lambda, RidgeOptions::default())
}

pub fn ridge_fit_with(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64, opts: RidgeOptions) -> Result<RidgeModel> {
    check_inputs(x, y, lambda)?;
    let p = prepare(x, y, opts);
    let gram = p.xs.t().dot(&p.xs);
    let rhs = p.xs.t().dot(&p.yc);
    let w = solve_penalized(&gram, &rhs, lambda, x.nrows())?;
    Ok(assemble(p, w, lambda, opts))
}

impl RidgeModel {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn standardize(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::Shape(format!("model expects {} inputs, got {}", self.inputs(), x.ncols())));
        }
        let mut xs = &x - &self.x_mean;
        xs /= &self.x_std;
        for &j in &self.constant_columns {
            xs.column_mut(j).fill(0.0);
        }
        Ok(xs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mats = vec![
            self.weights.clone(),
            matfile::row(&self.intercept),
            matfile::row(&self.x_mean),
            matfile::row(&self.x_std),
        ];
        let side = json!({
            "kind": "ridge",
            "lambda": self.lambda,
            "standardize": self.options.standardize,
            "fit_intercept": self.options.fit_intercept,
            "constant_columns": self.constant_columns,
        });
        matfile::save(path, &mats, &side)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mats, side) = matfile::load(path)?;
        let [w, b, m, s]: [Array2<f64>; 4] = mats
            .try_into()
            .map_err(|_| Error::Validation("ridge container must hold 4 matrices".into()))?;
        let lambda = side["lambda"].as_f64().ok_or_else(|| Error::Validation("sidecar lacks lambda".into()))?;
        let model = RidgeModel {
            intercept: matfile::unrow(&b)?,
            x_mean: matfile::unrow(&m)?,
            x_std: matfile::unrow(&s)?,
            weights: w,
            lambda,
            options: RidgeOptions {
                standardize: side["standardize"].as_bool().unwrap_or(true),
                fit_intercept: side["fit_intercept"].as_bool().unwrap_or(true),
            },
            constant_columns: serde_json::from_value(side["constant_columns"].clone()).unwrap_or_default(),
        };
        if model.x_mean.len() != model.inputs() || model.x_std.len() != model.inputs() || model.intercept.len() != model.outputs() {
            return Err(Error::Shape("ridge container matrices disagree".into()));
        }
        Ok(model)
    }
}

/// `Ŷ = standardize(X)·W + intercept`.
pub fn ridge_predict(model: &RidgeModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(model.standardize(x)?.dot(&model.weights) + &model.intercept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub lambda_grid: Vec<f64>,
    /// `fold_mse[g][f]`: validation MSE of grid point `g` on fold `f`.
    pub fold_mse: Vec<Vec<f64>>,
    pub mean_mse: Vec<f64>,
    pub selected_lambda: f64,
    pub selected_index: usize,
}

/// Contiguous, unshuffled fold boundaries over `n` rows.
pub fn block_folds(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    (0..k).map(|f| (f * n / k)..((f + 1) * n / k)).collect()
}

fn mse(a: &Array2<f64>, b: ArrayView2<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n
}

/// K-fold cross-validation over contiguous frame blocks, then a refit on all
/// rows at the selected lambda. Ties in mean validation MSE go to the larger
/// lambda; among identical values the first occurrence wins.
pub fn ridge_cv(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda_grid: &[f64], k: usize) -> Result<(CvReport, RidgeModel)> {
    ridge_cv_with(x, y, lambda_grid, k, RidgeOptions::default())
}

pub fn ridge_cv_with(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    lambda_grid: &[f64],
    k: usize,
    opts: RidgeOptions,
) -> Result<(CvReport, RidgeModel)> {
    if lambda_grid.is_empty() {
        return Err(Error::Validation("lambda grid is empty".into()));
    }
    if let Some(l) = lambda_grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::Validation(format!("lambda grid contains invalid value {l}")));
    }
    if k < 2 {
        return Err(Error::Validation("cross-validation needs at least 2 folds".into()));
    }
    let n = x.nrows();
    if n < 2 * k {
        return Err(Error::Validation(format!("{n} rows are too few for {k} folds")));
    }
    check_inputs(x, y, 0.0)?;

    let folds = block_folds(n, k);
    let mut fold_mse = vec![vec![0.0; k]; lambda_grid.len()];
    for (f, fold) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..n).filter(|i| !fold.contains(i)).collect();
        let val: Vec<usize> = fold.clone().collect();
        let (xt, yt) = (x.select(Axis(0), &train), y.select(Axis(0), &train));
        let (xv, yv) = (x.select(Axis(0), &val), y.select(Axis(0), &val));
        let p = prepare(xt.view(), yt.view(), opts);
        let gram = p.xs.t().dot(&p.xs);
        let rhs = p.xs.t().dot(&p.yc);
        let shell = RidgeModel {
            weights: Array2::zeros((0, 0)),
            intercept: p.y_mean.clone(),
            x_mean: p.x_mean.clone(),
            x_std: p.x_std.clone(),
            lambda: 0.0,
            options: opts,
            constant_columns: p.constant_columns.clone(),
        };
        for (g, &lambda) in lambda_grid.iter().enumerate() {
            let w = solve_penalized(&gram, &rhs, lambda, train.len())?;
            let model = RidgeModel { weights: w, lambda, ..shell.clone() };
            fold_mse[g][f] = mse(&ridge_predict(&model, xv.view())?, yv.view());
        }
    }
    let mean_mse: Vec<f64> = fold_mse.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let mut best = 0;
    for g in 1..lambda_grid.len() {
        let better = mean_mse[g] < mean_mse[best]
            || (mean_mse[g] == mean_mse[best] && lambda_grid[g] > lambda_grid[best]);
        if better {
            best = g;
        }
    }
    let model = ridge_fit_with(x, y, lambda_grid[best], opts)?;
    let report = CvReport {
        lambda_grid: lambda_grid.to_vec(),
        fold_mse,
        mean_mse,
        selected_lambda: lambda_grid[best],
        selected_index: best,
    };
    Ok((report, model))
}
