mod common;

use ndarray::Array2;
use proptest::prelude::*;
use spikediff::regression::{ridge_cv, ridge_fit, ridge_fit_with, ridge_predict, RidgeOptions};
use spikediff::rng;

fn random(n: usize, m: usize, seed: u64, tag: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, tag);
    Array2::from_shape_vec((n, m), rng::gaussian_vec(&mut r, n * m)).unwrap()
}

#[test]
fn raw_fit_matches_normal_equations() {
    let raw = RidgeOptions { standardize: false, fit_intercept: false };
    for case in 0..25u64 {
        let n = 5 + (case as usize * 7) % 46;
        let u = 1 + (case as usize * 3) % 20;
        let lambda = [0.01, 0.3, 2.0][case as usize % 3];
        let x = random(n, u, case, 1);
        let y = random(n, 3, case, 2);
        let m = ridge_fit_with(x.view(), y.view(), lambda, raw).unwrap();
        let w = common::normal_equations(&x, &y, lambda * n as f64);
        let e = common::rel_err(&m.weights, &w);
        assert!(e <= 1e-8, "case {case} ({n}x{u}): rel err {e}");
    }
}

#[test]
fn standardized_fit_matches_oracle_on_zscored_data() {
    for case in 0..10u64 {
        let (n, u) = (20 + case as usize, 4 + case as usize);
        let x = random(n, u, 100 + case, 1).mapv(|v| 3.0 * v + 7.0);
        let y = random(n, 2, 100 + case, 2).mapv(|v| v - 4.0);
        let m = ridge_fit(x.view(), y.view(), 0.5).unwrap();
        let w = common::normal_equations(&common::zscore(&x), &common::center(&y), 0.5 * n as f64);
        assert!(common::rel_err(&m.weights, &w) <= 1e-8);
        let mean_y = y.mean_axis(ndarray::Axis(0)).unwrap();
        for (a, b) in m.intercept.iter().zip(&mean_y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn predictions_with_huge_lambda_collapse_to_training_mean() {
    let x = random(30, 5, 9, 1);
    let y = random(30, 2, 9, 2);
    let m = ridge_fit(x.view(), y.view(), 1e12).unwrap();
    let p = ridge_predict(&m, random(4, 5, 9, 3).view()).unwrap();
    let mean_y = y.mean_axis(ndarray::Axis(0)).unwrap();
    for row in p.rows() {
        for (a, b) in row.iter().zip(&mean_y) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn duplicate_column_splits_weight_evenly() {
    let base = random(40, 3, 21, 1);
    let mut x = Array2::zeros((40, 4));
    x.slice_mut(ndarray::s![.., 0..3]).assign(&base);
    x.column_mut(3).assign(&base.column(0));
    let y = random(40, 1, 21, 2);
    let m = ridge_fit(x.view(), y.view(), 0.1).unwrap();
    assert!((m.weights[[0, 0]] - m.weights[[3, 0]]).abs() < 1e-9);
}

#[test]
fn constant_column_is_ignored() {
    let mut x = random(25, 3, 5, 1);
    x.column_mut(1).fill(4.2);
    let y = random(25, 2, 5, 2);
    let m = ridge_fit(x.view(), y.view(), 1.0).unwrap();
    assert_eq!(m.constant_columns, vec![1]);
    assert!(m.weights.row(1).iter().all(|w| *w == 0.0));
}

#[test]
fn cv_prefers_small_lambda_on_noiseless_linear_data() {
    let x = random(60, 4, 3, 1);
    let w = random(4, 2, 3, 2);
    let y = x.dot(&w);
    let (report, model) = ridge_cv(x.view(), y.view(), &[1e-6, 1.0, 100.0], 5).unwrap();
    assert_eq!(report.selected_index, 0);
    assert_eq!(model.lambda, 1e-6);
    assert_eq!(report.fold_mse.len(), 3);
    assert!(report.fold_mse.iter().all(|r| r.len() == 5));
}

#[test]
fn cv_ties_go_to_larger_lambda() {
    // Y is constant, so every lambda predicts it exactly
    let x = random(30, 3, 4, 1);
    let y = Array2::from_elem((30, 1), 2.5);
    let (report, _) = ridge_cv(x.view(), y.view(), &[0.1, 10.0, 1.0], 3).unwrap();
    assert_eq!(report.selected_lambda, 10.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn residual_is_orthogonal_to_penalized_design(seed in 0u64..1000, lambda in 0.01f64..10.0) {
        let raw = RidgeOptions { standardize: false, fit_intercept: false };
        let x = random(15, 4, seed, 1);
        let y = random(15, 2, seed, 2);
        let m = ridge_fit_with(x.view(), y.view(), lambda, raw).unwrap();
        // stationarity: Xᵀ(Y − XW) = λ·N·W
        let lhs = x.t().dot(&(&y - &x.dot(&m.weights)));
        let rhs = &m.weights * (lambda * 15.0);
        prop_assert!(common::rel_err(&lhs, &rhs) < 1e-8);
    }
}
