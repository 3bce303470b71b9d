mod common;

use ndarray::Array2;
use spikediff::diffusion::{make_schedule, DenoiserConfig, DenoiserParams, LatentAeConfig, LatentAeParams};
use spikediff::nn::Parameters;
use spikediff::pipeline::{SemanticConfig, SemanticFeatureModel};
use spikediff::ppm::Image;
use spikediff::rng;

fn images(n: usize, side: usize, seed: u64) -> Vec<Image> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| {
            let v = rng::gaussian_vec(&mut r, side * side).into_iter().map(|g| 0.5 + 0.2 * g.tanh()).collect();
            Image::new(side, side, 1, v).unwrap()
        })
        .collect()
}

fn assert_report(report: &[(String, f64)], expected_tensors: usize) {
    for (name, err) in report {
        println!("{name:>12}: {err:.2e}");
        assert!(*err <= 1e-4, "{name} rel err {err}");
    }
    assert_eq!(report.len(), expected_tensors);
}

#[test]
fn latent_autoencoder_gradients() {
    let p = LatentAeParams::new(LatentAeConfig { height: 4, width: 8, channels: 1, latent_channels: 2, hidden: 5 }, 3).unwrap();
    let imgs = {
        let mut r = rng::stream(1, 0);
        (0..3)
            .map(|_| Image::new(4, 8, 1, rng::gaussian_vec(&mut r, 32).iter().map(|g| 0.5 + 0.2 * g).collect()).unwrap())
            .collect::<Vec<_>>()
    };
    let refs: Vec<&Image> = imgs.iter().collect();
    let (_, grad) = p.loss_and_grad(&refs).unwrap();
    let report = common::gradcheck(&p, &grad, 1e-5, 1e-8, |q| q.loss_and_grad(&refs).unwrap().0);
    assert_report(&report, p.tensors().len());
}

#[test]
fn semantic_classifier_gradients() {
    let cfg = SemanticConfig { hidden: 4, feature_len: 3, ..SemanticConfig::default() };
    let p = SemanticFeatureModel::new(9, 3, &cfg, 5).unwrap();
    let imgs = images(4, 3, 2);
    let refs: Vec<&Image> = imgs.iter().collect();
    let labels = [0, 2, 1, 2];
    let (_, grad) = p.loss_and_grad(&refs, &labels).unwrap();
    let report = common::gradcheck(&p, &grad, 1e-5, 1e-8, |q| q.loss_and_grad(&refs, &labels).unwrap().0);
    assert_report(&report, p.tensors().len());
}

#[test]
fn denoiser_gradients() {
    let cfg = DenoiserConfig { latent_len: 3, cond_len: 2, time_dim: 4, hidden: 5 };
    let mut p = DenoiserParams::new(cfg, 8).unwrap();
    // the small output init would hide errors in the upstream layers
    p.output.w.mapv_inplace(|v| v * 10.0);
    let sched = make_schedule(10, 1e-3, 0.2).unwrap();
    let mut r = rng::stream(4, 0);
    let mut mat = |rows, cols| Array2::from_shape_vec((rows, cols), rng::gaussian_vec(&mut r, rows * cols)).unwrap();
    let (z0, eps, c) = (mat(3, 3), mat(3, 3), mat(3, 2));
    let ts = [1, 6, 10];
    let (_, grad) = p.loss_and_grad(&z0, &ts, &eps, &c, &sched).unwrap();
    let report = common::gradcheck(&p, &grad, 1e-5, 1e-8, |q| q.loss_and_grad(&z0, &ts, &eps, &c, &sched).unwrap().0);
    assert_report(&report, p.tensors().len());
}
