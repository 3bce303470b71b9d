mod common;

use spikediff::hvae::{HvaeConfig, HvaeParams};
use spikediff::nn::Parameters;
use spikediff::ppm::Image;

fn micro() -> HvaeConfig {
    HvaeConfig { height: 2, width: 2, channels: 1, widths: vec![2, 3], enc_hidden: 3, dec_hidden: 3 }
}

#[test]
fn every_parameter_group_matches_finite_differences() {
    let mut p = HvaeParams::new(micro(), 11).unwrap();
    // move away from the zero-initialised prior so all heads carry gradient
    for (i, t) in p.tensors_mut().into_iter().enumerate() {
        t.mapv_inplace(|v| v * 1.5 + 0.05 * ((i % 3) as f64 - 1.0));
    }
    let images = [
        Image::new(2, 2, 1, vec![0.1, 0.8, 0.35, 0.9]).unwrap(),
        Image::new(2, 2, 1, vec![0.7, 0.2, 0.5, 0.05]).unwrap(),
    ];
    let refs: Vec<&Image> = images.iter().collect();
    let (_, grad) = p.loss_and_grad(&refs, 42).unwrap();
    let report = common::gradcheck(&p, &grad, 1e-5, 1e-8, |q| q.loss_and_grad(&refs, 42).unwrap().0);
    for (name, err) in &report {
        println!("{name:>16}: {err:.2e}");
        assert!(*err <= 1e-4, "{name} rel err {err}");
    }
    assert_eq!(report.len(), p.tensors().len());
}
