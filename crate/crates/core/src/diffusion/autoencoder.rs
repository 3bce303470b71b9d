//! Image ↔ latent autoencoder (downsampling factor 4) with per-dimension
//! latent standardization so diffusion sees roughly unit-variance latents.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::LatentImage;
use crate::error::{Error, Result};
use crate::matfile;
use crate::nn::{self, Dense, Parameters, SgdConfig};
use crate::ppm::Image;
use crate::rng;

pub const DOWNSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentAeConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub latent_channels: usize,
    pub hidden: usize,
}

impl Default for LatentAeConfig {
    fn default() -> Self {
        LatentAeConfig { height: 32, width: 32, channels: 1, latent_channels: 1, hidden: 256 }
    }
}

impl LatentAeConfig {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (self.height / DOWNSAMPLE, self.width / DOWNSAMPLE, self.latent_channels)
    }

    /// `(H/4)·(W/4)·c_lat`.
    pub fn latent_len(&self) -> usize {
        let (h, w, c) = self.latent_shape();
        h * w * c
    }

    pub fn validate(&self) -> Result<()> {
        if !self.height.is_multiple_of(DOWNSAMPLE) || !self.width.is_multiple_of(DOWNSAMPLE) || self.height == 0 || self.width == 0 {
            return Err(Error::Validation(format!("image sides must be positive multiples of {DOWNSAMPLE}")));
        }
        if self.channels == 0 || self.latent_channels == 0 || self.hidden == 0 {
            return Err(Error::Validation("autoencoder widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentAeParams {
    pub config: LatentAeConfig,
    pub enc_hidden: Dense,
    pub enc_out: Dense,
    pub dec_hidden: Dense,
    pub dec_out: Dense,
    /// Per-dimension latent mean, `1 × L`; not trained by gradient.
    pub latent_shift: Array2<f64>,
    /// Per-dimension latent std, `1 × L`; not trained by gradient.
    pub latent_scale: Array2<f64>,
}

impl Parameters for LatentAeParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        [&self.enc_hidden, &self.enc_out, &self.dec_hidden, &self.dec_out]
            .into_iter()
            .flat_map(|d| d.params())
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t: Vec<&mut Array2<f64>> = Vec::new();
        t.extend(self.enc_hidden.params_mut());
        t.extend(self.enc_out.params_mut());
        t.extend(self.dec_hidden.params_mut());
        t.extend(self.dec_out.params_mut());
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        ["enc_hidden", "enc_out", "dec_hidden", "dec_out"]
            .iter()
            .flat_map(|l| [format!("{l}.w"), format!("{l}.b")])
            .collect()
    }
}

struct AeForward {
    h: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
    y: Array2<f64>,
}

impl LatentAeParams {
    pub fn new(config: LatentAeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, 0xAE);
        let (p, h, l) = (config.pixels(), config.hidden, config.latent_len());
        Ok(LatentAeParams {
            enc_hidden: Dense::new(p, h, &mut r),
            enc_out: Dense::new(h, l, &mut r),
            dec_hidden: Dense::new(l, h, &mut r),
            dec_out: Dense::new(h, p, &mut r),
            latent_shift: Array2::zeros((1, l)),
            latent_scale: Array2::ones((1, l)),
            config,
        })
    }

    pub fn images_to_matrix(&self, images: &[&Image]) -> Result<Array2<f64>> {
        let c = &self.config;
        let mut x = Array2::zeros((images.len(), c.pixels()));
        for (r, img) in images.iter().enumerate() {
            if img.shape() != (c.height, c.width, c.channels) {
                return Err(Error::Shape(format!("image is {:?}, autoencoder expects {:?}", img.shape(), (c.height, c.width, c.channels))));
            }
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&img.data));
        }
        Ok(x)
    }

    fn forward(&self, x: &Array2<f64>) -> AeForward {
        let h = nn::tanh(self.enc_hidden.forward(x));
        let z = self.enc_out.forward(&h);
        let (g, y) = self.decode_raw(&z);
        AeForward { h, z, g, y }
    }

    fn decode_raw(&self, z: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let g = nn::tanh(self.dec_hidden.forward(z));
        let y = self.dec_out.forward(&g).mapv_into(nn::sigmoid);
        (g, y)
    }

    /// Raw (unstandardized) latents, one row per image.
    pub fn encode_raw(&self, x: &Array2<f64>) -> Array2<f64> {
        self.enc_out.forward(&nn::tanh(self.enc_hidden.forward(x)))
    }

    /// Standardized latents, one row per image.
    pub fn encode_matrix(&self, images: &[&Image]) -> Result<Array2<f64>> {
        let x = self.images_to_matrix(images)?;
        let z = (self.encode_raw(&x) - &self.latent_shift) / &self.latent_scale;
        nn::check_finite(&z, "autoencoder latent")?;
        Ok(z)
    }

    pub fn decode_matrix(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.config.latent_len() {
            return Err(Error::Shape(format!("latent has {} values, expected {}", z.ncols(), self.config.latent_len())));
        }
        let raw = z * &self.latent_scale + &self.latent_shift;
        let (_, y) = self.decode_raw(&raw);
        nn::check_finite(&y, "autoencoder decoder")?;
        Ok(y)
    }

    /// Mean per-image squared reconstruction error (summed over pixels) and
    /// its gradient.
    pub fn loss_and_grad(&self, images: &[&Image]) -> Result<(f64, LatentAeParams)> {
        let x = self.images_to_matrix(images)?;
        let b = x.nrows() as f64;
        let f = self.forward(&x);
        let mut g = self.zeros_like();
        let diff = &f.y - &x;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / b;
        // d/dlogit of sigmoid output
        let mut dlogit = diff * (2.0 / b);
        dlogit.zip_mut_with(&f.y, |d, &y| *d *= y * (1.0 - y));
        let dg = self.dec_out.backward(&f.g, &dlogit, &mut g.dec_out);
        let dg = nn::tanh_backward(&f.g, &dg);
        let dz = self.dec_hidden.backward(&f.z, &dg, &mut g.dec_hidden);
        let dh = self.enc_out.backward(&f.h, &dz, &mut g.enc_out);
        let dh = nn::tanh_backward(&f.h, &dh);
        self.enc_hidden.backward(&x, &dh, &mut g.enc_hidden);
        Ok((loss, g))
    }

    /// Sets the latent standardization from the raw latents of `images`.
    pub fn fit_latent_stats(&mut self, images: &[Image]) -> Result<()> {
        let refs: Vec<&Image> = images.iter().collect();
        let z = self.encode_raw(&self.images_to_matrix(&refs)?);
        let mean = z.mean_axis(Axis(0)).ok_or_else(|| Error::Validation("no images".into()))?;
        let std: Array1<f64> = z.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-8 { s } else { 1.0 });
        self.latent_shift = mean.insert_axis(Axis(0));
        self.latent_scale = std.insert_axis(Axis(0));
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut mats = self.to_matrices();
        mats.push(self.latent_shift.clone());
        mats.push(self.latent_scale.clone());
        matfile::save(path, &mats, &serde_json::json!({ "kind": "latent_autoencoder", "config": self.config }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut mats, side) = matfile::load(path)?;
        let config: LatentAeConfig = serde_json::from_value(side["config"].clone())?;
        let mut p = LatentAeParams::new(config, 0)?;
        if mats.len() < 2 {
            return Err(Error::Validation("autoencoder container is too short".into()));
        }
        let scale = mats.pop().expect("len checked");
        let shift = mats.pop().expect("len checked");
        p.load_matrices(mats)?;
        if shift.dim() != p.latent_shift.dim() || scale.dim() != p.latent_scale.dim() {
            return Err(Error::Shape("latent statistics have the wrong shape".into()));
        }
        p.latent_shift = shift;
        p.latent_scale = scale;
        Ok(p)
    }
}

pub fn ae_encode(aep: &LatentAeParams, image: &Image) -> Result<LatentImage> {
    let z = aep.encode_matrix(&[image])?;
    LatentImage::new(z.row(0).to_vec(), aep.config.latent_shape())
}

pub fn ae_decode(aep: &LatentAeParams, z: &LatentImage) -> Result<Image> {
    let m = Array1::from(z.values.clone()).insert_axis(Axis(0));
    let y = aep.decode_matrix(&m)?;
    let c = &aep.config;
    Image::new(c.height, c.width, c.channels, y.row(0).to_vec())
}

/// SGD on the reconstruction error, then fits the latent standardization on
/// the training images.
pub fn train_autoencoder(params: &mut LatentAeParams, images: &[Image], opt: &SgdConfig) -> Result<Vec<f64>> {
    let curve = nn::train_sgd(params, opt, images.len(), |p, batch, _| {
        let imgs: Vec<&Image> = batch.iter().map(|&i| &images[i]).collect();
        p.loss_and_grad(&imgs)
    })?;
    params.fit_latent_stats(images)?;
    Ok(curve)
}
