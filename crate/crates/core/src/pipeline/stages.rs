//! Stage 1 (spikes → hierarchical latents → initial image) and stage 2
//! (spikes → semantic features → conditioned image-to-image refinement).

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};

use super::{SemanticFeatureModel, Split};
use crate::dataset::{ResponseMatrix, StimulusMovie};
use crate::diffusion::{img2img, mix_conditioning, DenoiserParams, LatentAeParams, NoiseSchedule};
use crate::error::{Error, Result};
use crate::hvae::HvaeParams;
use crate::ppm::Image;
use crate::regression::{ridge_cv, ridge_predict, CvReport, RidgeModel};
use crate::rng;

#[derive(Debug, Clone)]
pub struct Stage1Model {
    pub ridge: RidgeModel,
    /// Cross-validation report; absent for models loaded from disk.
    pub cv: Option<CvReport>,
    pub hvae: Arc<HvaeParams>,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct Stage2Model {
    pub vision: RidgeModel,
    pub text: RidgeModel,
    pub vision_cv: Option<CvReport>,
    pub text_cv: Option<CvReport>,
    pub denoiser: Arc<DenoiserParams>,
    pub ae: Arc<LatentAeParams>,
    pub schedule: NoiseSchedule,
    pub strength: f64,
    pub w_vision: f64,
    pub w_text: f64,
}

fn check_frames(responses: &ResponseMatrix, movie: &StimulusMovie) -> Result<()> {
    if responses.frame_count() != movie.len() {
        return Err(Error::Shape(format!(
            "responses cover {} frames but the movie has {}",
            responses.frame_count(),
            movie.len()
        )));
    }
    Ok(())
}

fn train_images<'a>(movie: &'a StimulusMovie, split: &Split) -> Vec<&'a Image> {
    split.train.iter().map(|&i| &movie.frames[i]).collect()
}

/// Ridge from training-frame responses to the first `k` hierarchical latent
/// layers, with the penalty chosen by blocked cross-validation.
pub fn fit_stage1(
    responses: &ResponseMatrix,
    movie: &StimulusMovie,
    hvae: Arc<HvaeParams>,
    k: usize,
    lambda_grid: &[f64],
    folds: usize,
    split: &Split,
) -> Result<Stage1Model> {
    check_frames(responses, movie)?;
    let y = hvae.extract_latent_matrix(&train_images(movie, split), k)?;
    let x = split.train_rows(&responses.values);
    let (cv, ridge) = ridge_cv(x.view(), y.view(), lambda_grid, folds)?;
    Ok(Stage1Model { ridge, cv: Some(cv), hvae, k })
}

impl Stage1Model {
    pub fn predict_latents(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        ridge_predict(&self.ridge, x.view())
    }
}

/// One low-resolution image per response row. Layers below `k` are sampled
/// from the prior with a per-row seed.
pub fn stage1_reconstruct(m: &Stage1Model, x: &Array2<f64>, seed: u64) -> Result<Vec<Image>> {
    let z = m.predict_latents(x)?;
    z.rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| m.hvae.reconstruct_from_vector(row.as_slice().expect("contiguous row"), m.k, rng::mix(seed, i as u64)))
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn fit_stage2(
    responses: &ResponseMatrix,
    movie: &StimulusMovie,
    sem: &SemanticFeatureModel,
    denoiser: Arc<DenoiserParams>,
    ae: Arc<LatentAeParams>,
    schedule: NoiseSchedule,
    cfg: &Stage2Settings,
    split: &Split,
) -> Result<Stage2Model> {
    check_frames(responses, movie)?;
    let labels = movie
        .frame_labels
        .as_ref()
        .ok_or_else(|| Error::Validation("stage 2 needs frame labels".into()))?;
    let x = split.train_rows(&responses.values);
    let v = sem.vision_matrix(&train_images(movie, split))?;
    let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let t = sem.text_matrix(&train_labels)?;
    let (vision_cv, mut vision) = ridge_cv(x.view(), v.view(), &cfg.lambda_grid, cfg.folds)?;
    let (text_cv, mut text) = ridge_cv(x.view(), t.view(), &cfg.lambda_grid, cfg.folds)?;
    match_target_moments(&mut vision, &x, &v)?;
    match_target_moments(&mut text, &x, &t)?;
    Ok(Stage2Model {
        vision,
        text,
        vision_cv: Some(vision_cv),
        text_cv: Some(text_cv),
        denoiser,
        ae,
        schedule,
        strength: cfg.strength,
        w_vision: cfg.w_vision,
        w_text: cfg.w_text,
    })
}

/// Rescales each output of `model` so its predictions on the training rows
/// have the mean and standard deviation of the training targets, undoing
/// ridge shrinkage of the conditioning features.
pub fn match_target_moments(model: &mut RidgeModel, x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    let p = ridge_predict(model, x.view())?;
    let (pm, ps) = (p.mean_axis(Axis(0)).expect("rows"), p.std_axis(Axis(0), 0.0));
    let (ym, ys) = (y.mean_axis(Axis(0)).expect("rows"), y.std_axis(Axis(0), 0.0));
    for j in 0..model.outputs() {
        if ps[j] <= 1e-12 {
            continue;
        }
        let s = ys[j] / ps[j];
        model.weights.column_mut(j).mapv_inplace(|w| w * s);
        model.intercept[j] = (model.intercept[j] - pm[j]) * s + ym[j];
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Settings {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub strength: f64,
    pub w_vision: f64,
    pub w_text: f64,
}

impl Stage2Model {
    /// Mixed conditioning rows predicted from responses.
    pub fn predict_conditioning(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let v = ridge_predict(&self.vision, x.view())?;
        let t = ridge_predict(&self.text, x.view())?;
        let mut out = Array2::zeros((x.nrows(), v.ncols() + t.ncols()));
        for i in 0..x.nrows() {
            let c = mix_conditioning(&v.row(i).to_vec(), &t.row(i).to_vec(), self.w_vision, self.w_text)?;
            out.row_mut(i).assign(&Array1::from(c));
        }
        Ok(out)
    }
}

/// Both stages over response rows `x`: stage-1 images, then image-to-image
/// refinement of each under its predicted conditioning.
pub fn reconstruct(s1: &Stage1Model, s2: &Stage2Model, x: &Array2<f64>, seed: u64) -> Result<Reconstruction> {
    let stage1 = stage1_reconstruct(s1, x, rng::mix(seed, 1))?;
    let cond = s2.predict_conditioning(x)?;
    let final_images = stage1
        .iter()
        .zip(cond.axis_iter(Axis(0)))
        .enumerate()
        .map(|(i, (img, c))| {
            img2img(
                &s2.ae,
                s2.denoiser.as_ref(),
                img,
                s2.strength,
                c.as_slice().expect("contiguous row"),
                &s2.schedule,
                rng::mix(rng::mix(seed, 2), i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Reconstruction { stage1, final_images })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub stage1: Vec<Image>,
    pub final_images: Vec<Image>,
}
