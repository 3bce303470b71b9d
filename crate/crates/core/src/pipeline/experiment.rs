//! End-to-end experiments on synthetic data: data generation, image-model
//! training, decoding, region ablation and the flat-VAE comparison.

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{self, evaluate, MetricsTable, NullTest};
use super::stages::{fit_stage1, fit_stage2, reconstruct, Reconstruction, Stage1Model, Stage2Model, Stage2Settings};
use super::{fit_semantic_model, SemanticFeatureModel, Split};
use crate::config::RunConfig;
use crate::dataset::{
    aggregate_sessions, bin_spikes, filter_by_region, synth_movie, synth_spikes, RegionLabel, ResponseMatrix,
    SessionRecording, StimulusMovie,
};
use crate::diffusion::{mix_conditioning, train_autoencoder, train_denoiser, DenoiserParams, LatentAeParams, NoiseSchedule};
use crate::error::{Error, Result};
use crate::hvae::{reconstruction_mse, train_hvae, HvaeParams};
use crate::nn::Parameters;
use crate::ppm::Image;
use crate::rng;

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub movie: StimulusMovie,
    pub recordings: Vec<SessionRecording>,
    pub responses: ResponseMatrix,
}

/// Movie plus `cfg.data.sessions` simulated sessions, binned and aggregated.
pub fn generate_data(cfg: &RunConfig, seed: u64) -> Result<SyntheticData> {
    let movie = synth_movie(&cfg.movie_spec(), seed)?;
    let recordings = (0..cfg.data.sessions)
        .map(|s| {
            let mut rec = synth_spikes(
                &movie,
                &cfg.encoding_config(rng::mix(seed, s as u64 + 1)),
                cfg.data.units_per_region,
                cfg.data.frame_duration_s,
            )?;
            rec.session_id = format!("synth{seed}s{s}");
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let responses = responses_for(&recordings, &movie, cfg.encoding.latency_s)?;
    Ok(SyntheticData { movie, recordings, responses })
}

pub fn responses_for(recordings: &[SessionRecording], movie: &StimulusMovie, latency: f64) -> Result<ResponseMatrix> {
    let mats = recordings.iter().map(|r| bin_spikes(r, movie, latency)).collect::<Result<Vec<_>>>()?;
    aggregate_sessions(&mats)
}

/// The spike-independent models, trained once on training frames.
#[derive(Debug, Clone)]
pub struct ImageModels {
    pub hvae: Arc<HvaeParams>,
    pub ae: Arc<LatentAeParams>,
    pub semantic: Arc<SemanticFeatureModel>,
    pub denoiser: Arc<DenoiserParams>,
    pub schedule: NoiseSchedule,
}

pub fn train_hvae_model(movie: &StimulusMovie, split: &Split, cfg: &RunConfig, seed: u64) -> Result<HvaeParams> {
    let mut p = HvaeParams::new(cfg.hvae_config(), rng::mix(seed, 0x11))?;
    train_hvae(&mut p, &train_frames(movie, split), &cfg.hvae_sgd(rng::mix(seed, 0x12)))?;
    Ok(p)
}

pub fn train_semantic(movie: &StimulusMovie, split: &Split, cfg: &RunConfig, seed: u64) -> Result<SemanticFeatureModel> {
    fit_semantic_model(movie, &split.train, &split.test, &cfg.semantic, rng::mix(seed, 0x21))
}

pub fn train_latent_ae(movie: &StimulusMovie, split: &Split, cfg: &RunConfig, seed: u64) -> Result<LatentAeParams> {
    let mut p = LatentAeParams::new(cfg.ae_config(), rng::mix(seed, 0x31))?;
    train_autoencoder(&mut p, &train_frames(movie, split), &cfg.ae_sgd(rng::mix(seed, 0x32)))?;
    Ok(p)
}

/// Denoiser trained on autoencoder latents of training frames, conditioned on
/// ground-truth features mixed with the configured weights.
pub fn train_diffusion_model(
    movie: &StimulusMovie,
    split: &Split,
    ae: &LatentAeParams,
    sem: &SemanticFeatureModel,
    cfg: &RunConfig,
    seed: u64,
) -> Result<DenoiserParams> {
    let cond = ground_truth_conditioning(movie, &split.train, sem, cfg)?;
    let imgs: Vec<&Image> = split.train.iter().map(|&i| &movie.frames[i]).collect();
    let latents = ae.encode_matrix(&imgs)?;
    let mut p = DenoiserParams::new(cfg.denoiser_config(), rng::mix(seed, 0x41))?;
    train_denoiser(&mut p, &latents, &cond, &cfg.schedule()?, &cfg.denoiser_sgd(rng::mix(seed, 0x42)))?;
    Ok(p)
}

pub fn ground_truth_conditioning(
    movie: &StimulusMovie,
    frames: &[usize],
    sem: &SemanticFeatureModel,
    cfg: &RunConfig,
) -> Result<Array2<f64>> {
    let labels = movie
        .frame_labels
        .as_ref()
        .ok_or_else(|| Error::Validation("conditioning needs frame labels".into()))?;
    let imgs: Vec<&Image> = frames.iter().map(|&i| &movie.frames[i]).collect();
    let v = sem.vision_matrix(&imgs)?;
    let t = sem.text_matrix(&frames.iter().map(|&i| labels[i]).collect::<Vec<_>>())?;
    let mut out = Array2::zeros((frames.len(), v.ncols() + t.ncols()));
    for i in 0..frames.len() {
        let c = mix_conditioning(&v.row(i).to_vec(), &t.row(i).to_vec(), cfg.diffusion.w_vision, cfg.diffusion.w_text)?;
        out.row_mut(i).assign(&ndarray::Array1::from(c));
    }
    Ok(out)
}

pub fn train_image_models(movie: &StimulusMovie, split: &Split, cfg: &RunConfig, seed: u64) -> Result<ImageModels> {
    let hvae = train_hvae_model(movie, split, cfg, seed)?;
    let semantic = train_semantic(movie, split, cfg, seed)?;
    let ae = train_latent_ae(movie, split, cfg, seed)?;
    let denoiser = train_diffusion_model(movie, split, &ae, &semantic, cfg, seed)?;
    Ok(ImageModels {
        hvae: Arc::new(hvae),
        ae: Arc::new(ae),
        semantic: Arc::new(semantic),
        denoiser: Arc::new(denoiser),
        schedule: cfg.schedule()?,
    })
}

fn train_frames(movie: &StimulusMovie, split: &Split) -> Vec<Image> {
    split.train.iter().map(|&i| movie.frames[i].clone()).collect()
}

pub fn stage2_settings(cfg: &RunConfig) -> Stage2Settings {
    Stage2Settings {
        lambda_grid: cfg.ridge.lambda_grid.clone(),
        folds: cfg.ridge.folds,
        strength: cfg.diffusion.strength,
        w_vision: cfg.diffusion.w_vision,
        w_text: cfg.diffusion.w_text,
    }
}

/// Everything produced by decoding one response matrix.
#[derive(Debug, Clone)]
pub struct DecodingRun {
    pub stage1_model: Stage1Model,
    pub stage2_model: Stage2Model,
    pub images: Reconstruction,
    pub stage1_metrics: MetricsTable,
    pub final_metrics: MetricsTable,
    /// Held-out column-mean correlation of predicted vs. true stage-1 latents.
    pub latent_correlation: f64,
    pub predicted_latents: Array2<f64>,
    pub true_latents: Array2<f64>,
}

/// Fits both stages on training frames and reconstructs held-out frames.
pub fn run_decoding(
    responses: &ResponseMatrix,
    movie: &StimulusMovie,
    models: &ImageModels,
    split: &Split,
    cfg: &RunConfig,
    seed: u64,
) -> Result<DecodingRun> {
    let s1 = fit_stage1(responses, movie, models.hvae.clone(), cfg.hvae.k, &cfg.ridge.lambda_grid, cfg.ridge.folds, split)?;
    let s2 = fit_stage2(
        responses,
        movie,
        &models.semantic,
        models.denoiser.clone(),
        models.ae.clone(),
        models.schedule.clone(),
        &stage2_settings(cfg),
        split,
    )?;
    let x_test = split.test_rows(&responses.values);
    let images = reconstruct(&s1, &s2, &x_test, rng::mix(seed, 0x51))?;
    let truths: Vec<Image> = split.test.iter().map(|&i| movie.frames[i].clone()).collect();
    let labels: Option<Vec<usize>> = movie.frame_labels.as_ref().map(|l| split.test.iter().map(|&i| l[i]).collect());
    let sem = Some(models.semantic.as_ref());
    let stage1_metrics = evaluate(&images.stage1, &truths, labels.as_deref(), sem)?;
    let final_metrics = evaluate(&images.final_images, &truths, labels.as_deref(), sem)?;
    let predicted_latents = s1.predict_latents(&x_test)?;
    let true_latents = models.hvae.extract_latent_matrix(&truths.iter().collect::<Vec<_>>(), s1.k)?;
    let latent_correlation = metrics::column_mean_correlation(&predicted_latents, &true_latents);
    Ok(DecodingRun {
        stage1_model: s1,
        stage2_model: s2,
        images,
        stage1_metrics,
        final_metrics,
        latent_correlation,
        predicted_latents,
        true_latents,
    })
}

impl DecodingRun {
    pub fn latent_null(&self, permutations: usize, seed: u64) -> Result<NullTest> {
        metrics::latent_correlation_null(&self.predicted_latents, &self.true_latents, permutations, seed)
    }

    pub fn identification_null(&self, truths: &[Image], permutations: usize, seed: u64) -> Result<NullTest> {
        metrics::identification_null(&self.images.final_images, truths, permutations, seed)
    }
}

/// Shuffles response rows across frames with a seeded permutation, breaking
/// the frame/response correspondence.
pub fn shuffle_responses(responses: &ResponseMatrix, seed: u64) -> ResponseMatrix {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..responses.frame_count()).collect();
    order.shuffle(&mut rng::stream(seed, 0x5F));
    responses.select_rows(&order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: Vec<RegionLabel>,
    pub units: usize,
    pub latent_correlation: f64,
    pub stage1: MetricsTable,
    pub final_metrics: MetricsTable,
}

impl AblationRow {
    pub fn name(&self) -> String {
        subset_name(&self.subset)
    }
}

pub fn subset_name(subset: &[RegionLabel]) -> String {
    if subset.len() == RegionLabel::ALL.len() {
        "all".to_string()
    } else {
        subset.iter().map(|r| r.code()).collect::<Vec<_>>().join("+")
    }
}

/// Repeats the decoding path for each region subset with identical models,
/// split and seed. Subsets run on worker threads; rows come back in input
/// order.
pub fn ablate_regions(
    data: &SyntheticData,
    models: &ImageModels,
    split: &Split,
    cfg: &RunConfig,
    subsets: &[Vec<RegionLabel>],
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(subsets.len().max(1));
    let run_one = |subset: &Vec<RegionLabel>| -> Result<AblationRow> {
        let keep: BTreeSet<RegionLabel> = subset.iter().copied().collect();
        let responses = filter_by_region(&data.responses, &keep)?;
        let run = run_decoding(&responses, &data.movie, models, split, cfg, seed)?;
        let mut sorted: Vec<RegionLabel> = keep.into_iter().collect();
        sorted.sort_by_key(|r| r.code());
        Ok(AblationRow {
            subset: sorted,
            units: responses.unit_count(),
            latent_correlation: run.latent_correlation,
            stage1: run.stage1_metrics,
            final_metrics: run.final_metrics,
        })
    };
    if workers <= 1 {
        return subsets.iter().map(run_one).collect();
    }
    let mut slots: Vec<Option<Result<AblationRow>>> = (0..subsets.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<Vec<usize>> = (0..workers).map(|w| (w..subsets.len()).step_by(workers).collect()).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|idx| {
                let run_one = &run_one;
                scope.spawn(move || idx.into_iter().map(|i| (i, run_one(&subsets[i]))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("ablation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every subset ran")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeSummary {
    pub widths: Vec<usize>,
    pub params: usize,
    pub heldout_mse: f64,
    pub stage1_correlation: f64,
    pub stage1_identification: f64,
    pub latent_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeComparison {
    pub seed: u64,
    pub hierarchical: VaeSummary,
    pub flat: VaeSummary,
    pub param_ratio: f64,
    pub params_matched: bool,
    pub hierarchical_wins: bool,
}

/// Trains the hierarchical VAE and its parameter-matched flat counterpart on
/// identical frames and seeds; reports held-out reconstruction MSE and
/// stage-1 decoding metrics for each. The flat model decodes with `k = 1`,
/// its only layer.
pub fn compare_flat_vae(data: &SyntheticData, split: &Split, cfg: &RunConfig, seed: u64) -> Result<VaeComparison> {
    let hier_cfg = cfg.hvae_config();
    let flat_cfg = hier_cfg.flat_counterpart();
    let train = train_frames(&data.movie, split);
    let test: Vec<Image> = split.test.iter().map(|&i| data.movie.frames[i].clone()).collect();
    let summarize = |hc: crate::hvae::HvaeConfig, k: usize| -> Result<VaeSummary> {
        let mut p = HvaeParams::new(hc.clone(), rng::mix(seed, 0x11))?;
        train_hvae(&mut p, &train, &cfg.hvae_sgd(rng::mix(seed, 0x12)))?;
        let heldout_mse = reconstruction_mse(&p, &test)?;
        let params = p.param_count();
        let s1 = fit_stage1(&data.responses, &data.movie, Arc::new(p), k, &cfg.ridge.lambda_grid, cfg.ridge.folds, split)?;
        let x_test = split.test_rows(&data.responses.values);
        let imgs = super::stages::stage1_reconstruct(&s1, &x_test, rng::mix(seed, 0x52))?;
        let m = evaluate(&imgs, &test, None, None)?;
        let pred = s1.predict_latents(&x_test)?;
        let truth = s1.hvae.extract_latent_matrix(&test.iter().collect::<Vec<_>>(), k)?;
        Ok(VaeSummary {
            widths: hc.widths,
            params,
            heldout_mse,
            stage1_correlation: m.mean_correlation(),
            stage1_identification: m.identification,
            latent_correlation: metrics::column_mean_correlation(&pred, &truth),
        })
    };
    let hierarchical = summarize(hier_cfg, cfg.hvae.k)?;
    let flat = summarize(flat_cfg, 1)?;
    let param_ratio = flat.params as f64 / hierarchical.params as f64;
    Ok(VaeComparison {
        seed,
        param_ratio,
        params_matched: (0.9..=1.1).contains(&param_ratio),
        hierarchical_wins: hierarchical.heldout_mse < flat.heldout_mse,
        hierarchical,
        flat,
    })
}
