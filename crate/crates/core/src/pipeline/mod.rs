//! Two-stage decoding pipeline, evaluation, region ablation and the
//! flat-VAE comparison.

mod experiment;
pub mod metrics;
mod semantic;
mod split;
mod stages;

pub use experiment::{
    ablate_regions, compare_flat_vae, generate_data, ground_truth_conditioning, responses_for, run_decoding,
    shuffle_responses, stage2_settings, subset_name, train_diffusion_model, train_hvae_model, train_image_models,
    train_latent_ae, train_semantic, AblationRow, DecodingRun, ImageModels, SyntheticData, VaeComparison, VaeSummary,
};
pub use metrics::{evaluate, ImageMetrics, MetricsTable, NullTest};
pub use semantic::{fit_semantic_model, SemanticConfig, SemanticFeatureModel, MIN_SEMANTIC_ACCURACY};
pub use split::Split;
pub use stages::{
    fit_stage1, fit_stage2, match_target_moments, reconstruct, stage1_reconstruct, Reconstruction, Stage1Model, Stage2Model, Stage2Settings,
};
