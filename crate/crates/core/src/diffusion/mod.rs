//! Latent diffusion at desk scale: a small image autoencoder, a linear-β
//! forward process, a conditioned noise predictor and DDPM ancestral sampling
//! with partial-noising image-to-image refinement.

mod autoencoder;
mod conditioning;
mod denoiser;
mod sampler;
mod schedule;

pub use autoencoder::{ae_decode, ae_encode, train_autoencoder, LatentAeConfig, LatentAeParams};
pub use conditioning::{mix_conditioning, ConditioningFeatures, DEFAULT_W_TEXT, DEFAULT_W_VISION};
pub use denoiser::{denoise_loss, time_embedding, train_denoiser, DenoiserConfig, DenoiserParams, EpsPredictor};
pub use sampler::{img2img, img2img_start_step, reverse_sample, DEFAULT_STRENGTH};
pub use schedule::{
    forward_jump, forward_step, make_schedule, LatentImage, NoiseSchedule, DEFAULT_BETA_HI, DEFAULT_BETA_LO, DEFAULT_STEPS,
};
