//! Desk-scale two-stage decoding of visual stimuli from spike responses.
//!
//! Stage one maps binned spike counts onto the posterior means of a small
//! hierarchical VAE with closed-form ridge regression and decodes them into a
//! coarse image. Stage two regresses the same responses onto semantic
//! features, mixes them into a conditioning vector and refines the coarse
//! image with a partially-noised latent diffusion pass.

pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod hvae;
pub mod linalg;
pub mod manifest;
pub mod matfile;
pub mod nn;
pub mod pipeline;
pub mod ppm;
pub mod regression;
pub mod rng;

pub use error::{Error, Result};
