//! Preference optimization of a conditional diffusion generator over
//! fashion-item latents, driven by a bench of automatic experts.
//!
//! The loop is: sample several candidates per incomplete outfit while
//! recording every reverse-diffusion state, score them with the quality,
//! compatibility and personalization experts, turn the scores into
//! winner/loser pairs, and fine-tune a low-rank adapter with a per-timestep
//! DPO loss against the frozen pre-trained network.

pub mod binio;
pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod dpo;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod experts;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod training;
pub mod trajstore;
pub mod world;

pub use error::{Error, Result};
