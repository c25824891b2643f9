//! Contrastive multimodal representation learning.
//!
//! The crate contains everything needed to study how a multimodal
//! contrastive objective captures redundant, unique and synergistic
//! information:
//!
//! - [`trifeature`]: a bimodal shapes/textures/colors benchmark with
//!   controlled interactions between the two image modalities,
//! - [`augment`]: seedable multimodal augmentation policies and the
//!   single-modality projection,
//! - [`model`]: modality encoders, latent converters, the attention fusion
//!   block with a class token, the projection head and the dual-encoder
//!   baselines,
//! - [`objectives`]: InfoNCE, the multimodal loss and its baselines, plus
//!   exact discrete information quantities for toy distributions,
//! - [`train`]: the training engine (AdamW, schedules, checkpoints, run
//!   records),
//! - [`probe`]: frozen-feature extraction and linear probing,
//! - [`harness`]: experiment plans, ablations, the augmentation-strength
//!   sweep and plotting.

pub mod augment;
pub mod error;
pub mod harness;
pub mod model;
pub mod objectives;
pub mod probe;
pub mod rng;
pub mod train;
pub mod trifeature;

pub use error::{Error, Result};
