//! Joint key-frame recognition and landmark detection for videos labelled on a
//! single frame.
//!
//! A Bayesian U-Net trained only on labelled key frames predicts a landmark
//! heatmap with epistemic (Monte-Carlo dropout) and aleatoric (learned logit
//! noise) uncertainty for every frame. Frames pass when the heatmap holds the
//! expected number of landmark blobs and both summed uncertainties sit within
//! calibrated Z-score bounds for long enough; accepted frames contribute a length
//! measurement to a pool summarised by its 75th percentile.

pub mod augment;
pub mod bunet;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gating;
pub mod loss;
pub mod maskgen;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
