//! Anomaly-robust telemanipulation on synthetic marker video.
//!
//! The pipeline flags and excises corrupted frames ([`fdd`]), fills the gap
//! with a conditional denoising-diffusion model or a classical baseline
//! ([`reconstruct`]), tracks the marker angle ([`pose`]), drives a simulated
//! follower robot ([`telemanip`]) and scores the result ([`metrics`]).
//! [`harness`] strings the stages into reproducible experiment sweeps.

pub mod anomaly;
pub mod fdd;
pub mod harness;
pub mod metrics;
pub mod pose;
pub mod reconstruct;
pub mod scene;
pub mod telemanip;
pub mod video;
