//! Identify whether an image is a natural photograph, a rendered graphic or a
//! deep-network-generated image from edge-rich local patches and a compact CNN,
//! with handcrafted-feature baselines and a post-processing robustness harness.

pub mod augment;
pub mod baselines;
pub mod error;
pub mod imageops;
pub mod label;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod robustness;
pub mod sampler;
pub mod tensor;
pub mod vote;

pub use error::{Error, Result};
pub use label::OriginLabel;
