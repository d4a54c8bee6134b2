//! Data-driven, gradient-free neural-network weight initialization.
//!
//! Each trainable layer's weights come from solving a Sylvester matrix
//! equation built from that layer's input activations and a user-chosen
//! latent code; activations are then propagated forward so the next layer
//! can be initialized the same way. The crate also ships a small dense
//! matrix kernel, an im2col restructuring of convolutions, latent-code
//! builders (PCA, one-hot, K-Means, LDA), a minimal CNN training toolkit
//! with the classic random baselines, and dataset loaders.

pub mod dataio;
pub mod error;
pub mod latent;
pub mod layerwise;
pub mod matrix;
pub mod nnet;
pub mod patches;
pub mod sylvester;

mod rngutil;

pub use error::{Error, Result};
pub use matrix::{Matrix, SymEig};
pub use patches::Tensor4;
