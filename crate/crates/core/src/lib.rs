//! End-to-end Sinkhorn autoencoder.
//!
//! An autoencoder whose latent distribution is matched to the output of a
//! trainable noise generator through a debiased Sinkhorn divergence. Both
//! the encoder and the generator receive gradients from the divergence;
//! the decoder is trained on reconstruction only.

pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod ot;
pub mod selftest;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Splitmix64 finalizer over `base` and `index`, used to derive independent
/// per-epoch and per-step seeds from one run seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index))
}
