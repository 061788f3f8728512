//! Algorithmic core of the domain adaptation lab.
//!
//! Everything here is pure computation over `alloc` collections: a tape-based
//! reverse-mode autodiff engine, MLP models with adversarial discriminators,
//! the training objectives (cross-entropy, VAT, augmentation consistency,
//! DANN, CDAN, class-level adversarial), the augmentation mixer, synthetic
//! domain-shift datasets, the training loop and the diagnostics. File formats,
//! the metrics writer and the command line live in the `uda-lab` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod augment;
pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Graph, NodeId, Op};
pub use error::{Error, Result};
pub use tensor::Tensor;

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeds a [`Rng`] from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    <Rng as rand::SeedableRng>::seed_from_u64(seed)
}
