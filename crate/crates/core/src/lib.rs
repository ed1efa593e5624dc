//! Data-free knowledge transfer from a teacher classifier to a student.
//!
//! The crate is `no_std` (with `alloc`) and carries the numerical core:
//!
//! - [`autodiff`]: dense tensors with tape-based reverse-mode differentiation,
//! - [`nn`]: classifier and generator networks with activation taps,
//! - [`losses`]: KL, attention transfer, student/generator/KD+AT objectives,
//! - [`optim`]: Adam, SGD with momentum and learning-rate schedules,
//! - [`data`]: synthetic datasets, IDX decoding, normalization, subsets,
//! - [`zeroshot`]: the adversarial generator/student loop and its toy and
//!   noise-matching variants,
//! - [`baselines`]: scratch training, KD+AT distillation and finetuning,
//! - [`probe`]: transition curves, mean transition error and noise audits.
//!
//! File formats, configuration and the command line live in the `zskt`
//! companion crate.
#![no_std]
// `!(a < b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod baselines;
pub mod data;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod probe;
pub mod tensor;
pub mod zeroshot;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeded instance of [`Rng`].
pub fn rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Wall-clock source for telemetry. The default reports zero.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that always reads zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}
