//! Joint-distribution Wasserstein tools for semi-supervised domain-invariant
//! representation learning.
//!
//! * [`nn`]: dense tensors, reverse-mode autodiff, spectrally normalized MLPs.
//! * [`ot`]: exact W1 between weighted finite joint samples.
//! * [`distributions`]: mixtures, KL, synthetic domains and dataset I/O.
//! * [`objective`]: classifier, critic and entropy losses.
//! * [`bounds`]: numerical certification of the transport inequalities.
//! * [`trainer`]: the adversarial min-max loop and evaluation.
//! * [`explain`]: LRP-γ relevance for leaky-ReLU networks.

pub mod bounds;
pub mod distributions;
pub mod error;
pub mod explain;
pub mod nn;
pub mod objective;
pub mod ot;
pub mod trainer;

pub use error::{Error, Result};

/// Deterministic child seed for an independent random stream.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
