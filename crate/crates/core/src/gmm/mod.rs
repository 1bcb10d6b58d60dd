//! Gaussian-mixture distribution over latent space and the priors on its
//! parameters.

mod mixture;
mod softball;

pub use mixture::{BoundMixture, GaussianMixture, GmmInit, MixturePrior};
pub use softball::SoftballPrior;

/// `½·ln(2π)`.
pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
