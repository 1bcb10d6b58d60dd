//! Deep generative decoder.
//!
//! An encoder-free generative model: every training sample owns a trainable
//! latent vector, a neural decoder maps latents to the parameters of an
//! output distribution, and a Gaussian mixture with learned parameters
//! serves as the distribution over latent space. All three are fitted jointly
//! by maximising the log joint probability of data, latents and parameters.
//!
//! Two output profiles are provided: Bernoulli for values in `[0, 1]` and
//! negative binomial for count data such as single-cell expression matrices.

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod decoder;
pub mod error;
pub mod gmm;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
