//! Deep latent Dirichlet allocation (a Poisson gamma belief network) trained
//! by a hybrid of a Weibull upward–downward variational encoder for the
//! per-document latents and topic-layer-adaptive stochastic-gradient
//! Riemannian MCMC for the topic matrices.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod codec;
pub mod corpus;
pub mod distributions;
pub mod elbo;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tlasgr;
pub mod trainer;

pub use error::{Error, Result};

/// Caps the worker threads used for per-document work. Must be called before
/// any parallel work starts; results do not depend on the thread count.
pub fn set_worker_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}
