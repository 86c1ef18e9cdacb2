//! Multi-group delayed latent factor models with Gaussian-process latents.
//!
//! Each of `M` groups of units observes the same `p` latent time series,
//! shifted by a per-group, per-latent delay. Automatic relevance
//! determination on the loadings decides which latents each group shares.
//! Three variational inference methods are provided: exact time-domain
//! inference, inducing variables and a frequency-domain approximation.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod io;
pub mod kernels;
pub mod numerics;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod state;
pub mod synthesis;

pub use data::Dataset;
pub use error::{MdlagError, Result};
pub use fit::{fit, fit_from, FitConfig, FitReport, LatentPosterior, Method};
pub use state::{initialize, GpParams, Hyperparams, Model};
