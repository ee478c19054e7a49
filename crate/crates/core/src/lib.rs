//! Personalized federated learning with Q-aggregated kernel mean embeddings.
//!
//! Each agent summarizes its local sample by a kernel mean embedding (random
//! Fourier features, a polynomial moment summary, or an exact kernel handle).
//! A target agent learns collaboration weights on the simplex by minimizing a
//! penalized estimate of the distance between the weighted mixture of
//! embeddings and its own, then fits its model by weighted empirical risk
//! minimization.
//!
//! Modules, bottom up:
//!
//! | module | contents |
//! |---|---|
//! | [`kernel`] | kernels, bounds, spectral laws |
//! | [`rff`] | shared random Fourier features |
//! | [`embedding`] | embeddings, MMD, covariance trace, `q_k` |
//! | [`qagg`] | the quadratic objective and its simplex solver |
//! | [`models`] | weighted ridge / GD models and simulated FedAvg |
//! | [`data`], [`datagen`] | datasets, CSV, synthetic generators |
//! | [`fedsim`] | the federated protocol with a communication ledger |
//! | [`experiment`] | experiment configs and the repetition runner |

pub mod data;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod fedsim;
pub mod kernel;
pub mod models;
pub mod qagg;
pub mod rff;
pub mod rng;

pub use data::AgentDataset;
pub use embedding::{embed, kme_inner, mmd2, mmd2_mixture, Embedding, LocalFeatureSet, Scope};
pub use error::{Error, Result};
pub use kernel::KernelSpec;
pub use qagg::{QaggConfig, QaggProblem, SimplexWeights};
pub use rff::RffParams;

/// Formats a float with 17 significant digits, enough to round-trip exactly.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    format!("{v:.16e}")
}
