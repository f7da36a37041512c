//! Pseudo-label inter-class variance maximization for test-time adaptation of
//! normalization-layer weights, together with closed-form oracles for the
//! variance collapse of corrupted embeddings under a linear latent model.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over coordinates read closer to the maths.
#![allow(clippy::needless_range_loop)]

pub mod adapt;
pub mod dump;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod synthetic;
pub mod theory;
pub mod verify;

pub use engine::{
    GradAccumulator, MeanAccumulator, MintConfig, MintState, TextPrior, UndefinedPolicy,
};
pub use error::{MintError, Result};
pub use linalg::Matrix;
pub use metrics::{EmbeddingSet, VarianceReport};
