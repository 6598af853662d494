//! Implicit sparse code hashing.
//!
//! Dense vectors are mapped to compact binary codes through a learned linear
//! projection `L = Rᵀ W`. `W` scales the leading left singular vectors of an
//! overcomplete dictionary so that inner products of projected vectors track
//! the inner products of the vectors' (never computed) sparse codes, and `R`
//! is a block-diagonal rotation fitted to minimize quantization error. Codes
//! are searched exhaustively with XOR and popcount.
//!
//! Module map:
//!
//! - [`dictionary`]: zero-centering, k-means, hierarchical dictionary learning.
//! - [`spectral`]: the eigen-scaling `f(λ)` and exact / column-sampled
//!   construction of `W`.
//! - [`rotation`]: per-block orthogonal Procrustes alternation.
//! - [`encoder`]: the training pipeline, sign encoding, LSH and ITQ baselines.
//! - [`search`]: Hamming distance, top-k retrieval, precision@k and mAP.
//! - [`oracle`]: lasso solver and sparse-linear-model data used to check the
//!   inner-product claim directly.
//! - [`io`] and [`cli`]: file formats and command implementations.

pub mod cli;
pub mod dictionary;
pub mod encoder;
pub mod error;
pub mod io;
pub mod matrix;
pub mod oracle;
pub mod rotation;
pub mod search;
pub mod seed;
pub mod spectral;

pub use dictionary::{hierarchical_dictionary, kmeans, zero_center, DictConfig, Dictionary};
pub use encoder::{
    encode_batch, train_isch, train_itq, train_lsh, BinaryCodeSet, HashModel, Method,
};
pub use error::{Error, Result};
pub use matrix::DataMatrix;
pub use rotation::{assemble_rotation, optimize_block_rotation, quantization_error, RotationModel};
pub use search::{hamming, mean_average_precision, precision_at_k, top_k, RetrievalResult};
pub use spectral::{exact_spectral, f_lambda, ModelParams, SingularPair, SpectralModel};
