//! Codebook rearrangement and cluster-oriented training utilities for
//! autoregressive models over vector-quantized tokens.
//!
//! - [`codebook`]: codebooks, nearest-neighbor quantization, code-distance ranks
//! - [`clustering`]: balanced k-means, cluster statistics, exact ordering oracle
//! - [`rearrange`]: cluster-contiguous permutations and token re-indexing
//! - [`loss`]: token and cluster cross-entropy with analytic gradients
//! - [`sampling`]: guidance, temperature, top-k/top-p, categorical draws
//! - [`toytrain`]: the synthetic next-token experiment
//! - [`tokens`]: TOK1 and JSON-lines token streams

pub mod cli;
pub mod clustering;
pub mod codebook;
pub mod error;
pub mod loss;
pub mod rearrange;
pub mod rng;
pub mod sampling;
pub mod tokens;
pub mod toytrain;

pub use clustering::{
    adjacency_cost, balanced_kmeans, hamiltonian_oracle, intra_cluster_stats, ClusterAssignment,
    ClusterStats,
};
pub use codebook::{Codebook, CodebookFormat, FeatureGrid, TokenGrid};
pub use error::{Error, Result};
pub use loss::{
    cluster_ce, cluster_probs, combined_loss, combined_loss_grad, finite_diff_check, softmax,
    token_ce, ClusterProbVector, LossBreakdown, ProbVector,
};
pub use rearrange::{
    apply_permutation, build_permutation, cluster_label, remap_tokens, PermutationFile,
    PermutationMap,
};
pub use rng::SplitMix64;
pub use sampling::SamplerConfig;
