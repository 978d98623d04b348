//! Kernelized preference-optimization engine.
//!
//! The crate implements a contrastive preference objective over a toy softmax
//! policy, blending a log-probability signal with an embedding-similarity
//! signal, and passes each through one of four scalar kernel families
//! (polynomial, RBF, spectral, Mahalanobis) or a learned mixture of them.
//! The objective is regularized toward a frozen reference policy by one of
//! seven divergence measures.
//!
//! Module map:
//!
//! - [`num`] — finite-checked vectors/matrices, probability simplexes, and
//!   the three linear-algebra contracts (softmax, symmetric eigenvalues,
//!   SPD solve) everything else builds on.
//! - [`divergence`] — KL, Jensen-Shannon, Hellinger, Rényi, Bhattacharyya,
//!   1-D Wasserstein, and generic f-divergences, plus the batch regularizer.
//! - [`kernel`] — the four kernel families in scalar, embedding-ratio, and
//!   vector forms, with effective-range formulas.
//! - [`mixture`] — flat and hierarchical kernel mixtures, softmax weight
//!   dynamics, entropy regularization, and collapse detection.
//! - [`policy`] — the toy table policy (logits plus learnable embedding
//!   tables) whose closed-form gradients the loss module consumes.
//! - [`loss`] — hybrid and kernelized losses, the full regularized
//!   objective, analytic gradients, and the finite-difference oracle that
//!   certifies them.
//! - [`selection`] — data-driven metrics and decision rules that recommend
//!   a kernel and a divergence for a dataset.
//! - [`train`] — synthetic preference-data generators and the seeded
//!   gradient-ascent loop with per-step tracing.
//! - [`analysis`] — Davies-Bouldin cluster separation and heavy-tailed
//!   spectral (power-law tail) diagnostics.
//! - [`io`] — JSONL dataset ingestion, JSON run configs, and report types
//!   shared with the command-line front end.

pub mod analysis;
pub mod divergence;
mod error;
pub mod io;
pub mod kernel;
pub mod loss;
pub mod mixture;
pub mod num;
pub mod policy;
pub mod selection;
pub mod train;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
