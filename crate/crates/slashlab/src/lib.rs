//! slashlab: a numerical laboratory for slash-dominant attention heads.
//!
//! Attention heads in RoPE-based transformers often concentrate their
//! scores along a sub-diagonal of the attention matrix. This crate
//! implements the analysis metrics for that phenomenon — average slash
//! scores and head detection, spectral power and effective rank,
//! subspace alignment, per-frequency logit decomposition, frequency-band
//! ablation — together with a small trainable model in which the
//! phenomenon provably emerges: a two-layer disentangled transformer
//! with RoPE trained by two-stage gradient descent on in-context linear
//! regression.
//!
//! Entry points:
//! - [`rope`]: frequency families, rotations, the pulse condition, and
//!   the per-frequency decomposition of attention logits.
//! - [`rank`]: SVD-based power/rank/alignment metrics and low-rank
//!   truncation.
//! - [`data`]: the in-context regression data model and token
//!   embeddings.
//! - [`model`]: the reduced two-layer model and its full-architecture
//!   oracle.
//! - [`train`]: losses, closed-form gradients, the finite-difference
//!   oracle, and the two-stage training loop.
//! - [`slash`]: slash scores, head detection, band ablation, and OOD
//!   evaluation.
//! - [`ingest`]: the SDHA tensor-dump format and offline analysis.
//! - [`cli`]: the `slashlab` command-line front end.
//!
//! Everything is deterministic: sampling goes through ChaCha8 generators
//! keyed by `(seed, tag, index)`, and batch reductions use a fixed-order
//! pairwise tree, so results are independent of thread count.

pub mod cli;
pub mod data;
pub mod error;
pub mod ingest;
pub mod model;
pub mod rank;
pub mod rope;
pub mod slash;
pub mod train;

pub use error::{Error, Result};
