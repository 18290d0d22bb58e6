//! Variance-preserving initialization for tensorial layers.
//!
//! A layer is described as a contraction hypergraph ([`format::LayerFormat`]).
//! Its backbone graph ([`init::BackboneGraph`]) yields the per-vertex weight
//! variance that keeps feature variance (fan-in) or gradient variance
//! (fan-out) constant; the backward pass is put in convolution form by the
//! rewrite in [`transform`]. [`simulate`] checks the predictions by seeded
//! Monte-Carlo.

pub mod error;
pub mod format;
pub mod init;
pub mod rng;
pub mod simulate;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result};
