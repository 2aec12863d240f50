//! Mask-aware token selection for diffusion-transformer video inpainting.
//!
//! When a video editing model only needs to regenerate a masked region, most
//! latent tokens are dead weight: the transformer still attends over and
//! transforms every one of them. This crate implements the desk-scale version
//! of a pipeline that restricts the expensive work (attention + feed-forward)
//! to the masked tokens while keeping full-sequence context:
//!
//! * [`tensorio`] — flat row-major tensors, a bit-exact binary file format,
//!   and deterministic synthetic video/mask cases.
//! * [`numerics`] — interpolated 1-D sampling with an analytic adjoint,
//!   multi-head attention with key-padding masks, feed-forward, layer norm.
//! * [`bvi`] — batch variable-length indexing: normalized coordinate grids
//!   that gather masked tokens into a short padded sequence and scatter
//!   results back, differentiably.
//! * [`maskembed`] — pixel-to-latent mask embedding (block OR), token-order
//!   flattening, and mask dilation.
//! * [`diffsim`] — the context simulator: runs only inner tokens through toy
//!   transformer blocks while outer context enters attention as cheap
//!   elementwise key/value proxies; includes the masked flow-matching loss,
//!   analytic gradients for the three learnable parameter groups, and a tiny
//!   fine-tuning loop.
//! * [`fusion`] — boundary harmonization: mean-variance alignment over the
//!   overlap band, weighted blending, nearest-neighbor prefill.
//! * [`costmodel`] — the analytical FLOPs/speedup model and the wall-clock
//!   benchmark harness that checks cost really scales with mask ratio.

pub mod bvi;
pub mod costmodel;
pub mod diffsim;
pub mod error;
pub mod fusion;
pub mod maskembed;
pub mod numerics;
pub mod tensorio;

pub use error::{Error, Result};
