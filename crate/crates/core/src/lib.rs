//! Learned local image descriptors on the CPU, built from scratch.
//!
//! A 64×64 grayscale patch is mapped to a 128-dimensional unit-norm
//! descriptor by a convolutional network trained in a Siamese setup with
//! margin-based contrastive loss, so that Euclidean distance is small for
//! patches of the same 3D point and large otherwise. The crate contains the
//! whole pipeline:
//!
//! - [`tensor`] — dense row-major arrays with the numeric kernels
//!   (matrix multiply, im2col/col2im) every layer builds on
//! - [`layers`] — forward/backward passes for convolution, ReLU, batch
//!   normalization, max pooling, fully-connected, L2 normalization and
//!   global average pooling
//! - [`stn`] — a spatial transformer layer (localisation network, affine
//!   grid generator, differentiable bilinear sampler)
//! - [`arch`] — the `convBlock[N,w,s,p]-pool[k]-…` architecture string
//!   notation and the built-in `cnn7` / `cnn7stn` networks
//! - [`loss`] — contrastive loss, its gradient, and the data-driven margin
//!   heuristic
//! - [`model`] — Siamese assembly, initialization, descriptor extraction,
//!   and the binary model container
//! - [`optim`] — ADADELTA training with weight decay, checkpoints, and the
//!   loss trace
//! - [`preprocess`] — histogram equalization, dataset mean/std
//!   normalization, rotation/flip augmentation
//! - [`data`] — patch dataset ingestion (mosaic bitmaps + info/match
//!   files), pair lists, synthetic fixtures, batch iteration
//! - [`eval`] — ROC / precision-recall evaluation, FPR at 95% recall,
//!   distance histograms, CSV export
//!
//! The narrative guide under `book/` walks through the same pieces in
//! order; its code snippets are compiled and run as doc-tests of this
//! crate.

pub mod arch;
pub mod data;
pub mod eval;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod stn;
pub mod tensor;

mod container;
mod error;

pub use container::{Container, OptimSection, MAGIC as CONTAINER_MAGIC};
pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Whether batch statistics are computed from the batch (training) or taken
/// from running averages (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

// The book chapters double as doc-tests so the guide can never drift from
// the code it explains.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/layers.md")]
    mod layers {}
    #[doc = include_str!("../../../book/src/architecture.md")]
    mod architecture {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/stn.md")]
    mod stn {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
