//! From-scratch segmentation networks on a rank-4 autodiff tape.
//!
//! This crate implements U-Net style encoder-decoders for binary image
//! segmentation — a plain U-Net, a residual variant, and a densely
//! connected recurrent-residual variant — together with everything they
//! need to run without a deep-learning framework:
//!
//! * [`Tensor4`]: dense `(n, c, h, w)` arrays of `f64` with a flat
//!   binary wire format,
//! * [`Tape`]: a reverse-mode autodiff tape over those tensors, checked
//!   against central finite differences by [`grad_check`],
//! * [`ops`]: convolution (im2col), pooling, transposed convolution,
//!   activations, channel concatenation, spatial dropout and a
//!   numerically stable binary cross-entropy on logits,
//! * [`blocks`]: recurrent convolutional layers, residual units and
//!   dense unit chains, composable into encoder/decoder levels,
//! * [`model`]: network assembly, deterministic seeded init,
//!   checkpointing,
//! * [`train`]: Adam / SGD-momentum training loop with per-epoch curves,
//! * [`metrics`]: confusion-count metrics (Dice, Jaccard, precision,
//!   recall, specificity, accuracy) and trapezoidal ROC AUC,
//! * [`data`]: binary PGM datasets, bilinear/nearest resize, seeded
//!   splits and a synthetic ellipse generator.
//!
//! Everything is deterministic given its seeds: same config, same data,
//! same seed — same bytes out, which the test suite checks aggressively.
//!
//! The accompanying book under `book/` walks through the design; its
//! chapters are compiled into [`guide`] so every snippet in the book is
//! a doc-test of this crate.
//!
//! # Quick start
//!
//! ```
//! use r2unet::{ModelConfig, Variant, Tensor4};
//!
//! // A tiny densely connected recurrent-residual U-Net.
//! let cfg = ModelConfig {
//!     variant: Variant::DenseR2UNet,
//!     depth: 2,
//!     base_width: 4,
//!     input_size: (16, 16),
//!     seed: 7,
//!     ..ModelConfig::default()
//! };
//! let model = cfg.build().unwrap();
//! let x = Tensor4::rand_uniform([1, 1, 16, 16], 0.0, 1.0, 0).unwrap();
//! let probs = model.predict(&x).unwrap();
//! assert_eq!(probs.shape(), [1, 1, 16, 16]);
//! assert!(probs.data().iter().all(|p| (0.0..=1.0).contains(p)));
//! ```

pub mod blocks;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod guide;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradReport, DEFAULT_GRAD_STEP, DEFAULT_GRAD_TOL};
pub use model::{Model, ModelConfig, Variant};
pub use tape::{Tape, Vid};
pub use tensor::Tensor4;
