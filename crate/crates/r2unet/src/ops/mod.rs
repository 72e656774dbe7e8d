//! Differentiable ops over [`Tensor4`](crate::Tensor4) values on a
//! [`Tape`](crate::Tape).
//!
//! Every op validates shapes up front and returns a `Result`; once an
//! op has recorded its node, forward value and backward rule are fixed.
//! Conventions shared by the whole set:
//!
//! * activations, dropout and arithmetic are elementwise and shape
//!   preserving,
//! * convolution weights are `(c_out, c_in, kh, kw)`; transposed
//!   convolution weights are `(c_in, c_out, kh, kw)`; biases are
//!   `(1, c, 1, 1)`,
//! * `Same` padding requires odd kernels and pads by `(k - 1) / 2`,
//! * all ops are deterministic; the only randomness (dropout) is driven
//!   by an explicit seed.

mod conv;
mod loss;
mod pointwise;
mod pool;

pub use conv::{conv2d, conv_transpose2d};
pub use loss::bce_loss;
pub use pointwise::{add, concat_channels, relu, sigmoid, spatial_dropout, sum_all, weighted_sum};
pub use pool::{maxpool2d, maxpool2d_raw};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Spatial padding scheme for [`conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad by `(k - 1) / 2` so stride-1 output keeps the input's
    /// spatial dims. Requires odd kernels.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

pub(crate) fn ensure_same_shape(context: &str, a: &Tensor4, b: &Tensor4) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{context}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
