//! Encoder/decoder building blocks: recurrent convolutional layers,
//! residual units and densely connected unit chains.
//!
//! The recurrent convolutional layer (RCL) refines one feature map over
//! `t` extra steps with a second, weight-shared kernel:
//!
//! ```text
//! y(0)   = conv(x, w_f) + b
//! y(tau) = conv(x, w_f) + b + conv(relu(y(tau-1)), w_r)   tau = 1..t
//! out    = relu(y(t))
//! ```
//!
//! With `t = 0` (or `w_r = 0`) it collapses to a plain conv + relu, so
//! every block kind here is a wiring of the same unit:
//!
//! * `Plain` / `Recurrent`: units applied in sequence,
//! * `Residual`: sequence plus a skip, `out = project(x) + F(x)`,
//! * `DenseR2`: each unit reads the concatenation of the block input
//!   and all previous unit outputs; a trailing 1x1 conv compresses the
//!   final concatenation back to `c_out`; the same skip is added.
//!
//! `project` is the identity when `c_in == c_out` and a learned 1x1
//! conv otherwise. Every block ends in channel-wise spatial dropout
//! (a no-op in eval phase and at rate 0).
//!
//! All convolutions inside blocks are 3x3 same-padded stride 1, except
//! the 1x1 compression and projection.

use crate::error::{Error, Result};
use crate::ops::{add, concat_channels, conv2d, relu, spatial_dropout, Padding, Phase};
use crate::tape::{Tape, Vid};
use crate::tensor::Tensor4;

/// Wiring of the units inside one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Sequential units, no skip. With `t = 0` this is the classic
    /// two-conv U-Net level.
    Plain,
    /// Sequential units with recurrence (`t >= 1`), no skip.
    Recurrent,
    /// Sequential units plus a projected residual skip.
    Residual,
    /// Densely connected recurrent units plus a projected residual skip.
    DenseR2,
}

/// Static description of one block: enough to build its parameters,
/// count them, and drive a forward pass.
#[derive(Clone, Debug)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub c_in: usize,
    pub c_out: usize,
    /// Recurrence steps per unit; 0 disables the recurrent kernel.
    pub t: usize,
    /// Number of units chained inside the block.
    pub units: usize,
    /// Channels each dense unit contributes (`DenseR2` only).
    pub dense_growth: usize,
    /// Channel dropout probability applied at the block tail.
    pub dropout_rate: f64,
}

impl BlockSpec {
    /// Defaults: 2 units, t = 2, growth = `c_out`, dropout 0.2.
    pub fn new(kind: BlockKind, c_in: usize, c_out: usize) -> Self {
        BlockSpec { kind, c_in, c_out, t: 2, units: 2, dense_growth: c_out, dropout_rate: 0.2 }
    }

    /// `(c_in, c_out)` of unit `u` under this block's wiring.
    pub fn unit_channels(&self, u: usize) -> (usize, usize) {
        match self.kind {
            BlockKind::Plain | BlockKind::Recurrent | BlockKind::Residual => {
                (if u == 0 { self.c_in } else { self.c_out }, self.c_out)
            }
            BlockKind::DenseR2 => (self.c_in + u * self.dense_growth, self.dense_growth),
        }
    }

    /// Whether the skip path needs a learned 1x1 projection.
    pub fn needs_projection(&self) -> bool {
        matches!(self.kind, BlockKind::Residual | BlockKind::DenseR2) && self.c_in != self.c_out
    }

    /// Whether the block ends in a 1x1 compression conv.
    pub fn needs_compression(&self) -> bool {
        self.kind == BlockKind::DenseR2
    }

    /// Input width of the trailing compression conv.
    pub fn compression_c_in(&self) -> usize {
        self.c_in + self.units * self.dense_growth
    }

    /// Closed-form parameter count of the whole block.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        for u in 0..self.units {
            let (ci, co) = self.unit_channels(u);
            total += rcl_param_count(ci, co, self.t);
        }
        if self.needs_compression() {
            total += self.c_out * self.compression_c_in() + self.c_out;
        }
        if self.needs_projection() {
            total += self.c_out * self.c_in + self.c_out;
        }
        total
    }
}

/// Parameters of one 3x3 RCL unit: `w_f` feeds forward, `w_r` (present
/// iff `t >= 1`) is the recurrent kernel, `b` the bias.
pub fn rcl_param_count(c_in: usize, c_out: usize, t: usize) -> usize {
    let w_f = c_out * c_in * 9;
    let w_r = if t > 0 { c_out * c_out * 9 } else { 0 };
    w_f + w_r + c_out
}

/// Tape handles for one RCL unit's parameters.
#[derive(Clone, Copy, Debug)]
pub struct RclIds {
    pub w_f: Vid,
    pub w_r: Option<Vid>,
    pub b: Vid,
}

/// Tape handles for a 1x1 conv (projection or compression).
#[derive(Clone, Copy, Debug)]
pub struct ConvPair {
    pub w: Vid,
    pub b: Vid,
}

/// Tape handles for all parameters of one block.
#[derive(Clone, Debug)]
pub struct BlockIds {
    pub units: Vec<RclIds>,
    pub compress: Option<ConvPair>,
    pub project: Option<ConvPair>,
}

/// One recurrent convolutional layer (see the module docs for the
/// update rule). `t = 0` needs no `w_r` and reduces to conv + relu.
pub fn rcl_forward(tape: &mut Tape, x: Vid, unit: &RclIds, t: usize) -> Result<Vid> {
    let ff = conv2d(tape, x, unit.w_f, unit.b, Padding::Same, 1)?;
    if t == 0 {
        return Ok(relu(tape, ff));
    }
    let w_r = unit.w_r.ok_or_else(|| Error::Config {
        reason: format!("rcl with t = {t} needs a recurrent kernel w_r"),
    })?;
    let c_out = tape.value(ff).c();
    let zero_b = tape.input(Tensor4::zeros([1, c_out, 1, 1])?);
    let mut y = ff;
    for _ in 1..=t {
        let r = relu(tape, y);
        let rec = conv2d(tape, r, w_r, zero_b, Padding::Same, 1)?;
        y = add(tape, ff, rec)?;
    }
    Ok(relu(tape, y))
}

fn sequential_units(tape: &mut Tape, x: Vid, units: &[RclIds], t: usize) -> Result<Vid> {
    let mut cur = x;
    for unit in units {
        cur = rcl_forward(tape, cur, unit, t)?;
    }
    Ok(cur)
}

/// Densely connected chain: unit `u` consumes `concat(x, out_1, ...,
/// out_{u-1})` and contributes its own channels to the running
/// concatenation; the trailing 1x1 `compress` conv maps the final
/// concatenation to the block width. No skip, no dropout here.
pub fn dense_rcl_forward(
    tape: &mut Tape,
    x: Vid,
    units: &[RclIds],
    compress: &ConvPair,
    t: usize,
) -> Result<Vid> {
    if units.is_empty() {
        return Err(Error::Config { reason: "dense chain needs at least one unit".into() });
    }
    let cw = tape.value(compress.w).shape();
    if cw[2] != 1 || cw[3] != 1 {
        return Err(Error::shape(format!("compression conv must be 1x1, got {}x{}", cw[2], cw[3])));
    }
    let mut acc = x;
    for unit in units {
        let out = rcl_forward(tape, acc, unit, t)?;
        acc = concat_channels(tape, acc, out)?;
    }
    conv2d(tape, acc, compress.w, compress.b, Padding::Same, 1)
}

/// Residual wrapper: `out = project(x) + F(x)` where `F` is the
/// sequential unit stack (`Residual`) or the compressed dense chain
/// (`DenseR2`). No activation after the addition, so zeroing `F`'s
/// final stage makes the block an exact identity when shapes allow.
pub fn r2_forward(tape: &mut Tape, x: Vid, spec: &BlockSpec, ids: &BlockIds) -> Result<Vid> {
    if !matches!(spec.kind, BlockKind::Residual | BlockKind::DenseR2) {
        return Err(Error::Config {
            reason: format!("r2_forward expects a residual kind, got {:?}", spec.kind),
        });
    }
    validate_ids(spec, ids)?;
    let f = match spec.kind {
        BlockKind::Residual => sequential_units(tape, x, &ids.units, spec.t)?,
        BlockKind::DenseR2 => {
            let compress = ids.compress.as_ref().expect("validated above");
            dense_rcl_forward(tape, x, &ids.units, compress, spec.t)?
        }
        _ => unreachable!(),
    };
    let skip = match &ids.project {
        Some(p) => conv2d(tape, x, p.w, p.b, Padding::Same, 1)?,
        None => x,
    };
    add(tape, skip, f)
}

fn validate_ids(spec: &BlockSpec, ids: &BlockIds) -> Result<()> {
    if ids.units.len() != spec.units {
        return Err(Error::Config {
            reason: format!("block has {} unit params, spec wants {}", ids.units.len(), spec.units),
        });
    }
    if spec.t >= 1 {
        if let Some(u) = ids.units.iter().position(|u| u.w_r.is_none()) {
            return Err(Error::Config {
                reason: format!("unit {u} is missing w_r but t = {}", spec.t),
            });
        }
    }
    if spec.needs_compression() != ids.compress.is_some() {
        return Err(Error::Config {
            reason: format!("{:?} block compression params mismatch", spec.kind),
        });
    }
    if spec.needs_projection() != ids.project.is_some() {
        return Err(Error::Config {
            reason: format!(
                "{:?} block {}->{} projection params mismatch",
                spec.kind, spec.c_in, spec.c_out
            ),
        });
    }
    Ok(())
}

/// Full block of any kind, including the dropout tail. This is the
/// single entry the network assembly uses per encoder/decoder level.
pub fn block_forward(
    tape: &mut Tape,
    x: Vid,
    spec: &BlockSpec,
    ids: &BlockIds,
    phase: Phase,
    dropout_seed: u64,
) -> Result<Vid> {
    let y = match spec.kind {
        BlockKind::Plain | BlockKind::Recurrent => {
            validate_ids(spec, ids)?;
            sequential_units(tape, x, &ids.units, spec.t)?
        }
        BlockKind::Residual | BlockKind::DenseR2 => r2_forward(tape, x, spec, ids)?,
    };
    spatial_dropout(tape, y, spec.dropout_rate, phase, dropout_seed)
}

/// The headline block: densely connected recurrent units with a
/// residual skip and a dropout tail.
pub fn dense_r2_block(
    tape: &mut Tape,
    x: Vid,
    spec: &BlockSpec,
    ids: &BlockIds,
    phase: Phase,
    dropout_seed: u64,
) -> Result<Vid> {
    if spec.kind != BlockKind::DenseR2 {
        return Err(Error::Config {
            reason: format!("dense_r2_block expects kind dense_r2, got {:?}", spec.kind),
        });
    }
    block_forward(tape, x, spec, ids, phase, dropout_seed)
}
