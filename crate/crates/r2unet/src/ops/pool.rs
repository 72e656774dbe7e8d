//! 2x2 stride-2 max pooling.

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Vid};
use crate::tensor::Tensor4;

/// Forward pooling plus the flat input index of each window maximum.
/// Ties resolve to the lowest flat index (row-major scan order), so the
/// result is fully deterministic.
pub fn maxpool2d_raw(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let (n, c, h, w) = (x.n(), x.c(), x.h(), x.w());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2d needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow])?;
    let mut argmax = vec![0usize; out.len()];
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = x.idx(i, ch, 2 * oy, 2 * ox);
                    let mut best = x.data()[best_idx];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = x.idx(i, ch, 2 * oy + dy, 2 * ox + dx);
                            let v = x.data()[idx];
                            // Strict > keeps the first (lowest) index on ties.
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let o = out.idx(i, ch, oy, ox);
                    out.data_mut()[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

struct MaxPoolRule {
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

impl Backward for MaxPoolRule {
    fn backward(&self, _inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        let mut gx = Tensor4::zeros(self.in_shape).expect("valid shape");
        for (o, &src) in self.argmax.iter().enumerate() {
            gx.data_mut()[src] += out_grad.data()[o];
        }
        vec![gx]
    }
}

/// 2x2 window, stride-2 max pool; halves both spatial dims. The
/// gradient routes entirely to each window's argmax.
pub fn maxpool2d(tape: &mut Tape, x: Vid) -> Result<Vid> {
    let v = tape.value(x);
    let in_shape = v.shape();
    let (out, argmax) = maxpool2d_raw(v)?;
    Ok(tape.push_node(vec![x], out, Box::new(MaxPoolRule { argmax, in_shape })))
}
