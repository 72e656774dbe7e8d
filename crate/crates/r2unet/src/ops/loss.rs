//! Binary cross-entropy on logits.
//!
//! Working on logits instead of probabilities folds the sigmoid into
//! the loss, which is both faster and numerically safe: the naive
//! `-[t ln p + (1 - t) ln(1 - p)]` overflows to infinity once the
//! sigmoid saturates, while the logit form
//! `max(z, 0) - z t + ln(1 + exp(-|z|))` stays finite for any `z`.

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Vid};
use crate::tensor::Tensor4;

use super::pointwise::sigmoid_scalar;

fn bce_term(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

struct BceRule {
    target: Tensor4,
}

impl Backward for BceRule {
    fn backward(&self, inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        // d mean_i bce(z_i, t_i) / d z_i = (sigmoid(z_i) - t_i) / N
        let z = inputs[0];
        let g = out_grad.data()[0];
        let inv_n = 1.0 / z.len() as f64;
        let data = z
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&zi, &ti)| (sigmoid_scalar(zi) - ti) * inv_n * g)
            .collect();
        vec![Tensor4::from_vec(z.shape(), data).expect("shape preserved")]
    }
}

/// Mean binary cross-entropy between logits and a `{0, 1}` target, as a
/// `1x1x1x1` scalar on the tape. The target is a constant: no gradient
/// flows into it.
pub fn bce_loss(tape: &mut Tape, logits: Vid, target: &Tensor4) -> Result<Vid> {
    let z = tape.value(logits);
    super::ensure_same_shape("bce_loss operands", z, target)?;
    if target.data().iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::NonBinary { context: "bce_loss target".into() });
    }
    let n = z.len() as f64;
    let total: f64 = z.data().iter().zip(target.data()).map(|(&zi, &ti)| bce_term(zi, ti)).sum();
    let out = Tensor4::filled([1, 1, 1, 1], total / n).expect("scalar shape");
    Ok(tape.push_node(vec![logits], out, Box::new(BceRule { target: target.clone() })))
}
