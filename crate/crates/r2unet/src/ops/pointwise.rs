//! Elementwise ops, channel concatenation and spatial dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Vid};
use crate::tensor::Tensor4;

use super::{ensure_same_shape, Phase};

struct ReluRule;

impl Backward for ReluRule {
    fn backward(&self, inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        let x = inputs[0];
        let data = x
            .data()
            .iter()
            .zip(out_grad.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect();
        vec![Tensor4::from_vec(x.shape(), data).expect("shape preserved")]
    }
}

/// `max(0, x)` elementwise. The subgradient at exactly 0 is taken as 0.
pub fn relu(tape: &mut Tape, x: Vid) -> Vid {
    let v = tape.value(x);
    let data = v.data().iter().map(|&a| a.max(0.0)).collect();
    let out = Tensor4::from_vec(v.shape(), data).expect("shape preserved");
    tape.push_node(vec![x], out, Box::new(ReluRule))
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct SigmoidRule;

impl Backward for SigmoidRule {
    fn backward(&self, _inputs: &[&Tensor4], out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        // d sigmoid / dx = s (1 - s), read from the saved output.
        let data = out
            .data()
            .iter()
            .zip(out_grad.data())
            .map(|(&s, &g)| s * (1.0 - s) * g)
            .collect();
        vec![Tensor4::from_vec(out.shape(), data).expect("shape preserved")]
    }
}

/// Logistic function elementwise; output strictly inside `(0, 1)`.
pub fn sigmoid(tape: &mut Tape, x: Vid) -> Vid {
    let v = tape.value(x);
    let data = v.data().iter().map(|&a| sigmoid_scalar(a)).collect();
    let out = Tensor4::from_vec(v.shape(), data).expect("shape preserved");
    tape.push_node(vec![x], out, Box::new(SigmoidRule))
}

struct AddRule;

impl Backward for AddRule {
    fn backward(&self, _inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        vec![out_grad.clone(), out_grad.clone()]
    }
}

/// Elementwise sum of two same-shape tensors.
pub fn add(tape: &mut Tape, a: Vid, b: Vid) -> Result<Vid> {
    ensure_same_shape("add operands", tape.value(a), tape.value(b))?;
    let (va, vb) = (tape.value(a), tape.value(b));
    let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
    let out = Tensor4::from_vec(va.shape(), data).expect("shape preserved");
    Ok(tape.push_node(vec![a, b], out, Box::new(AddRule)))
}

struct ConcatRule {
    c_a: usize,
}

impl Backward for ConcatRule {
    fn backward(&self, inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        let (a, b) = (inputs[0], inputs[1]);
        let mut ga = Tensor4::zeros(a.shape()).expect("valid shape");
        let mut gb = Tensor4::zeros(b.shape()).expect("valid shape");
        let (n, _, h, w) = (a.n(), a.c(), a.h(), a.w());
        let plane = h * w;
        for i in 0..n {
            for c in 0..out_grad.c() {
                let src = out_grad.idx(i, c, 0, 0);
                let slice = &out_grad.data()[src..src + plane];
                if c < self.c_a {
                    let dst = ga.idx(i, c, 0, 0);
                    ga.data_mut()[dst..dst + plane].copy_from_slice(slice);
                } else {
                    let dst = gb.idx(i, c - self.c_a, 0, 0);
                    gb.data_mut()[dst..dst + plane].copy_from_slice(slice);
                }
            }
        }
        vec![ga, gb]
    }
}

/// Stack two tensors along the channel axis; `n`, `h`, `w` must match.
pub fn concat_channels(tape: &mut Tape, a: Vid, b: Vid) -> Result<Vid> {
    let (va, vb) = (tape.value(a), tape.value(b));
    if va.n() != vb.n() || va.h() != vb.h() || va.w() != vb.w() {
        return Err(Error::shape(format!(
            "concat_channels needs equal n/h/w: {:?} vs {:?}",
            va.shape(),
            vb.shape()
        )));
    }
    let (n, h, w) = (va.n(), va.h(), va.w());
    let (c_a, c_b) = (va.c(), vb.c());
    let mut out = Tensor4::zeros([n, c_a + c_b, h, w])?;
    let plane = h * w;
    for i in 0..n {
        for c in 0..c_a {
            let src = va.idx(i, c, 0, 0);
            let dst = out.idx(i, c, 0, 0);
            let slice = va.data()[src..src + plane].to_vec();
            out.data_mut()[dst..dst + plane].copy_from_slice(&slice);
        }
        for c in 0..c_b {
            let src = vb.idx(i, c, 0, 0);
            let dst = out.idx(i, c_a + c, 0, 0);
            let slice = vb.data()[src..src + plane].to_vec();
            out.data_mut()[dst..dst + plane].copy_from_slice(&slice);
        }
    }
    Ok(tape.push_node(vec![a, b], out, Box::new(ConcatRule { c_a })))
}

struct DropoutRule {
    /// One multiplier per (n, c) pair: 0 for dropped channels,
    /// `1 / (1 - rate)` for survivors. Reused verbatim in backward.
    channel_scale: Vec<f64>,
}

impl DropoutRule {
    fn apply(&self, t: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = (t.n(), t.c(), t.h(), t.w());
        let plane = h * w;
        let mut out = t.clone();
        for i in 0..n {
            for ch in 0..c {
                let scale = self.channel_scale[i * c + ch];
                let start = t.idx(i, ch, 0, 0);
                for v in &mut out.data_mut()[start..start + plane] {
                    *v *= scale;
                }
            }
        }
        out
    }
}

impl Backward for DropoutRule {
    fn backward(&self, _inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        vec![self.apply(out_grad)]
    }
}

/// Channel-wise (spatial) dropout.
///
/// In `Train` phase each `(n, c)` feature map is zeroed independently
/// with probability `rate` and survivors are scaled by `1 / (1 - rate)`
/// to keep the expected activation unchanged. In `Eval` phase, and for
/// `rate == 0`, the op is the identity (the input id is returned
/// unchanged — nothing is recorded). The mask is a pure function of
/// `seed`.
pub fn spatial_dropout(tape: &mut Tape, x: Vid, rate: f64, phase: Phase, seed: u64) -> Result<Vid> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate { rate });
    }
    if phase == Phase::Eval || rate == 0.0 {
        return Ok(x);
    }
    let v = tape.value(x);
    let (n, c) = (v.n(), v.c());
    let keep_scale = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel_scale: Vec<f64> = (0..n * c)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
        .collect();
    let rule = DropoutRule { channel_scale };
    let out = rule.apply(v);
    Ok(tape.push_node(vec![x], out, Box::new(rule)))
}

struct SumAllRule;

impl Backward for SumAllRule {
    fn backward(&self, inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        let g = out_grad.data()[0];
        vec![Tensor4::filled(inputs[0].shape(), g).expect("valid shape")]
    }
}

/// Sum of every entry, as a `1x1x1x1` scalar. Mostly a reduction head
/// for gradient checks.
pub fn sum_all(tape: &mut Tape, x: Vid) -> Vid {
    let s = tape.value(x).sum();
    tape.push_node(
        vec![x],
        Tensor4::filled([1, 1, 1, 1], s).expect("scalar shape"),
        Box::new(SumAllRule),
    )
}

struct WeightedSumRule {
    weights: Tensor4,
}

impl Backward for WeightedSumRule {
    fn backward(&self, _inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        let g = out_grad.data()[0];
        let data = self.weights.data().iter().map(|w| w * g).collect();
        vec![Tensor4::from_vec(self.weights.shape(), data).expect("shape preserved")]
    }
}

/// `sum(x * weights)` with constant weights, as a scalar. A better
/// gradient-check head than [`sum_all`]: distinct weights break the
/// symmetry that can hide transposition bugs.
pub fn weighted_sum(tape: &mut Tape, x: Vid, weights: &Tensor4) -> Result<Vid> {
    ensure_same_shape("weighted_sum operands", tape.value(x), weights)?;
    let s: f64 = tape.value(x).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
    Ok(tape.push_node(
        vec![x],
        Tensor4::filled([1, 1, 1, 1], s).expect("scalar shape"),
        Box::new(WeightedSumRule { weights: weights.clone() }),
    ))
}
