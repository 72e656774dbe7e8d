//! Independent reference implementations used by the test suite.
//!
//! Everything here is written as plain, slow, obviously-correct loops
//! and deliberately shares no code with the optimized paths it is used
//! to check (im2col convolution, tape recurrences, the thresholded ROC
//! sweep). Hidden from docs: this module is test support, not public
//! API, and carries no stability guarantee.

#![doc(hidden)]

use crate::ops::Padding;
use crate::tensor::Tensor4;

/// Direct six-loop convolution with explicit zero padding.
pub fn naive_conv2d(x: &Tensor4, w: &Tensor4, b: &Tensor4, pad: Padding, stride: usize) -> Tensor4 {
    let [co, ci, kh, kw] = w.shape();
    assert_eq!(x.c(), ci, "oracle: channel mismatch");
    let (ph, pw) = match pad {
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
        Padding::Valid => (0, 0),
    };
    let oh = (x.h() + 2 * ph - kh) / stride + 1;
    let ow = (x.w() + 2 * pw - kw) / stride + 1;
    let mut out = Tensor4::zeros([x.n(), co, oh, ow]).unwrap();
    for n in 0..x.n() {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - ph as isize;
                                let ix = (ox * stride + kx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= x.h() as isize || ix >= x.w() as isize {
                                    continue;
                                }
                                acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                            }
                        }
                    }
                    out.set(n, o, oy, ox, acc + b.data()[o]);
                }
            }
        }
    }
    out
}

fn relu_t(t: &Tensor4) -> Tensor4 {
    Tensor4::from_vec(t.shape(), t.data().iter().map(|&v| v.max(0.0)).collect()).unwrap()
}

fn add_t(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    assert_eq!(a.shape(), b.shape());
    Tensor4::from_vec(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap()
}

/// Hand-unrolled recurrent convolutional layer:
/// `y(0) = conv(x, w_f) + b`,
/// `y(tau) = conv(x, w_f) + b + conv(relu(y(tau-1)), w_r)` for `tau >= 1`,
/// output `relu(y(t))`.
pub fn rcl_reference(x: &Tensor4, w_f: &Tensor4, w_r: Option<&Tensor4>, b: &Tensor4, t: usize) -> Tensor4 {
    let ff = naive_conv2d(x, w_f, b, Padding::Same, 1);
    let mut y = ff.clone();
    for _ in 1..=t {
        let w_r = w_r.expect("oracle: t >= 1 needs w_r");
        let zero_b = Tensor4::zeros([1, w_r.shape()[0], 1, 1]).unwrap();
        let rec = naive_conv2d(&relu_t(&y), w_r, &zero_b, Padding::Same, 1);
        y = add_t(&ff, &rec);
    }
    relu_t(&y)
}

/// Rank-statistic AUC: over all (positive, negative) pixel pairs, the
/// fraction where the positive scores higher, ties counted 1/2.
/// Returns `None` when either class is empty.
pub fn mann_whitney_auc(probs: &[f64], gt: &[f64]) -> Option<f64> {
    assert_eq!(probs.len(), gt.len());
    let pos: Vec<f64> = probs.iter().zip(gt).filter(|(_, &g)| g == 1.0).map(|(&p, _)| p).collect();
    let neg: Vec<f64> = probs.iter().zip(gt).filter(|(_, &g)| g == 0.0).map(|(&p, _)| p).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut score = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    Some(score / (pos.len() as f64 * neg.len() as f64))
}

/// Reference confusion-count metrics, mirroring the defining ratios
/// (including the degenerate-denominator conventions) term by term.
pub struct RefMetrics {
    pub dsc: f64,
    pub js: f64,
    pub precision: f64,
    pub recall: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

pub fn reference_metrics(tp: u64, tn: u64, fp: u64, fne: u64) -> RefMetrics {
    let dsc = if 2 * tp + fp + fne == 0 {
        1.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fne) as f64
    };
    let js = dsc / (2.0 - dsc);
    let precision = if tp + fp == 0 {
        if fne == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fne == 0 {
        if fp == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fne) as f64
    };
    let specificity = if tn + fp == 0 {
        if fne == 0 { 1.0 } else { 0.0 }
    } else {
        tn as f64 / (tn + fp) as f64
    };
    let accuracy = if tp + tn + fp + fne == 0 {
        1.0
    } else {
        (tp + tn) as f64 / (tp + tn + fp + fne) as f64
    };
    RefMetrics { dsc, js, precision, recall, sensitivity: recall, specificity, accuracy }
}

/// Per-output-pixel bilinear resize with half-pixel sample centers
/// (align-corners false): output pixel `(oy, ox)` samples the source at
/// `((oy + 0.5) * h/oh - 0.5, (ox + 0.5) * w/ow - 0.5)`, clamping the
/// four neighbours to the image border.
pub fn naive_bilinear_resize(x: &Tensor4, oh: usize, ow: usize) -> Tensor4 {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor4::zeros([n, c, oh, ow]).unwrap();
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
                    let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
                    let y0 = sy.floor();
                    let x0 = sx.floor();
                    let wy = sy - y0;
                    let wx = sx - x0;
                    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
                    let (ya, yb) = (clamp(y0, h), clamp(y0 + 1.0, h));
                    let (xa, xb) = (clamp(x0, w), clamp(x0 + 1.0, w));
                    let v = (1.0 - wy) * (1.0 - wx) * x.at(ni, ci, ya, xa)
                        + (1.0 - wy) * wx * x.at(ni, ci, ya, xb)
                        + wy * (1.0 - wx) * x.at(ni, ci, yb, xa)
                        + wy * wx * x.at(ni, ci, yb, xb);
                    out.set(ni, ci, oy, ox, v);
                }
            }
        }
    }
    out
}
