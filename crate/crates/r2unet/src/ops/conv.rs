//! 2-D convolution and its stride-2 adjoint (transposed convolution).
//!
//! `conv2d` lowers each sample to a column matrix (im2col) and runs one
//! matmul per sample: with weights `(c_out, c_in, kh, kw)` flattened to
//! a `c_out x (c_in kh kw)` matrix and columns `(c_in kh kw) x (oh ow)`,
//! the product is the `c_out x (oh ow)` output plane. The backward pass
//! reuses the same lowering: the weight gradient is `g . cols^T` and the
//! input gradient is `w^T . g` scattered back through col2im.
//!
//! `conv_transpose2d` is written as independent scatter/gather loops
//! rather than by calling the conv backward helpers, so the algebraic
//! identity "transposed convolution == input gradient of convolution"
//! can be tested across two genuinely different code paths.

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Vid};
use crate::tensor::Tensor4;

use super::Padding;

/// Resolved geometry of one convolution.
#[derive(Clone, Copy, Debug)]
struct Geom {
    ci: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    stride: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_geometry(x: &Tensor4, w: &Tensor4, b: &Tensor4, pad: Padding, stride: usize) -> Result<Geom> {
    let [co, ci, kh, kw] = w.shape();
    if x.c() != ci {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input has {} channels, kernel expects {ci}",
            x.c()
        )));
    }
    if b.shape() != [1, co, 1, 1] {
        return Err(Error::shape(format!(
            "conv2d bias must be [1, {co}, 1, 1], got {:?}",
            b.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidDim { context: "conv2d stride must be >= 1".into() });
    }
    let (ph, pw) = match pad {
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::shape(format!(
                    "same padding requires odd kernels, got {kh}x{kw}"
                )));
            }
            ((kh - 1) / 2, (kw - 1) / 2)
        }
        Padding::Valid => (0, 0),
    };
    let (h, w_) = (x.h(), x.w());
    if h + 2 * ph < kh || w_ + 2 * pw < kw {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than padded input {h}x{w_} (pad {ph}x{pw})"
        )));
    }
    let oh = (h + 2 * ph - kh) / stride + 1;
    let ow = (w_ + 2 * pw - kw) / stride + 1;
    Ok(Geom { ci, co, kh, kw, ph, pw, stride, h, w: w_, oh, ow })
}

/// `out += a . b` with `a: m x k`, `b: k x n`, all row-major flat.
/// i-p-j order keeps the inner loop contiguous in `b` and `out`.
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a^T . b` with `a: k x m`, `b: k x n`.
fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a . b^T` with `a: m x k`, `b: n x k`.
fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// Lower sample `ni` into `cols` (rows = `(ci, ky, kx)`, columns =
/// `(oy, ox)`), zero-filling out-of-range taps.
fn im2col(x: &Tensor4, ni: usize, g: &Geom, cols: &mut [f64]) {
    debug_assert_eq!(cols.len(), g.rows() * g.cols());
    let ow = g.ow;
    for ci in 0..g.ci {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let row = &mut cols[r * g.cols()..(r + 1) * g.cols()];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.ph as isize;
                    let seg = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    for (ox, slot) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pw as isize;
                        *slot = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            x.at(ni, ci, iy as usize, ix as usize)
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into sample `ni` of `gx`.
fn col2im_acc(cols: &[f64], ni: usize, g: &Geom, gx: &mut Tensor4) {
    debug_assert_eq!(cols.len(), g.rows() * g.cols());
    for ci in 0..g.ci {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let row = &cols[r * g.cols()..(r + 1) * g.cols()];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pw as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let idx = gx.idx(ni, ci, iy as usize, ix as usize);
                        gx.data_mut()[idx] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &Tensor4, w: &Tensor4, b: &Tensor4, g: &Geom) -> Result<Tensor4> {
    let n = x.n();
    let mut out = Tensor4::zeros([n, g.co, g.oh, g.ow])?;
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let plane = g.cols();
    for ni in 0..n {
        im2col(x, ni, g, &mut cols);
        let start = out.idx(ni, 0, 0, 0);
        matmul_acc(w.data(), &cols, &mut out.data_mut()[start..start + g.co * plane], g.co, g.rows(), plane);
        for co in 0..g.co {
            let bias = b.data()[co];
            if bias != 0.0 {
                let s = out.idx(ni, co, 0, 0);
                for v in &mut out.data_mut()[s..s + plane] {
                    *v += bias;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `conv2d` w.r.t. its input, via the same col2im route as
/// [`Conv2dRule`], packaged standalone so the adjoint-identity test can
/// compare it against the scatter-based [`conv_transpose2d`] forward.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn conv2d_input_grad(
    out_grad: &Tensor4,
    w: &Tensor4,
    x_shape: [usize; 4],
    pad: Padding,
    stride: usize,
) -> Result<Tensor4> {
    let x_probe = Tensor4::zeros(x_shape)?;
    let b_probe = Tensor4::zeros([1, w.shape()[0], 1, 1])?;
    let g = conv_geometry(&x_probe, w, &b_probe, pad, stride)?;
    let mut gx = Tensor4::zeros(x_shape)?;
    let mut gcols = vec![0.0; g.rows() * g.cols()];
    for ni in 0..x_shape[0] {
        gcols.fill(0.0);
        let s = out_grad.idx(ni, 0, 0, 0);
        let g_n = &out_grad.data()[s..s + g.co * g.cols()];
        matmul_at_b_acc(w.data(), g_n, &mut gcols, g.rows(), g.co, g.cols());
        col2im_acc(&gcols, ni, &g, &mut gx);
    }
    Ok(gx)
}

struct Conv2dRule {
    geom: Geom,
}

impl Backward for Conv2dRule {
    fn backward(&self, inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = &self.geom;
        let plane = g.cols();

        let mut gx = Tensor4::zeros(x.shape()).expect("valid shape");
        let mut gw = Tensor4::zeros(w.shape()).expect("valid shape");
        let mut gb = Tensor4::zeros([1, g.co, 1, 1]).expect("valid shape");

        let mut cols = vec![0.0; g.rows() * plane];
        let mut gcols = vec![0.0; g.rows() * plane];
        for ni in 0..x.n() {
            let s = out_grad.idx(ni, 0, 0, 0);
            let g_n = &out_grad.data()[s..s + g.co * plane];

            // Bias: plain sum over the output plane per channel.
            for co in 0..g.co {
                gb.data_mut()[co] += g_n[co * plane..(co + 1) * plane].iter().sum::<f64>();
            }

            // Weights: g_n . cols^T, accumulated across samples.
            im2col(x, ni, g, &mut cols);
            matmul_a_bt_acc(g_n, &cols, gw.data_mut(), g.co, plane, g.rows());

            // Input: w^T . g_n scattered back.
            gcols.fill(0.0);
            matmul_at_b_acc(w.data(), g_n, &mut gcols, g.rows(), g.co, plane);
            col2im_acc(&gcols, ni, g, &mut gx);
        }
        vec![gx, gw, gb]
    }
}

/// 2-D convolution with bias.
///
/// `x: (n, c_in, h, w)`, `w: (c_out, c_in, kh, kw)`, `b: (1, c_out, 1, 1)`.
/// Output is `(n, c_out, oh, ow)` with
/// `oh = (h + 2 ph - kh) / stride + 1` (floor), `ph = (kh - 1) / 2` for
/// [`Padding::Same`] and 0 for [`Padding::Valid`].
pub fn conv2d(tape: &mut Tape, x: Vid, w: Vid, b: Vid, pad: Padding, stride: usize) -> Result<Vid> {
    let geom = conv_geometry(tape.value(x), tape.value(w), tape.value(b), pad, stride)?;
    let out = conv_forward(tape.value(x), tape.value(w), tape.value(b), &geom)?;
    Ok(tape.push_node(vec![x, w, b], out, Box::new(Conv2dRule { geom })))
}

/// Geometry for the transposed op: output is exactly `stride x` the
/// input spatially.
fn transpose_geometry(x: &Tensor4, w: &Tensor4, b: &Tensor4, stride: usize) -> Result<Geom> {
    let [ci, co, kh, kw] = w.shape();
    if x.c() != ci {
        return Err(Error::shape(format!(
            "conv_transpose2d channel mismatch: input has {} channels, kernel expects {ci}",
            x.c()
        )));
    }
    if b.shape() != [1, co, 1, 1] {
        return Err(Error::shape(format!(
            "conv_transpose2d bias must be [1, {co}, 1, 1], got {:?}",
            b.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidDim { context: "conv_transpose2d stride must be >= 1".into() });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(format!(
            "conv_transpose2d requires odd kernels, got {kh}x{kw}"
        )));
    }
    // h/w hold the *input* dims here; oh/ow the upsampled output dims.
    Ok(Geom {
        ci,
        co,
        kh,
        kw,
        ph: (kh - 1) / 2,
        pw: (kw - 1) / 2,
        stride,
        h: x.h(),
        w: x.w(),
        oh: x.h() * stride,
        ow: x.w() * stride,
    })
}

struct ConvTranspose2dRule {
    geom: Geom,
}

impl Backward for ConvTranspose2dRule {
    fn backward(&self, inputs: &[&Tensor4], _out: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = &self.geom;

        let mut gx = Tensor4::zeros(x.shape()).expect("valid shape");
        let mut gw = Tensor4::zeros(w.shape()).expect("valid shape");
        let mut gb = Tensor4::zeros([1, g.co, 1, 1]).expect("valid shape");

        for ni in 0..x.n() {
            for co in 0..g.co {
                let s = out_grad.idx(ni, co, 0, 0);
                gb.data_mut()[co] += out_grad.data()[s..s + g.oh * g.ow].iter().sum::<f64>();
            }
            for ci in 0..g.ci {
                for co in 0..g.co {
                    for oy in 0..g.h {
                        for ox in 0..g.w {
                            let xv = x.at(ni, ci, oy, ox);
                            let gx_idx = gx.idx(ni, ci, oy, ox);
                            let mut acc = 0.0;
                            for ky in 0..g.kh {
                                let i = (oy * g.stride + ky) as isize - g.ph as isize;
                                if i < 0 || i >= g.oh as isize {
                                    continue;
                                }
                                for kx in 0..g.kw {
                                    let j = (ox * g.stride + kx) as isize - g.pw as isize;
                                    if j < 0 || j >= g.ow as isize {
                                        continue;
                                    }
                                    let go = out_grad.at(ni, co, i as usize, j as usize);
                                    let wv = w.at(ci, co, ky, kx);
                                    acc += go * wv;
                                    let gw_idx = gw.idx(ci, co, ky, kx);
                                    gw.data_mut()[gw_idx] += xv * go;
                                }
                            }
                            gx.data_mut()[gx_idx] += acc;
                        }
                    }
                }
            }
        }
        vec![gx, gw, gb]
    }
}

/// Transposed (fractionally strided) convolution: the adjoint of a
/// same-padded strided convolution, used for learned upsampling.
///
/// `x: (n, c_in, h, w)`, `w: (c_in, c_out, kh, kw)` (odd kernels),
/// `b: (1, c_out, 1, 1)`. Output is `(n, c_out, stride * h, stride * w)`;
/// a zero input yields pure bias.
pub fn conv_transpose2d(tape: &mut Tape, x: Vid, w: Vid, b: Vid, stride: usize) -> Result<Vid> {
    let geom = transpose_geometry(tape.value(x), tape.value(w), tape.value(b), stride)?;
    let (xv, wv, bv) = (tape.value(x), tape.value(w), tape.value(b));
    let g = &geom;
    let mut out = Tensor4::zeros([xv.n(), g.co, g.oh, g.ow])?;
    for ni in 0..xv.n() {
        for ci in 0..g.ci {
            for co in 0..g.co {
                for oy in 0..g.h {
                    for ox in 0..g.w {
                        let xval = xv.at(ni, ci, oy, ox);
                        if xval == 0.0 {
                            continue;
                        }
                        for ky in 0..g.kh {
                            let i = (oy * g.stride + ky) as isize - g.ph as isize;
                            if i < 0 || i >= g.oh as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let j = (ox * g.stride + kx) as isize - g.pw as isize;
                                if j < 0 || j >= g.ow as isize {
                                    continue;
                                }
                                let idx = out.idx(ni, co, i as usize, j as usize);
                                out.data_mut()[idx] += xval * wv.at(ci, co, ky, kx);
                            }
                        }
                    }
                }
            }
        }
        for co in 0..g.co {
            let bias = bv.data()[co];
            if bias != 0.0 {
                let s = out.idx(ni, co, 0, 0);
                for v in &mut out.data_mut()[s..s + g.oh * g.ow] {
                    *v += bias;
                }
            }
        }
    }
    Ok(tape.push_node(vec![x, w, b], out, Box::new(ConvTranspose2dRule { geom })))
}
