//! Convolutions via im2col + GEMM.
//!
//! The three 1-D kernels (forward, input gradient, weight gradient) are shared
//! between `conv1d` and `conv_transpose1d`; the latter is literally the input
//! gradient of the former, which keeps the two exact adjoints.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::linalg::matmul;
use crate::ops::{reflect_index, PadMode};
use crate::tensor::{BackwardOp, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub mode: PadMode,
}

impl Default for Conv1dOpts {
    fn default() -> Self {
        Conv1dOpts {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
            mode: PadMode::Zeros,
        }
    }
}

impl Conv1dOpts {
    /// Stride-1 "same" convolution for an odd kernel.
    pub fn same(kernel: usize, dilation: usize, mode: PadMode) -> Self {
        Conv1dOpts {
            padding: dilation * (kernel - 1) / 2,
            dilation,
            mode,
            ..Default::default()
        }
    }
}

/// 2-D convolution geometry as (height, width) pairs; zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Conv2dOpts {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LvcOpts {
    pub kernel_size: usize,
    pub dilation: usize,
}

pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = len + 2 * pad;
    (padded >= span).then(|| (padded - span) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geom1d {
    batch: usize,
    cin: usize,
    cout: usize,
    k: usize,
    t_in: usize,
    t_out: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    groups: usize,
    mode: PadMode,
}

impl Geom1d {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn col_rows(&self) -> usize {
        self.cin_g() * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    #[inline]
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        let pos = (t * self.stride + k * self.dil) as isize - self.pad as isize;
        if pos >= 0 && (pos as usize) < self.t_in {
            Some(pos as usize)
        } else {
            match self.mode {
                PadMode::Zeros => None,
                PadMode::Reflect => Some(reflect_index(pos, self.t_in)),
            }
        }
    }

    /// `x_b` is one batch item `[cin, t_in]`; fills `col` `[cin_g*k, t_out]`.
    fn im2col<F: Element>(&self, x_b: &[F], group: usize, col: &mut [F]) {
        let cin_g = self.cin_g();
        for c in 0..cin_g {
            let row = &x_b[(group * cin_g + c) * self.t_in..][..self.t_in];
            for k in 0..self.k {
                let dst = &mut col[(c * self.k + k) * self.t_out..][..self.t_out];
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = match self.source(t, k) {
                        Some(p) => row[p],
                        None => F::zero(),
                    };
                }
            }
        }
    }

    fn col2im<F: Element>(&self, col: &[F], group: usize, gx_b: &mut [F]) {
        let cin_g = self.cin_g();
        for c in 0..cin_g {
            let row = &mut gx_b[(group * cin_g + c) * self.t_in..][..self.t_in];
            for k in 0..self.k {
                let src = &col[(c * self.k + k) * self.t_out..][..self.t_out];
                for (t, &v) in src.iter().enumerate() {
                    if let Some(p) = self.source(t, k) {
                        row[p] = row[p] + v;
                    }
                }
            }
        }
    }

    fn forward<F: Element>(&self, x: &[F], w: &[F]) -> Vec<F> {
        let (cin_g, cout_g, rows) = (self.cin_g(), self.cout_g(), self.col_rows());
        let mut y = vec![F::zero(); self.batch * self.cout * self.t_out];
        let mut col = vec![F::zero(); if self.is_pointwise() { 0 } else { rows * self.t_out }];
        for b in 0..self.batch {
            let x_b = &x[b * self.cin * self.t_in..][..self.cin * self.t_in];
            for g in 0..self.groups {
                let w_g = &w[g * cout_g * rows..][..cout_g * rows];
                let y_g = &mut y[(b * self.cout + g * cout_g) * self.t_out..][..cout_g * self.t_out];
                if self.is_pointwise() {
                    let x_g = &x_b[g * cin_g * self.t_in..][..cin_g * self.t_in];
                    matmul(cout_g, rows, self.t_out, w_g, false, x_g, false, y_g, false);
                } else {
                    self.im2col(x_b, g, &mut col);
                    matmul(cout_g, rows, self.t_out, w_g, false, &col, false, y_g, false);
                }
            }
        }
        y
    }

    fn grad_input<F: Element>(&self, gy: &[F], w: &[F]) -> Vec<F> {
        let (cin_g, cout_g, rows) = (self.cin_g(), self.cout_g(), self.col_rows());
        let mut gx = vec![F::zero(); self.batch * self.cin * self.t_in];
        let mut col = vec![F::zero(); rows * self.t_out];
        for b in 0..self.batch {
            let gx_b = &mut gx[b * self.cin * self.t_in..][..self.cin * self.t_in];
            for g in 0..self.groups {
                let w_g = &w[g * cout_g * rows..][..cout_g * rows];
                let gy_g = &gy[(b * self.cout + g * cout_g) * self.t_out..][..cout_g * self.t_out];
                if self.is_pointwise() {
                    let gx_g = &mut gx_b[g * cin_g * self.t_in..][..cin_g * self.t_in];
                    matmul(rows, cout_g, self.t_out, w_g, true, gy_g, false, gx_g, false);
                } else {
                    matmul(rows, cout_g, self.t_out, w_g, true, gy_g, false, &mut col, false);
                    self.col2im(&col, g, gx_b);
                }
            }
        }
        gx
    }

    fn grad_weight<F: Element>(&self, x: &[F], gy: &[F]) -> Vec<F> {
        let (cin_g, cout_g, rows) = (self.cin_g(), self.cout_g(), self.col_rows());
        let mut gw = vec![F::zero(); self.cout * rows];
        let mut col = vec![F::zero(); if self.is_pointwise() { 0 } else { rows * self.t_out }];
        for b in 0..self.batch {
            let x_b = &x[b * self.cin * self.t_in..][..self.cin * self.t_in];
            for g in 0..self.groups {
                let gw_g = &mut gw[g * cout_g * rows..][..cout_g * rows];
                let gy_g = &gy[(b * self.cout + g * cout_g) * self.t_out..][..cout_g * self.t_out];
                if self.is_pointwise() {
                    let x_g = &x_b[g * cin_g * self.t_in..][..cin_g * self.t_in];
                    matmul(cout_g, self.t_out, rows, gy_g, false, x_g, true, gw_g, true);
                } else {
                    self.im2col(x_b, g, &mut col);
                    matmul(cout_g, self.t_out, rows, gy_g, false, &col, true, gw_g, true);
                }
            }
        }
        gw
    }
}

struct Conv1dBack {
    geom: Geom1d,
}

impl<F: Element> BackwardOp<F> for Conv1dBack {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        vec![
            x.requires_grad().then(|| self.geom.grad_input(grad, w.data())),
            w.requires_grad().then(|| self.geom.grad_weight(x.data(), grad)),
        ]
    }
}

struct ConvTranspose1dBack {
    // Geometry of the conv1d this is the adjoint of (its input is our output).
    geom: Geom1d,
}

impl<F: Element> BackwardOp<F> for ConvTranspose1dBack {
    fn name(&self) -> &'static str {
        "conv_transpose1d"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        vec![
            x.requires_grad().then(|| self.geom.forward(grad, w.data())),
            w.requires_grad().then(|| self.geom.grad_weight(grad, x.data())),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom2d {
    batch: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    opts: Conv2dOpts,
}

impl Geom2d {
    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input row of output row `oy` under kernel row `ky`, if inside.
    #[inline]
    fn src_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let y = (oy * self.opts.stride.0 + ky * self.opts.dilation.0) as isize - self.opts.padding.0 as isize;
        (y >= 0 && (y as usize) < self.h).then_some(y as usize)
    }

    /// Output columns `[lo, hi)` whose input column under kernel column
    /// `kx` lies inside, and the input column of `lo`.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize, usize) {
        let (sw, pw, dw) = (self.opts.stride.1, self.opts.padding.1, self.opts.dilation.1);
        let off = kx * dw;
        // x = ox*sw + off - pw must satisfy 0 <= x < w.
        let lo = if off >= pw { 0 } else { (pw - off).div_ceil(sw) };
        let hi = if self.w + pw > off { ((self.w + pw - off - 1) / sw + 1).min(self.ow) } else { 0 };
        let lo = lo.min(hi);
        (lo, hi, (lo * sw + off).saturating_sub(pw))
    }

    fn im2col<F: Element>(&self, x_b: &[F], col: &mut [F]) {
        let plane = self.h * self.w;
        let n = self.cols();
        let sw = self.opts.stride.1;
        for c in 0..self.cin {
            let src = &x_b[c * plane..][..plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut col[((c * self.kh + ky) * self.kw + kx) * n..][..n];
                    let (lo, hi, x0) = self.col_range(kx);
                    for oy in 0..self.oh {
                        let d = &mut dst[oy * self.ow..][..self.ow];
                        match self.src_row(oy, ky) {
                            None => d.fill(F::zero()),
                            Some(y) => {
                                d[..lo].fill(F::zero());
                                d[hi..].fill(F::zero());
                                let row = &src[y * self.w..][..self.w];
                                for (i, v) in d[lo..hi].iter_mut().enumerate() {
                                    *v = row[x0 + i * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<F: Element>(&self, col: &[F], gx_b: &mut [F]) {
        let plane = self.h * self.w;
        let n = self.cols();
        let sw = self.opts.stride.1;
        for c in 0..self.cin {
            let dst = &mut gx_b[c * plane..][..plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &col[((c * self.kh + ky) * self.kw + kx) * n..][..n];
                    let (lo, hi, x0) = self.col_range(kx);
                    for oy in 0..self.oh {
                        if let Some(y) = self.src_row(oy, ky) {
                            let row = &mut dst[y * self.w..][..self.w];
                            for (i, &v) in src[oy * self.ow + lo..oy * self.ow + hi].iter().enumerate() {
                                let p = x0 + i * sw;
                                row[p] = row[p] + v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward<F: Element>(&self, x: &[F], w: &[F]) -> Vec<F> {
        let (rows, n) = (self.col_rows(), self.cols());
        let mut y = vec![F::zero(); self.batch * self.cout * n];
        let mut col = vec![F::zero(); rows * n];
        let in_sz = self.cin * self.h * self.w;
        for b in 0..self.batch {
            self.im2col(&x[b * in_sz..][..in_sz], &mut col);
            matmul(self.cout, rows, n, w, false, &col, false, &mut y[b * self.cout * n..][..self.cout * n], false);
        }
        y
    }

    fn grad_input<F: Element>(&self, gy: &[F], w: &[F]) -> Vec<F> {
        let (rows, n) = (self.col_rows(), self.cols());
        let in_sz = self.cin * self.h * self.w;
        let mut gx = vec![F::zero(); self.batch * in_sz];
        let mut col = vec![F::zero(); rows * n];
        for b in 0..self.batch {
            matmul(rows, self.cout, n, w, true, &gy[b * self.cout * n..][..self.cout * n], false, &mut col, false);
            self.col2im(&col, &mut gx[b * in_sz..][..in_sz]);
        }
        gx
    }

    fn grad_weight<F: Element>(&self, x: &[F], gy: &[F]) -> Vec<F> {
        let (rows, n) = (self.col_rows(), self.cols());
        let in_sz = self.cin * self.h * self.w;
        let mut gw = vec![F::zero(); self.cout * rows];
        let mut col = vec![F::zero(); rows * n];
        for b in 0..self.batch {
            self.im2col(&x[b * in_sz..][..in_sz], &mut col);
            matmul(self.cout, n, rows, &gy[b * self.cout * n..][..self.cout * n], false, &col, true, &mut gw, true);
        }
        gw
    }
}

struct Conv2dBack {
    geom: Geom2d,
}

impl<F: Element> BackwardOp<F> for Conv2dBack {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        vec![
            x.requires_grad().then(|| self.geom.grad_input(grad, w.data())),
            w.requires_grad().then(|| self.geom.grad_weight(x.data(), grad)),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct LvcGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    k: usize,
    dil: usize,
    frames: usize,
    hop: usize,
}

impl LvcGeom {
    fn t(&self) -> usize {
        self.frames * self.hop
    }

    fn pad(&self) -> usize {
        self.dil * (self.k - 1) / 2
    }

    fn rows(&self) -> usize {
        self.cin * self.k
    }

    #[inline]
    fn source(&self, frame: usize, t: usize, k: usize) -> Option<usize> {
        let pos = (frame * self.hop + t + k * self.dil) as isize - self.pad() as isize;
        (pos >= 0 && (pos as usize) < self.t()).then_some(pos as usize)
    }

    fn im2col<F: Element>(&self, x_b: &[F], frame: usize, col: &mut [F]) {
        let t_all = self.t();
        for c in 0..self.cin {
            let row = &x_b[c * t_all..][..t_all];
            for k in 0..self.k {
                let dst = &mut col[(c * self.k + k) * self.hop..][..self.hop];
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = match self.source(frame, t, k) {
                        Some(p) => row[p],
                        None => F::zero(),
                    };
                }
            }
        }
    }

    fn col2im<F: Element>(&self, col: &[F], frame: usize, gx_b: &mut [F]) {
        let t_all = self.t();
        for c in 0..self.cin {
            let row = &mut gx_b[c * t_all..][..t_all];
            for k in 0..self.k {
                let src = &col[(c * self.k + k) * self.hop..][..self.hop];
                for (t, &v) in src.iter().enumerate() {
                    if let Some(p) = self.source(frame, t, k) {
                        row[p] = row[p] + v;
                    }
                }
            }
        }
    }

    /// Copies the kernel of `frame` out of `[cout*cin*k, frames]` into a
    /// contiguous `[cout, cin*k]` matrix.
    fn gather_kernel<F: Element>(&self, kern_b: &[F], frame: usize, out: &mut [F]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = kern_b[i * self.frames + frame];
        }
    }

    fn forward<F: Element>(&self, x: &[F], kern: &[F], bias: &[F]) -> Vec<F> {
        let (t_all, rows) = (self.t(), self.rows());
        let kern_sz = self.cout * rows * self.frames;
        let mut y = vec![F::zero(); self.batch * self.cout * t_all];
        let mut col = vec![F::zero(); rows * self.hop];
        let mut kmat = vec![F::zero(); self.cout * rows];
        let mut seg = vec![F::zero(); self.cout * self.hop];
        for b in 0..self.batch {
            let x_b = &x[b * self.cin * t_all..][..self.cin * t_all];
            let k_b = &kern[b * kern_sz..][..kern_sz];
            for f in 0..self.frames {
                self.im2col(x_b, f, &mut col);
                self.gather_kernel(k_b, f, &mut kmat);
                matmul(self.cout, rows, self.hop, &kmat, false, &col, false, &mut seg, false);
                for o in 0..self.cout {
                    let bv = bias[(b * self.cout + o) * self.frames + f];
                    let dst = &mut y[(b * self.cout + o) * t_all + f * self.hop..][..self.hop];
                    for (d, &s) in dst.iter_mut().zip(&seg[o * self.hop..][..self.hop]) {
                        *d = s + bv;
                    }
                }
            }
        }
        y
    }
}

struct LvcBack {
    geom: LvcGeom,
}

impl<F: Element> BackwardOp<F> for LvcBack {
    fn name(&self) -> &'static str {
        "lvc_conv"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let g = &self.geom;
        let (x, kern, bias) = (&inputs[0], &inputs[1], &inputs[2]);
        let (t_all, rows) = (g.t(), g.rows());
        let kern_sz = g.cout * rows * g.frames;
        let want_x = x.requires_grad();
        let want_k = kern.requires_grad();
        let mut gx = want_x.then(|| vec![F::zero(); x.numel()]);
        let mut gk = want_k.then(|| vec![F::zero(); kern.numel()]);
        let gb = bias.requires_grad().then(|| {
            let mut gb = vec![F::zero(); bias.numel()];
            for b in 0..g.batch {
                for o in 0..g.cout {
                    let row = &grad[(b * g.cout + o) * t_all..][..t_all];
                    for f in 0..g.frames {
                        gb[(b * g.cout + o) * g.frames + f] = row[f * g.hop..][..g.hop].iter().copied().sum();
                    }
                }
            }
            gb
        });
        if want_x || want_k {
            let mut col = vec![F::zero(); rows * g.hop];
            let mut kmat = vec![F::zero(); g.cout * rows];
            let mut gseg = vec![F::zero(); g.cout * g.hop];
            let mut gmat = vec![F::zero(); g.cout * rows];
            for b in 0..g.batch {
                let x_b = &x.data()[b * g.cin * t_all..][..g.cin * t_all];
                let k_b = &kern.data()[b * kern_sz..][..kern_sz];
                for f in 0..g.frames {
                    for o in 0..g.cout {
                        gseg[o * g.hop..][..g.hop]
                            .copy_from_slice(&grad[(b * g.cout + o) * t_all + f * g.hop..][..g.hop]);
                    }
                    if let Some(gk) = gk.as_mut() {
                        g.im2col(x_b, f, &mut col);
                        matmul(g.cout, g.hop, rows, &gseg, false, &col, true, &mut gmat, false);
                        let gk_b = &mut gk[b * kern_sz..][..kern_sz];
                        for (i, &v) in gmat.iter().enumerate() {
                            gk_b[i * g.frames + f] = v;
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        g.gather_kernel(k_b, f, &mut kmat);
                        matmul(rows, g.cout, g.hop, &kmat, true, &gseg, false, &mut col, false);
                        g.col2im(&col, f, &mut gx[b * g.cin * t_all..][..g.cin * t_all]);
                    }
                }
            }
        }
        vec![gx, gk, gb]
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<F: Element> Tensor<F> {
    /// `self` `[B, C_in, T]`, `weight` `[C_out, C_in/groups, K]`.
    pub fn conv1d(&self, weight: &Tensor<F>, opts: Conv1dOpts) -> Result<Tensor<F>> {
        if self.rank() != 3 || weight.rank() != 3 {
            return Err(shape_err("conv1d", self.shape(), weight.shape()));
        }
        let (batch, cin, t_in) = (self.dim(0), self.dim(1), self.dim(2));
        let (cout, cin_g, k) = (weight.dim(0), weight.dim(1), weight.dim(2));
        if opts.groups == 0 || opts.stride == 0 || opts.dilation == 0 || k == 0 {
            return Err(TensorError::config("conv1d", "groups, stride, dilation and kernel must be >= 1"));
        }
        if cin % opts.groups != 0 || cout % opts.groups != 0 || cin / opts.groups != cin_g {
            return Err(shape_err("conv1d", self.shape(), weight.shape()));
        }
        if opts.mode == PadMode::Reflect && t_in == 0 {
            return Err(TensorError::config("conv1d", "reflect padding of an empty signal"));
        }
        let t_out = conv_out_len(t_in, k, opts.stride, opts.padding, opts.dilation).ok_or_else(|| {
            TensorError::config(
                "conv1d",
                format!("input length {t_in} shorter than the kernel span (input {:?}, weight {:?})", self.shape(), weight.shape()),
            )
        })?;
        let geom = Geom1d {
            batch,
            cin,
            cout,
            k,
            t_in,
            t_out,
            stride: opts.stride,
            pad: opts.padding,
            dil: opts.dilation,
            groups: opts.groups,
            mode: opts.mode,
        };
        let y = geom.forward(self.data(), weight.data());
        Ok(Tensor::from_op(vec![batch, cout, t_out], y, vec![self.clone(), weight.clone()], Conv1dBack { geom }))
    }

    /// `self` `[B, C_in, T]`, `weight` `[C_in, C_out, K]`; output length
    /// `(T - 1) * stride - 2 * padding + K`.
    pub fn conv_transpose1d(&self, weight: &Tensor<F>, stride: usize, padding: usize) -> Result<Tensor<F>> {
        if self.rank() != 3 || weight.rank() != 3 || weight.dim(0) != self.dim(1) {
            return Err(shape_err("conv_transpose1d", self.shape(), weight.shape()));
        }
        if stride == 0 {
            return Err(TensorError::config("conv_transpose1d", "stride must be >= 1"));
        }
        let (batch, cin, t) = (self.dim(0), self.dim(1), self.dim(2));
        let (cout, k) = (weight.dim(1), weight.dim(2));
        let full = (t.saturating_sub(1)) * stride + k;
        if t == 0 || full <= 2 * padding {
            return Err(TensorError::config("conv_transpose1d", format!("padding {padding} consumes the whole output")));
        }
        let t_out = full - 2 * padding;
        let geom = Geom1d {
            batch,
            cin: cout,
            cout: cin,
            k,
            t_in: t_out,
            t_out: t,
            stride,
            pad: padding,
            dil: 1,
            groups: 1,
            mode: PadMode::Zeros,
        };
        let y = geom.grad_input(self.data(), weight.data());
        Ok(Tensor::from_op(
            vec![batch, cout, t_out],
            y,
            vec![self.clone(), weight.clone()],
            ConvTranspose1dBack { geom },
        ))
    }

    /// `self` `[B, C_in, H, W]`, `weight` `[C_out, C_in, KH, KW]`.
    pub fn conv2d(&self, weight: &Tensor<F>, opts: Conv2dOpts) -> Result<Tensor<F>> {
        if self.rank() != 4 || weight.rank() != 4 || weight.dim(1) != self.dim(1) {
            return Err(shape_err("conv2d", self.shape(), weight.shape()));
        }
        let (batch, cin, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (cout, kh, kw) = (weight.dim(0), weight.dim(2), weight.dim(3));
        if opts.stride.0 == 0 || opts.stride.1 == 0 || opts.dilation.0 == 0 || opts.dilation.1 == 0 || kh == 0 || kw == 0 {
            return Err(TensorError::config("conv2d", "stride, dilation and kernel must be >= 1"));
        }
        let oh = conv_out_len(h, kh, opts.stride.0, opts.padding.0, opts.dilation.0);
        let ow = conv_out_len(w, kw, opts.stride.1, opts.padding.1, opts.dilation.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(TensorError::config(
                "conv2d",
                format!("input {:?} smaller than kernel span {:?}", self.shape(), weight.shape()),
            ));
        };
        let geom = Geom2d {
            batch,
            cin,
            cout,
            kh,
            kw,
            h,
            w,
            oh,
            ow,
            opts,
        };
        let y = geom.forward(self.data(), weight.data());
        Ok(Tensor::from_op(vec![batch, cout, oh, ow], y, vec![self.clone(), weight.clone()], Conv2dBack { geom }))
    }

    /// Location-variable convolution.
    ///
    /// `self` is `[B, C_in, F * L]`; `kernels` `[B, C_out * C_in * K, F]`
    /// holds one `[C_out, C_in, K]` kernel per conditioning frame and `bias`
    /// `[B, C_out, F]` one bias vector per frame. Output sample `t` of frame
    /// `f` is convolved with frame `f`'s kernel; neighbouring frames supply
    /// the kernel context and the signal edges are zero padded.
    pub fn lvc(&self, kernels: &Tensor<F>, bias: &Tensor<F>, opts: LvcOpts) -> Result<Tensor<F>> {
        if self.rank() != 3 || kernels.rank() != 3 || bias.rank() != 3 {
            return Err(shape_err("lvc_conv", self.shape(), kernels.shape()));
        }
        let (batch, cin, t) = (self.dim(0), self.dim(1), self.dim(2));
        let (cout, frames) = (bias.dim(1), bias.dim(2));
        let k = opts.kernel_size;
        if k == 0 || k.is_multiple_of(2) || opts.dilation == 0 {
            return Err(TensorError::config("lvc_conv", "kernel size must be odd and dilation >= 1"));
        }
        if kernels.dim(0) != batch || bias.dim(0) != batch || kernels.dim(1) != cout * cin * k || kernels.dim(2) != frames {
            return Err(shape_err("lvc_conv", kernels.shape(), bias.shape()));
        }
        if frames == 0 || t % frames != 0 {
            return Err(TensorError::config(
                "lvc_conv",
                format!("signal length {t} is not a multiple of the {frames} conditioning frames"),
            ));
        }
        let geom = LvcGeom {
            batch,
            cin,
            cout,
            k,
            dil: opts.dilation,
            frames,
            hop: t / frames,
        };
        let y = geom.forward(self.data(), kernels.data(), bias.data());
        Ok(Tensor::from_op(
            vec![batch, cout, t],
            y,
            vec![self.clone(), kernels.clone(), bias.clone()],
            LvcBack { geom },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Direct definition used as the oracle.
    fn naive_conv1d(x: &[f64], shape: [usize; 3], w: &[f64], wshape: [usize; 3], o: Conv1dOpts) -> Vec<f64> {
        let [b, cin, tin] = shape;
        let [cout, cin_g, k] = wshape;
        let tout = conv_out_len(tin, k, o.stride, o.padding, o.dilation).unwrap();
        let cout_g = cout / o.groups;
        let mut y = vec![0.0; b * cout * tout];
        for bi in 0..b {
            for oc in 0..cout {
                let g = oc / cout_g;
                for tt in 0..tout {
                    let mut acc = 0.0;
                    for ic in 0..cin_g {
                        for kk in 0..k {
                            let pos = (tt * o.stride + kk * o.dilation) as isize - o.padding as isize;
                            let v = if pos >= 0 && (pos as usize) < tin {
                                x[(bi * cin + g * cin_g + ic) * tin + pos as usize]
                            } else if o.mode == PadMode::Reflect {
                                x[(bi * cin + g * cin_g + ic) * tin + reflect_index(pos, tin)]
                            } else {
                                0.0
                            };
                            acc += w[(oc * cin_g + ic) * k + kk] * v;
                        }
                    }
                    y[(bi * cout + oc) * tout + tt] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn pointwise_kernel_scales() {
        let y = t(&[1, 1, 3], &[1., 2., 3.]).conv1d(&t(&[1, 1, 1], &[2.]), Conv1dOpts::default()).unwrap();
        assert_eq!(y.data(), &[2., 4., 6.]);
    }

    #[test]
    fn strided_box_kernel() {
        let opts = Conv1dOpts {
            stride: 2,
            ..Default::default()
        };
        let y = t(&[1, 1, 4], &[1.; 4]).conv1d(&t(&[1, 1, 2], &[1., 1.]), opts).unwrap();
        assert_eq!(y.data(), &[2., 2.]);
    }

    #[test]
    fn zero_weight_gives_zero_output() {
        let x = t(&[2, 2, 9], &lcg(36, 3));
        let y = x.conv1d(&Tensor::zeros(&[4, 2, 3]), Conv1dOpts::same(3, 2, PadMode::Reflect)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_definition() {
        for (groups, stride, pad, dil, mode) in [
            (1, 1, 2, 1, PadMode::Zeros),
            (2, 2, 3, 2, PadMode::Reflect),
            (4, 3, 0, 1, PadMode::Zeros),
            (1, 1, 5, 3, PadMode::Reflect),
        ] {
            let opts = Conv1dOpts {
                stride,
                padding: pad,
                dilation: dil,
                groups,
                mode,
            };
            let (b, cin, tin, cout, k) = (2, 4, 11, 8, 3);
            let x = lcg(b * cin * tin, 1);
            let w = lcg(cout * (cin / groups) * k, 2);
            let y = t(&[b, cin, tin], &x)
                .conv1d(&t(&[cout, cin / groups, k], &w), opts)
                .unwrap();
            let want = naive_conv1d(&x, [b, cin, tin], &w, [cout, cin / groups, k], opts);
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{opts:?}");
            }
        }
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let err = t(&[1, 3, 5], &[0.; 15]).conv1d(&t(&[1, 2, 1], &[0.; 2]), Conv1dOpts::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 5]") && msg.contains("[1, 2, 1]"), "{msg}");
    }

    #[test]
    fn transpose_conv_examples() {
        let y = t(&[1, 1, 2], &[1., 1.]).conv_transpose1d(&t(&[1, 1, 2], &[1., 1.]), 2, 0).unwrap();
        assert_eq!(y.data(), &[1., 1., 1., 1.]);
        let x = t(&[1, 1, 5], &[1., -2., 3., 0.5, 4.]);
        let id = x.conv_transpose1d(&t(&[1, 1, 1], &[1.]), 1, 0).unwrap();
        assert_eq!(id.data(), x.data());
        let z = Tensor::<f64>::zeros(&[1, 2, 4]).conv_transpose1d(&t(&[2, 3, 4], &lcg(24, 5)), 2, 1).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert_eq!(z.shape(), &[1, 3, 8]);
    }

    #[test]
    fn conv2d_examples() {
        let y = Tensor::<f64>::ones(&[1, 1, 2, 2]).conv2d(&t(&[1, 1, 1, 1], &[3.]), Conv2dOpts::default()).unwrap();
        assert_eq!(y.data(), &[3.; 4]);
        let y = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]).conv2d(&t(&[1, 1, 2, 2], &[0.25; 4]), Conv2dOpts::default()).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let y = t(&[1, 2, 5, 6], &lcg(60, 9))
            .conv2d(
                &Tensor::zeros(&[3, 2, 3, 3]),
                Conv2dOpts {
                    padding: (1, 1),
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lvc_with_shared_kernel_equals_conv1d() {
        let (b, cin, cout, k, frames, hop) = (2, 3, 4, 3, 5, 6);
        let x = t(&[b, cin, frames * hop], &lcg(b * cin * frames * hop, 11));
        let w = lcg(cout * cin * k, 12);
        let mut kern = vec![0.0; b * cout * cin * k * frames];
        for bi in 0..b {
            for i in 0..cout * cin * k {
                for f in 0..frames {
                    kern[(bi * cout * cin * k + i) * frames + f] = w[i];
                }
            }
        }
        let y = x
            .lvc(
                &t(&[b, cout * cin * k, frames], &kern),
                &Tensor::zeros(&[b, cout, frames]),
                LvcOpts { kernel_size: k, dilation: 2 },
            )
            .unwrap();
        let want = x
            .conv1d(&t(&[cout, cin, k], &w), Conv1dOpts::same(k, 2, PadMode::Zeros))
            .unwrap();
        for (a, e) in y.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn lvc_rejects_misaligned_segments() {
        let x = Tensor::<f64>::zeros(&[1, 1, 7]);
        let err = x
            .lvc(&Tensor::zeros(&[1, 3, 2]), &Tensor::zeros(&[1, 1, 2]), LvcOpts { kernel_size: 3, dilation: 1 })
            .unwrap_err();
        assert!(matches!(err, TensorError::Config { .. }));
    }
}
