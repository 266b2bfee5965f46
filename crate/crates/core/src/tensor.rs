//! Dense row-major `f32` tensors and the raw numeric kernels behind the
//! differentiable operations in [`crate::autograd`].

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected a rank-4 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Element `[n, c, y, x]` of a rank-4 tensor.
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let (_, ch, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * ch + c) * h + y) * w + x]
    }

    /// Slice `[start, start + len)` along the batch axis.
    pub fn batch_slice(&self, start: usize, len: usize) -> Result<Tensor> {
        let n = *self.shape.first().ok_or_else(|| Error::shape("scalar has no batch axis"))?;
        if start + len > n {
            return Err(Error::shape(format!(
                "batch slice {}..{} out of range for {}",
                start,
                start + len,
                n
            )));
        }
        let per = self.numel() / n.max(1);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::new(shape, self.data[start * per..(start + len) * per].to_vec())
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            first.expect_same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    /// Concatenate rank-4 tensors along the batch axis.
    pub fn cat_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::shape("cannot concatenate zero tensors"))?;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::shape(format!(
                    "batch concat of {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Tensor::new(shape, data)
    }
}

/// Raw kernels. All image tensors are NCHW; convolutions are stride-1
/// cross-correlations with symmetric zero padding.
pub mod kernels {
    use super::Tensor;
    use crate::error::{Error, Result};

    fn conv_out_extent(input: usize, kernel: usize, padding: usize) -> Result<usize> {
        let padded = input + 2 * padding;
        if padded < kernel {
            return Err(Error::shape(format!(
                "kernel {} larger than padded extent {}",
                kernel, padded
            )));
        }
        Ok(padded - kernel + 1)
    }

    struct Geometry {
        c_in: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        pad: usize,
        oh: usize,
        ow: usize,
    }

    impl Geometry {
        fn is_pointwise(&self) -> bool {
            self.kh == 1 && self.kw == 1 && self.pad == 0
        }

        fn col_rows(&self) -> usize {
            self.c_in * self.kh * self.kw
        }

        fn col_cols(&self) -> usize {
            self.oh * self.ow
        }
    }

    fn im2col(src: &[f32], g: &Geometry, col: &mut [f32]) {
        let cols = g.col_cols();
        for c in 0..g.c_in {
            let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = (c * g.kh + ky) * g.kw + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..g.oh {
                        let iy = oy as isize + ky as isize - g.pad as isize;
                        let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        if iy < 0 || iy >= g.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize + kx as isize - g.pad as isize;
                            *v = if ix < 0 || ix >= g.w as isize {
                                0.0
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(col: &[f32], g: &Geometry, dst: &mut [f32]) {
        let cols = g.col_cols();
        for c in 0..g.c_in {
            let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = (c * g.kh + ky) * g.kw + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..g.oh {
                        let iy = oy as isize + ky as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.ow {
                            let ix = ox as isize + kx as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// `c = a · b` (optionally accumulating) with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        (rsa, csa): (isize, isize),
        b: &[f32],
        (rsb, csb): (isize, isize),
        beta: f32,
        c: &mut [f32],
    ) {
        debug_assert!(c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            if beta == 0.0 {
                c[..m * n].fill(0.0);
            }
            return;
        }
        // SAFETY: every index touched by sgemm is within the slices given the
        // strides above; lengths are checked by the callers' shape logic.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn geometry(
        input_shape: &[usize],
        weight_shape: &[usize],
        padding: usize,
    ) -> Result<(usize, usize, Geometry)> {
        let (n, c_in, h, w) = match input_shape {
            &[n, c, h, w] => (n, c, h, w),
            s => return Err(Error::shape(format!("conv input must be NCHW, got {:?}", s))),
        };
        let (c_out, wc_in, kh, kw) = match weight_shape {
            &[o, i, kh, kw] => (o, i, kh, kw),
            s => return Err(Error::shape(format!("conv weight must be OIHW, got {:?}", s))),
        };
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                wc_in, c_in
            )));
        }
        let oh = conv_out_extent(h, kh, padding)?;
        let ow = conv_out_extent(w, kw, padding)?;
        if oh == 0 || ow == 0 {
            return Err(Error::shape("empty spatial extent after padding"));
        }
        Ok((
            n,
            c_out,
            Geometry {
                c_in,
                h,
                w,
                kh,
                kw,
                pad: padding,
                oh,
                ow,
            },
        ))
    }

    /// Stride-1 cross-correlation. Each batch element is computed
    /// independently so results never depend on batch composition.
    pub fn conv2d(input: &Tensor, weight: &Tensor, padding: usize) -> Result<Tensor> {
        let (n, c_out, g) = geometry(input.shape(), weight.shape(), padding)?;
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let in_per = g.c_in * g.h * g.w;
        let out_per = c_out * cols;
        let mut out = vec![0.0f32; n * out_per];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; rows * cols] };
        for b in 0..n {
            let src = &input.data()[b * in_per..(b + 1) * in_per];
            let col_ref: &[f32] = if g.is_pointwise() {
                src
            } else {
                im2col(src, &g, &mut col);
                &col
            };
            gemm(
                c_out,
                rows,
                cols,
                weight.data(),
                (rows as isize, 1),
                col_ref,
                (cols as isize, 1),
                0.0,
                &mut out[b * out_per..(b + 1) * out_per],
            );
        }
        Tensor::new(vec![n, c_out, g.oh, g.ow], out)
    }

    /// Gradient of [`conv2d`] with respect to its input (a transposed
    /// convolution of `grad_out` with `weight`).
    pub fn conv2d_input_grad(
        grad_out: &Tensor,
        weight: &Tensor,
        padding: usize,
        input_shape: &[usize],
    ) -> Result<Tensor> {
        let (n, c_out, g) = geometry(input_shape, weight.shape(), padding)?;
        if grad_out.shape() != [n, c_out, g.oh, g.ow] {
            return Err(Error::shape(format!(
                "conv grad {:?} does not match output [{}, {}, {}, {}]",
                grad_out.shape(),
                n,
                c_out,
                g.oh,
                g.ow
            )));
        }
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let in_per = g.c_in * g.h * g.w;
        let out_per = c_out * cols;
        let mut dx = vec![0.0f32; n * in_per];
        let mut col = vec![0.0f32; rows * cols];
        for b in 0..n {
            let go = &grad_out.data()[b * out_per..(b + 1) * out_per];
            let dst = &mut dx[b * in_per..(b + 1) * in_per];
            if g.is_pointwise() {
                gemm(rows, c_out, cols, weight.data(), (1, rows as isize), go, (cols as isize, 1), 0.0, dst);
            } else {
                gemm(rows, c_out, cols, weight.data(), (1, rows as isize), go, (cols as isize, 1), 0.0, &mut col);
                col2im_add(&col, &g, dst);
            }
        }
        Tensor::new(input_shape.to_vec(), dx)
    }

    /// Gradient of [`conv2d`] with respect to its weight. Batch contributions
    /// are accumulated in ascending batch order.
    pub fn conv2d_weight_grad(
        input: &Tensor,
        grad_out: &Tensor,
        padding: usize,
        weight_shape: &[usize],
    ) -> Result<Tensor> {
        let (n, c_out, g) = geometry(input.shape(), weight_shape, padding)?;
        if grad_out.shape() != [n, c_out, g.oh, g.ow] {
            return Err(Error::shape(format!(
                "conv grad {:?} does not match output [{}, {}, {}, {}]",
                grad_out.shape(),
                n,
                c_out,
                g.oh,
                g.ow
            )));
        }
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let in_per = g.c_in * g.h * g.w;
        let out_per = c_out * cols;
        let mut dw = vec![0.0f32; c_out * rows];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; rows * cols] };
        for b in 0..n {
            let src = &input.data()[b * in_per..(b + 1) * in_per];
            let col_ref: &[f32] = if g.is_pointwise() {
                src
            } else {
                im2col(src, &g, &mut col);
                &col
            };
            let go = &grad_out.data()[b * out_per..(b + 1) * out_per];
            gemm(
                c_out,
                cols,
                rows,
                go,
                (cols as isize, 1),
                col_ref,
                (1, cols as isize),
                if b == 0 { 0.0 } else { 1.0 },
                &mut dw,
            );
        }
        Tensor::new(weight_shape.to_vec(), dw)
    }

    /// `[m, k] x [k, n]` matrix product.
    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = match a.shape() {
            &[m, k] => (m, k),
            s => return Err(Error::shape(format!("matmul lhs must be 2-D, got {:?}", s))),
        };
        let (k2, n) = match b.shape() {
            &[k, n] => (k, n),
            s => return Err(Error::shape(format!("matmul rhs must be 2-D, got {:?}", s))),
        };
        if k != k2 {
            return Err(Error::shape(format!("matmul inner extents {} vs {}", k, k2)));
        }
        let mut out = vec![0.0f32; m * n];
        gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), 0.0, &mut out);
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose2d(a: &Tensor) -> Result<Tensor> {
        let (m, n) = match a.shape() {
            &[m, n] => (m, n),
            s => return Err(Error::shape(format!("transpose needs 2-D, got {:?}", s))),
        };
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a.data()[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    /// Non-overlapping 2x2 mean pooling.
    pub fn downsample_avg2x(x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "downsampling needs even extents, got {}x{}",
                h, w
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    let s = src[2 * y * w + 2 * xx]
                        + src[2 * y * w + 2 * xx + 1]
                        + src[(2 * y + 1) * w + 2 * xx]
                        + src[(2 * y + 1) * w + 2 * xx + 1];
                    dst[y * ow + xx] = s * 0.25;
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    /// Per-pixel channel normalization `a / sqrt(mean_c(a^2) + eps)`.
    pub fn pixel_norm(x: &Tensor, eps: f32) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let mut out = x.data().to_vec();
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut ms = 0.0f32;
                for ch in 0..c {
                    let v = x.data()[base + ch * hw + p];
                    ms += v * v;
                }
                let inv = 1.0 / (ms / c as f32 + eps).sqrt();
                for ch in 0..c {
                    out[base + ch * hw + p] *= inv;
                }
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    /// Vector-Jacobian product of [`pixel_norm`].
    pub fn pixel_norm_backward(x: &Tensor, grad: &Tensor, eps: f32) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        x.expect_same_shape(grad)?;
        let hw = h * w;
        let cf = c as f32;
        let mut out = vec![0.0f32; x.numel()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut ms = 0.0f32;
                let mut dot = 0.0f32;
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    ms += x.data()[i] * x.data()[i];
                    dot += x.data()[i] * grad.data()[i];
                }
                let s = ms / cf + eps;
                let inv = 1.0 / s.sqrt();
                let k = dot * inv / (cf * s);
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    out[i] = grad.data()[i] * inv - x.data()[i] * k;
                }
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    /// Concatenate tensors shaped `[N, C_i, ...]` along axis 1.
    pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
        let first = xs.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        if first.rank() < 2 {
            return Err(Error::shape("concat needs rank >= 2"));
        }
        let n = first.shape()[0];
        let rest = &first.shape()[2..];
        let inner: usize = rest.iter().product();
        let mut total_c = 0;
        for x in xs {
            if x.rank() != first.rank() || x.shape()[0] != n || &x.shape()[2..] != rest {
                return Err(Error::shape(format!(
                    "cannot concatenate {:?} with {:?} along channels",
                    first.shape(),
                    x.shape()
                )));
            }
            total_c += x.shape()[1];
        }
        let mut out = Vec::with_capacity(n * total_c * inner);
        for b in 0..n {
            for x in xs {
                let per = x.shape()[1] * inner;
                out.extend_from_slice(&x.data()[b * per..(b + 1) * per]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[1] = total_c;
        Tensor::new(shape, out)
    }

    /// Channels `[offset, offset + len)` of a `[N, C, ...]` tensor.
    pub fn slice_channels(x: &Tensor, offset: usize, len: usize) -> Result<Tensor> {
        if x.rank() < 2 || offset + len > x.shape()[1] {
            return Err(Error::shape(format!(
                "channel slice {}..{} out of range for {:?}",
                offset,
                offset + len,
                x.shape()
            )));
        }
        let n = x.shape()[0];
        let c = x.shape()[1];
        let inner: usize = x.shape()[2..].iter().product();
        let mut out = Vec::with_capacity(n * len * inner);
        for b in 0..n {
            let start = (b * c + offset) * inner;
            out.extend_from_slice(&x.data()[start..start + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[1] = len;
        Tensor::new(shape, out)
    }

    /// Embed `x` at channel `offset` of a zero tensor with `total` channels.
    pub fn pad_channels(x: &Tensor, offset: usize, total: usize) -> Result<Tensor> {
        if x.rank() < 2 || offset + x.shape()[1] > total {
            return Err(Error::shape("channel padding out of range"));
        }
        let n = x.shape()[0];
        let c = x.shape()[1];
        let inner: usize = x.shape()[2..].iter().product();
        let mut out = vec![0.0f32; n * total * inner];
        for b in 0..n {
            let dst = (b * total + offset) * inner;
            out[dst..dst + c * inner].copy_from_slice(&x.data()[b * c * inner..(b + 1) * c * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[1] = total;
        Tensor::new(shape, out)
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 1).
    pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if x.rank() < 2 || bias.shape() != [x.shape()[1]] {
            return Err(Error::shape(format!(
                "bias {:?} does not match channels of {:?}",
                bias.shape(),
                x.shape()
            )));
        }
        let c = x.shape()[1];
        let inner: usize = x.shape()[2..].iter().product();
        let mut out = x.data().to_vec();
        for (i, chunk) in out.chunks_mut(inner.max(1)).enumerate() {
            let b = bias.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    /// Sum over every axis except 1, giving shape `[C]`.
    pub fn sum_channels(x: &Tensor) -> Result<Tensor> {
        if x.rank() < 2 {
            return Err(Error::shape("sum_channels needs rank >= 2"));
        }
        let c = x.shape()[1];
        let inner: usize = x.shape()[2..].iter().product();
        let mut out = vec![0.0f32; c];
        for (i, chunk) in x.data().chunks(inner.max(1)).enumerate() {
            out[i % c] += chunk.iter().sum::<f32>();
        }
        Tensor::new(vec![c], out)
    }

    /// Sum over every axis except 0, giving shape `[N]`.
    pub fn sum_per_sample(x: &Tensor) -> Result<Tensor> {
        let n = *x.shape().first().ok_or_else(|| Error::shape("empty shape"))?;
        let per = x.numel() / n.max(1);
        let out = x.data().chunks(per.max(1)).map(|c| c.iter().sum()).collect();
        Tensor::new(vec![n], out)
    }

    /// Mean over axis 0, keeping it as extent 1.
    pub fn mean_batch(x: &Tensor) -> Result<Tensor> {
        let n = *x.shape().first().ok_or_else(|| Error::shape("empty shape"))?;
        let per = x.numel() / n.max(1);
        let mut out = vec![0.0f32; per];
        for chunk in x.data().chunks(per.max(1)) {
            out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n as f32);
        let mut shape = x.shape().to_vec();
        shape[0] = 1;
        Tensor::new(shape, out)
    }

    /// Repeat a `[1, ...]` tensor `n` times along axis 0.
    pub fn repeat_batch(x: &Tensor, n: usize) -> Result<Tensor> {
        if x.shape().first() != Some(&1) {
            return Err(Error::shape("repeat_batch needs leading extent 1"));
        }
        let mut out = Vec::with_capacity(x.numel() * n);
        for _ in 0..n {
            out.extend_from_slice(x.data());
        }
        let mut shape = x.shape().to_vec();
        shape[0] = n;
        Tensor::new(shape, out)
    }

    /// Repeat a `[N]` vector over the remaining axes of `shape`.
    pub fn expand_per_sample(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if x.shape() != [shape[0]] {
            return Err(Error::shape("expand_per_sample extent mismatch"));
        }
        let per: usize = shape[1..].iter().product();
        let mut out = Vec::with_capacity(per * shape[0]);
        for &v in x.data() {
            out.extend(std::iter::repeat_n(v, per));
        }
        Tensor::new(shape.to_vec(), out)
    }

    /// Tile a `[C]` vector into `shape` along axis 1.
    pub fn broadcast_channels(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.len() < 2 || x.shape() != [shape[1]] {
            return Err(Error::shape("broadcast_channels extent mismatch"));
        }
        add_channel_bias(&Tensor::zeros(shape), x)
    }
}
