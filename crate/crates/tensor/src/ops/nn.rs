use crate::error::{Result, TensorError};
use crate::ops::linalg::gemm;
use crate::ops::shape::split_axis;
use crate::tensor::{BackwardCtx, Tensor};

/// Geometry of a single-image 2-D cross-correlation.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose input column `ox·stride + k − pad` lies
    /// inside `0..extent`.
    fn valid(out: usize, extent: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k).div_ceil(stride);
        let hi = if extent + pad > k { ((extent + pad - k - 1) / stride + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unfolds the padded input into a `patch × positions` matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        if self.is_pointwise() {
            return x.to_vec();
        }
        let mut cols = vec![0.0; self.patch() * self.positions()];
        let p = self.positions();
        let s = self.stride;
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                let (y0, y1) = Self::valid(self.oh, self.h, s, ki, self.pad);
                for kj in 0..self.kw {
                    let (x0, x1) = Self::valid(self.ow, self.w, s, kj, self.pad);
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in y0..y1 {
                        let iy = oy * s + ki - self.pad;
                        let src = &x[(c * self.h + iy) * self.w..][..self.w];
                        let out = &mut dst[oy * self.ow..][..self.ow];
                        if x1 <= x0 {
                            continue;
                        }
                        let ix0 = x0 * s + kj - self.pad;
                        if s == 1 {
                            out[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                        } else {
                            for (o, v) in out[x0..x1].iter_mut().zip(src[ix0..].iter().step_by(s)) {
                                *o = *v;
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        if self.is_pointwise() {
            return cols.to_vec();
        }
        let mut x = vec![0.0; self.c_in * self.h * self.w];
        let p = self.positions();
        let s = self.stride;
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                let (y0, y1) = Self::valid(self.oh, self.h, s, ki, self.pad);
                for kj in 0..self.kw {
                    let (x0, x1) = Self::valid(self.ow, self.w, s, kj, self.pad);
                    if x1 <= x0 {
                        continue;
                    }
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in y0..y1 {
                        let iy = oy * s + ki - self.pad;
                        let dst = &mut x[(c * self.h + iy) * self.w..][..self.w];
                        let ix0 = x0 * s + kj - self.pad;
                        let g = &src[oy * self.ow + x0..oy * self.ow + x1];
                        if s == 1 {
                            for (d, v) in dst[ix0..ix0 + g.len()].iter_mut().zip(g) {
                                *d += v;
                            }
                        } else {
                            for (d, v) in dst[ix0..].iter_mut().step_by(s).zip(g) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

impl Tensor {
    /// Softmax along `axis`, computed after subtracting the slice maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::shape("softmax", format!("axis {axis} out of range for {:?}", self.shape())));
        }
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::numeric("softmax", "NaN input"));
        }
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |e: usize| (o * extent + e) * inner + i;
                let max = (0..extent).map(|e| x[idx(e)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for e in 0..extent {
                    let v = (x[idx(e)] - max).exp();
                    y[idx(e)] = v;
                    total += v;
                }
                for e in 0..extent {
                    y[idx(e)] /= total;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (y, g) = (ctx.out, ctx.grad);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |e: usize| (o * extent + e) * inner + i;
                        let dot: f64 = (0..extent).map(|e| y[idx(e)] * g[idx(e)]).sum();
                        for e in 0..extent {
                            gx[idx(e)] = y[idx(e)] * (g[idx(e)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Cross-correlation of a `C_in×H×W` input with a `C_out×C_in×kh×kw`
    /// kernel (no flip, zero padding).
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (&[c_in, h, w], &[c_out, kc, kh, kw]) = (self.shape(), kernel.shape()) else {
            return Err(TensorError::dim("conv2d", self.shape(), kernel.shape()));
        };
        if kc != c_in || stride == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(TensorError::dim("conv2d", self.shape(), kernel.shape()));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let cols = geom.im2col(self.data());
        let mut out = vec![0.0; c_out * geom.positions()];
        gemm(c_out, geom.patch(), geom.positions(), kernel.data(), false, &cols, false, 0.0, &mut out);
        Ok(Tensor::from_op(
            vec![c_out, geom.oh, geom.ow],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (input, kernel) = (&ctx.parents[0], &ctx.parents[1]);
                let (patch, pos) = (geom.patch(), geom.positions());
                let g_in = input.requires_grad().then(|| {
                    let mut gcols = vec![0.0; patch * pos];
                    gemm(patch, geom.c_out, pos, kernel.data(), true, ctx.grad, false, 0.0, &mut gcols);
                    geom.col2im(&gcols)
                });
                let g_k = kernel.requires_grad().then(|| {
                    let mut gk = vec![0.0; geom.c_out * patch];
                    gemm(geom.c_out, pos, patch, ctx.grad, false, &cols, true, 0.0, &mut gk);
                    gk
                });
                vec![g_in, g_k]
            }),
        ))
    }

    /// Nearest-neighbour 2× upsampling of the last two axes.
    pub fn upsample_nearest2x(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(TensorError::shape("upsample_nearest2x", format!("rank ≥ 2 required, got {:?}", self.shape())));
        }
        let r = self.rank();
        let (h, w) = (self.shape()[r - 2], self.shape()[r - 1]);
        let planes = self.numel() / (h * w);
        let x = self.data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut y = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for oy in 0..oh {
                for ox in 0..ow {
                    y[(p * oh + oy) * ow + ox] = x[(p * h + oy / 2) * w + ox / 2];
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Ok(Tensor::from_op(
            shape,
            y,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            g[(p * h + oy / 2) * w + ox / 2] += ctx.grad[(p * oh + oy) * ow + ox];
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Gathers rows `ids` of a `V×D` table into a `len(ids)×D` matrix.
    /// Repeated ids scatter-add their gradients.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor> {
        let &[vocab, dim] = self.shape() else {
            return Err(TensorError::shape("embedding", format!("table must be rank 2, got {:?}", self.shape())));
        };
        if ids.is_empty() {
            return Err(TensorError::shape("embedding", "empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::shape("embedding", format!("id {bad} outside table of {vocab} rows")));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(&self.data()[i * dim..(i + 1) * dim]);
        }
        let ids = ids.to_vec();
        Ok(Tensor::from_op(
            vec![ids.len(), dim],
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; vocab * dim];
                for (row, &i) in ids.iter().enumerate() {
                    for d in 0..dim {
                        g[i * dim + d] += ctx.grad[row * dim + d];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Mean absolute difference over all elements.
    pub fn l1_distance(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("l1_distance", self, other)?;
        Ok(self.sub(other)?.abs().mean())
    }

    /// Euclidean norm of the difference. The gradient at zero distance is
    /// taken as zero.
    pub fn l2_distance(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("l2_distance", self, other)?;
        self.sub(other)?.square().sum().sqrt()
    }

    /// Mean squared difference over all elements.
    pub fn mse(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mse", self, other)?;
        Ok(self.sub(other)?.square().mean())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}
