use crate::error::{Result, TensorError};
use crate::tensor::{numel, BackwardCtx, Tensor};

/// Splits `shape` around `axis` into (outer, extent, inner) block sizes.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::shape(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::dim("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// Joins tensors that agree on every extent except `axis`.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        check_axis("concat", first.shape(), axis)?;
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::dim("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;

        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Ok(Tensor::from_op(
            shape,
            data,
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut grads: Vec<Vec<f64>> =
                    extents.iter().map(|e| Vec::with_capacity(outer * e * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (g, &e) in grads.iter_mut().zip(&extents) {
                        g.extend_from_slice(&ctx.grad[pos..pos + e * inner]);
                        pos += e * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(ctx.parents)
                    .map(|(g, p)| p.requires_grad().then_some(g))
                    .collect()
            }),
        ))
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("narrow", self.shape(), axis)?;
        if len == 0 || start + len > self.shape()[axis] {
            return Err(TensorError::shape(
                "narrow",
                format!("range {start}..{} outside extent {}", start + len, self.shape()[axis]),
            ));
        }
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let src_len = self.numel();
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; src_len];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    let src = &ctx.grad[o * len * inner..(o + 1) * len * inner];
                    g[base..base + len * inner].copy_from_slice(src);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Index `index` along `axis`, dropping that axis.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor> {
        let t = self.narrow(axis, index, 1)?;
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        t.reshape(&shape)
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let &[r, c] = self.shape() else {
            return Err(TensorError::shape("transpose", format!("rank-2 input required, got {:?}", self.shape())));
        };
        let src = self.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(Tensor::from_op(
            vec![c, r],
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        g[i * c + j] = ctx.grad[j * r + i];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().mul_scalar(1.0 / self.numel() as f64)
    }

    /// Sums out `axis`. With `keepdim` the axis stays with extent 1; otherwise
    /// it is removed (a rank-1 input collapses to shape `[1]`).
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis("sum_axis", self.shape(), axis)?;
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        let src = self.data();
        for o in 0..outer {
            for e in 0..extent {
                let row = &src[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
        }
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    for e in 0..extent {
                        g[(o * extent + e) * inner..(o * extent + e + 1) * inner]
                            .copy_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let extent = self.shape().get(axis).copied().unwrap_or(1);
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / extent as f64))
    }

    /// `sum(a * b)` along `axis`: a batch of dot products, e.g. over the
    /// channel axis of a feature map.
    pub fn dot_axis(&self, other: &Tensor, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.mul(other)?.sum_axis(axis, keepdim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn concat_middle_axis() {
        let a = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        assert!(Tensor::concat(&[&a, &t(&[1, 1, 2], &[0.0, 0.0])], 1).is_err());
    }

    #[test]
    fn narrow_and_select() {
        let a = t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(a.narrow(1, 1, 2).unwrap().data(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(a.select(0, 1).unwrap().data(), &[3.0, 4.0, 5.0]);
        assert!(a.narrow(1, 2, 2).is_err());
    }

    #[test]
    fn sum_axis_shapes() {
        let a = t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let s0 = a.sum_axis(0, false).unwrap();
        assert_eq!((s0.shape(), s0.data()), (&[3usize][..], &[3.0, 5.0, 7.0][..]));
        let s1 = a.sum_axis(1, true).unwrap();
        assert_eq!((s1.shape(), s1.data()), (&[2usize, 1][..], &[3.0, 12.0][..]));
    }

    #[test]
    fn transpose_roundtrip() {
        let a = t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = a.transpose().unwrap();
        assert_eq!(b.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(b.transpose().unwrap().data(), a.data());
    }
}
