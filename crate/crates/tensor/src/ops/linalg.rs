use crate::error::{Result, TensorError};
use crate::tensor::{BackwardCtx, Tensor};

/// `c = a·b + beta·c` where `a` is logically `m×k` and `b` is `k×n`, each
/// stored row-major either as written or transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above pin every slice to exactly the extent the
    // strides address, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Rank-2 matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(TensorError::dim("matmul", self.shape(), other.shape()));
        };
        if k != k2 {
            return Err(TensorError::dim("matmul", self.shape(), other.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, 0.0, &mut out);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
                let ga = a.requires_grad().then(|| {
                    let mut g = vec![0.0; m * k];
                    gemm(m, n, k, ctx.grad, false, b.data(), true, 0.0, &mut g);
                    g
                });
                let gb = b.requires_grad().then(|| {
                    let mut g = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, ctx.grad, false, 0.0, &mut g);
                    g
                });
                vec![ga, gb]
            }),
        ))
    }
}
