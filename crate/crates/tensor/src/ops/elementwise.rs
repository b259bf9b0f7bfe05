//! Elementwise arithmetic with numpy-style broadcasting, plus the pointwise
//! nonlinearities.

use crate::error::{Result, TensorError};
use crate::tensor::{numel, BackwardCtx, Tensor};

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(TensorError::dim(op, a, b)),
        };
    }
    Ok(out)
}

/// For every output position, the flat index into a source of shape `src`
/// broadcast to `dst`.
fn broadcast_index_map(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let rank = dst.len();
    let offset = rank - src.len();
    let mut src_strides = vec![0usize; rank];
    let mut stride = 1;
    for i in (0..src.len()).rev() {
        src_strides[i + offset] = if src[i] == 1 { 0 } else { stride };
        stride *= src[i];
    }
    let n = numel(dst);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < dst[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

impl Tensor {
    /// Replicates size-1 (or missing leading) dimensions up to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let target = broadcast_shape("broadcast_to", self.shape(), shape)?;
        if target != shape {
            return Err(TensorError::dim("broadcast_to", self.shape(), shape));
        }
        let map = broadcast_index_map(self.shape(), shape);
        let data = map.iter().map(|&i| self.data()[i]).collect();
        let src_len = self.numel();
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; src_len];
                for (o, &i) in map.iter().enumerate() {
                    g[i] += ctx.grad[o];
                }
                vec![Some(g)]
            }),
        ))
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let (a, b) = if self.shape() == other.shape() {
            (self.clone(), other.clone())
        } else {
            let shape = broadcast_shape(op, self.shape(), other.shape())?;
            (self.broadcast_to(&shape)?, other.broadcast_to(&shape)?)
        };
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_op(
            a.shape().to_vec(),
            data,
            vec![a, b],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let n = ctx.grad.len();
                let mut ga = pa.requires_grad().then(|| vec![0.0; n]);
                let mut gb = pb.requires_grad().then(|| vec![0.0; n]);
                for i in 0..n {
                    let (da, db) = df(pa.data()[i], pb.data()[i], ctx.grad[i]);
                    if let Some(g) = ga.as_mut() {
                        g[i] = da;
                    }
                    if let Some(g) = gb.as_mut() {
                        g[i] = db;
                    }
                }
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _, g| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |a, b, g| (g / b, -g * a / (b * b)))
    }

    /// Pointwise map whose derivative is expressed through input `x` and
    /// output `y`.
    fn unary(&self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let x = ctx.parents[0].data();
                let g = x
                    .iter()
                    .zip(ctx.out)
                    .zip(ctx.grad)
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _| -1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.iter().map(|g| g * c).collect())]),
        )
    }

    /// `c - self`
    pub fn rsub_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| c - x, |_, _| -1.0)
    }

    /// `min(x, c)`; the gradient is zero where the cap is active.
    pub fn clamp_max(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x.min(c)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let x = ctx.parents[0].data();
                vec![Some(x.iter().zip(ctx.grad).map(|(&x, &g)| if x < c { g } else { 0.0 }).collect())]
            }),
        )
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(bad) = self.data().iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
            return Err(TensorError::numeric("log", format!("input {bad}")));
        }
        Ok(self.unary(f64::ln, |x, _| 1.0 / x))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(bad) = self.data().iter().find(|&&x| !(x >= 0.0)) {
            return Err(TensorError::numeric("sqrt", format!("input {bad}")));
        }
        Ok(self.unary(f64::sqrt, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 }))
    }

    /// Subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Fixed negative slope of 0.2.
    pub fn leaky_relu(&self) -> Tensor {
        const SLOPE: f64 = 0.2;
        self.unary(|x| if x > 0.0 { x } else { SLOPE * x }, |x, _| if x > 0.0 { 1.0 } else { SLOPE })
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    /// `log(sigmoid(x)) = -softplus(-x)`, finite for every finite `x`.
    pub fn log_sigmoid(&self) -> Tensor {
        self.unary(|x| -softplus(-x), |x, _| sigmoid(-x))
    }

    /// `log(1 - e^x)` for `x < 0`.
    pub fn log1mexp(&self) -> Result<Tensor> {
        if let Some(bad) = self.data().iter().find(|&&x| !(x < 0.0)) {
            return Err(TensorError::numeric("log1mexp", format!("input {bad} must be negative")));
        }
        Ok(self.unary(
            |x| {
                if x > -std::f64::consts::LN_2 {
                    (-x.exp_m1()).ln()
                } else {
                    (-x.exp()).ln_1p()
                }
            },
            |x, _| -1.0 / (-x).exp_m1(),
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("x", &[3, 1, 4], &[2, 1]).unwrap(), vec![3, 2, 4]);
        assert!(broadcast_shape("x", &[3], &[4]).is_err());
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = a.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(b.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn broadcast_backward_sums() {
        let a = Tensor::parameter(&[3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        a.broadcast_to(&[3, 2, 2]).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![4.0; 3]);
    }

    #[test]
    fn broadcasting_mul_matches_manual() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[10.0, 100.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[10.0, 200.0, 30.0, 400.0]);
        assert!(a.add(&t(&[3], &[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn sigmoid_values() {
        let x = t(&[3], &[0.0, 1.0, -1.0]);
        let y = x.sigmoid();
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 0.731_058_58).abs() < 1e-8);
        assert!((y.data()[1] + y.data()[2] - 1.0).abs() < 1e-15);
        let sat = t(&[2], &[800.0, -800.0]).sigmoid();
        assert!(sat.all_finite());
    }

    #[test]
    fn log_domain_errors() {
        assert!(t(&[2], &[1.0, 0.0]).log().is_err());
        assert!(t(&[1], &[f64::NAN]).log().is_err());
        assert!(t(&[1], &[0.0]).log1mexp().is_err());
    }

    #[test]
    fn stable_log_sigmoid() {
        let y = t(&[3], &[-1000.0, 0.0, 1000.0]).log_sigmoid();
        assert_eq!(y.data()[0], -1000.0);
        assert!((y.data()[1] + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(y.data()[2], 0.0);
    }

    #[test]
    fn log1mexp_matches_direct() {
        for &x in &[-1e-3, -0.3, -0.7, -2.0, -30.0] {
            let y = t(&[1], &[x]).log1mexp().unwrap().item();
            assert!((y - (1.0 - x.exp()).ln()).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }
}
