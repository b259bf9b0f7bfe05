//! Every differentiable primitive against central differences, on several
//! seeds, at unit scale.

use mimnet_tensor::{grad_check, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked or singular ops.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Contracts an output with fixed random weights so every coordinate of the
/// upstream gradient differs.
fn weighted_sum(t: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_tensor(&mut rng, t.shape());
    Ok(t.mul(&w)?.sum())
}

fn check<F>(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, f: F)
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        let err = grad_check(&f, &inputs, EPS).unwrap();
        assert!(err <= TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn binary_ops_with_broadcast() {
    check(
        "add",
        |r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[3])],
        |v| weighted_sum(&v[0].add(&v[1])?, 1),
    );
    check(
        "sub",
        |r| vec![rand_tensor(r, &[2, 1, 3]), rand_tensor(r, &[2, 4, 1])],
        |v| weighted_sum(&v[0].sub(&v[1])?, 2),
    );
    check(
        "mul",
        |r| vec![rand_tensor(r, &[3, 2, 2]), rand_tensor(r, &[1, 2, 2])],
        |v| weighted_sum(&v[0].mul(&v[1])?, 3),
    );
    check(
        "div",
        |r| vec![rand_tensor(r, &[2, 3]), rand_away_from_zero(r, &[2, 3])],
        |v| weighted_sum(&v[0].div(&v[1])?, 4),
    );
}

#[test]
fn scalar_and_unary_ops() {
    let one = |r: &mut ChaCha8Rng| vec![rand_tensor(r, &[2, 3])];
    check("add_scalar", one, |v| weighted_sum(&v[0].add_scalar(0.7), 5));
    check("mul_scalar", one, |v| weighted_sum(&v[0].mul_scalar(-1.3), 6));
    check("rsub_scalar", one, |v| weighted_sum(&v[0].rsub_scalar(1.0), 7));
    check("neg", one, |v| weighted_sum(&v[0].neg(), 8));
    check("clamp_max", |r| vec![rand_away_from_zero(r, &[2, 3])], |v| weighted_sum(&v[0].clamp_max(0.0), 36));
    check("square", one, |v| weighted_sum(&v[0].square(), 9));
    check("exp", one, |v| weighted_sum(&v[0].exp(), 10));
    check("tanh", one, |v| weighted_sum(&v[0].tanh(), 11));
    check("sigmoid", one, |v| weighted_sum(&v[0].sigmoid(), 12));
    check("softplus", one, |v| weighted_sum(&v[0].softplus(), 13));
    check("log_sigmoid", one, |v| weighted_sum(&v[0].log_sigmoid(), 14));
    let kinked = |r: &mut ChaCha8Rng| vec![rand_away_from_zero(r, &[2, 3])];
    check("relu", kinked, |v| weighted_sum(&v[0].relu(), 15));
    check("leaky_relu", kinked, |v| weighted_sum(&v[0].leaky_relu(), 16));
    check("abs", kinked, |v| weighted_sum(&v[0].abs(), 17));
    check(
        "log",
        |r| vec![rand_tensor(r, &[2, 3]).abs().add_scalar(0.5)],
        |v| weighted_sum(&v[0].log()?, 18),
    );
    check(
        "sqrt",
        |r| vec![rand_tensor(r, &[2, 3]).abs().add_scalar(0.5)],
        |v| weighted_sum(&v[0].sqrt()?, 19),
    );
    check(
        "log1mexp",
        |r| vec![rand_tensor(r, &[2, 3]).abs().add_scalar(0.05).neg()],
        |v| weighted_sum(&v[0].log1mexp()?, 20),
    );
}

#[test]
fn sigmoid_sum_at_unit_scale() {
    check("sum(sigmoid)", |r| vec![rand_tensor(r, &[5])], |v| Ok(v[0].sigmoid().sum()));
}

#[test]
fn shape_ops() {
    check(
        "reshape",
        |r| vec![rand_tensor(r, &[2, 6])],
        |v| weighted_sum(&v[0].reshape(&[3, 4])?, 21),
    );
    check(
        "concat",
        |r| vec![rand_tensor(r, &[2, 1, 3]), rand_tensor(r, &[2, 2, 3])],
        |v| weighted_sum(&Tensor::concat(&[&v[0], &v[1]], 1)?, 22),
    );
    check(
        "narrow",
        |r| vec![rand_tensor(r, &[3, 5])],
        |v| weighted_sum(&v[0].narrow(1, 1, 3)?, 23),
    );
    check(
        "transpose",
        |r| vec![rand_tensor(r, &[3, 2])],
        |v| weighted_sum(&v[0].transpose()?, 24),
    );
    check(
        "broadcast_to",
        |r| vec![rand_tensor(r, &[3, 1])],
        |v| weighted_sum(&v[0].broadcast_to(&[2, 3, 4])?, 25),
    );
}

#[test]
fn reductions() {
    check("sum", |r| vec![rand_tensor(r, &[2, 3])], |v| Ok(v[0].sum().mul_scalar(0.5)));
    check("mean", |r| vec![rand_tensor(r, &[2, 3])], |v| Ok(v[0].mean().square()));
    check(
        "sum_axis",
        |r| vec![rand_tensor(r, &[2, 3, 4])],
        |v| weighted_sum(&v[0].sum_axis(1, false)?, 26),
    );
    check(
        "mean_axis",
        |r| vec![rand_tensor(r, &[2, 3, 4])],
        |v| weighted_sum(&v[0].mean_axis(2, true)?, 27),
    );
    check(
        "dot_axis",
        |r| vec![rand_tensor(r, &[4, 3, 3]), rand_tensor(r, &[4, 1, 1])],
        |v| {
            let b = v[1].broadcast_to(&[4, 3, 3])?;
            weighted_sum(&v[0].dot_axis(&b, 0, true)?, 28)
        },
    );
}

#[test]
fn matmul_softmax_embedding() {
    check(
        "matmul",
        |r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4, 2])],
        |v| weighted_sum(&v[0].matmul(&v[1])?, 29),
    );
    check(
        "softmax",
        |r| vec![rand_tensor(r, &[3, 4])],
        |v| weighted_sum(&v[0].softmax(1)?, 30),
    );
    check(
        "softmax axis 0",
        |r| vec![rand_tensor(r, &[3, 4])],
        |v| weighted_sum(&v[0].softmax(0)?, 31),
    );
    check(
        "embedding",
        |r| vec![rand_tensor(r, &[5, 3])],
        |v| weighted_sum(&v[0].embedding(&[4, 1, 4, 0])?, 32),
    );
}

#[test]
fn convolution_and_upsampling() {
    check(
        "conv2d stride 1 pad 1",
        |r| vec![rand_tensor(r, &[2, 4, 4]), rand_tensor(r, &[3, 2, 3, 3])],
        |v| weighted_sum(&v[0].conv2d(&v[1], 1, 1)?, 33),
    );
    check(
        "conv2d stride 2 pad 1",
        |r| vec![rand_tensor(r, &[2, 6, 6]), rand_tensor(r, &[2, 2, 4, 4])],
        |v| weighted_sum(&v[0].conv2d(&v[1], 2, 1)?, 34),
    );
    check(
        "upsample_nearest2x",
        |r| vec![rand_tensor(r, &[2, 3, 2])],
        |v| weighted_sum(&v[0].upsample_nearest2x()?, 35),
    );
}

#[test]
fn distances() {
    check(
        "l1_distance",
        |r| vec![rand_away_from_zero(r, &[2, 3]), Tensor::zeros(&[2, 3])],
        |v| v[0].l1_distance(&v[1]),
    );
    check(
        "l2_distance",
        |r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[2, 3])],
        |v| v[0].l2_distance(&v[1]),
    );
    check(
        "mse",
        |r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[2, 3])],
        |v| v[0].mse(&v[1]),
    );
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = rand_tensor(&mut rng, &[2, 5, 5]).with_requires_grad(true);
        let k = rand_tensor(&mut rng, &[3, 2, 3, 3]).with_requires_grad(true);
        let y = x.conv2d(&k, 1, 1).unwrap().tanh().softmax(0).unwrap();
        weighted_sum(&y, 9).unwrap().backward().unwrap();
        (x.grad().unwrap(), k.grad().unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
