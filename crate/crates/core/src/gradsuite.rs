//! The finite-difference suite run by `mimnet gradcheck`: every primitive
//! on several seeds, and every network composite at reduced dims with
//! respect to both its inputs and its parameters.

use std::collections::BTreeMap;

use mimnet_tensor::{grad_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Ablation, ModelDims};
use crate::error::{MimError, Result};
use crate::losses::{
    log_one_minus_text, loss_discriminator, loss_fool_reality, loss_fool_text, loss_pseudo, loss_rec,
    loss_reject_reality, Pairing,
};
use crate::manipulate::{Gate, Stage};
use crate::memory::FusedTexture;
use crate::model::MimNet;
use crate::params::{Bound, ParamStore};
use crate::text::TextEncoding;

pub const EPS: f64 = 1e-5;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Primitive,
    Composite,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Primitive => "primitive",
            Kind::Composite => "composite",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub name: String,
    pub kind: Kind,
    /// Worst relative error over all seeds and coordinates.
    pub max_error: f64,
    pub tolerance: f64,
    /// Number of scalar coordinates checked.
    pub coordinates: usize,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
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
    Tensor::from_vec(shape, data).expect("valid shape")
}

/// `Σ w ⊙ t` with fixed weights, so every output coordinate carries its own
/// upstream gradient.
fn weighted(t: &Tensor, salt: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(salt ^ 0xa11ce);
    let w = uniform(&mut rng, t.shape(), -1.0, 1.0);
    Ok(t.mul(&w)?.sum())
}

/// Back to the tensor error that `grad_check` propagates.
fn lower(e: MimError) -> mimnet_tensor::TensorError {
    match e {
        MimError::Tensor(t) => t,
        other => mimnet_tensor::TensorError::Contract(other.to_string()),
    }
}

type Maker = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
type Probe = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

fn primitive(name: &str, make: Maker, f: Probe) -> (String, Maker, Probe) {
    (name.to_string(), make, f)
}

fn primitives() -> Vec<(String, Maker, Probe)> {
    let u = |shape: &'static [usize]| -> Maker { Box::new(move |r| vec![uniform(r, shape, -1.0, 1.0)]) };
    let k = |shape: &'static [usize]| -> Maker { Box::new(move |r| vec![away_from_zero(r, shape)]) };
    let pos = |shape: &'static [usize]| -> Maker { Box::new(move |r| vec![uniform(r, shape, 0.5, 1.5)]) };
    vec![
        primitive(
            "add",
            Box::new(|r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)]),
            Box::new(|v| weighted(&v[0].add(&v[1])?, 1)),
        ),
        primitive(
            "sub",
            Box::new(|r| vec![uniform(r, &[2, 1, 3], -1.0, 1.0), uniform(r, &[2, 4, 1], -1.0, 1.0)]),
            Box::new(|v| weighted(&v[0].sub(&v[1])?, 2)),
        ),
        primitive(
            "mul",
            Box::new(|r| vec![uniform(r, &[3, 2, 2], -1.0, 1.0), uniform(r, &[1, 2, 2], -1.0, 1.0)]),
            Box::new(|v| weighted(&v[0].mul(&v[1])?, 3)),
        ),
        primitive(
            "div",
            Box::new(|r| vec![uniform(r, &[2, 3], -1.0, 1.0), away_from_zero(r, &[2, 3])]),
            Box::new(|v| weighted(&v[0].div(&v[1])?, 4)),
        ),
        primitive("neg", u(&[2, 3]), Box::new(|v| weighted(&v[0].neg(), 5))),
        primitive("add_scalar", u(&[2, 3]), Box::new(|v| weighted(&v[0].add_scalar(0.3), 6))),
        primitive("mul_scalar", u(&[2, 3]), Box::new(|v| weighted(&v[0].mul_scalar(-1.7), 7))),
        primitive("rsub_scalar", u(&[2, 3]), Box::new(|v| weighted(&v[0].rsub_scalar(1.0), 8))),
        primitive("clamp_max", k(&[2, 3]), Box::new(|v| weighted(&v[0].clamp_max(0.0), 9))),
        primitive("square", u(&[2, 3]), Box::new(|v| weighted(&v[0].square(), 10))),
        primitive("exp", u(&[2, 3]), Box::new(|v| weighted(&v[0].exp(), 11))),
        primitive("log", pos(&[2, 3]), Box::new(|v| weighted(&v[0].log()?, 12))),
        primitive("sqrt", pos(&[2, 3]), Box::new(|v| weighted(&v[0].sqrt()?, 13))),
        primitive("abs", k(&[2, 3]), Box::new(|v| weighted(&v[0].abs(), 14))),
        primitive("tanh", u(&[2, 3]), Box::new(|v| weighted(&v[0].tanh(), 15))),
        primitive("sigmoid", u(&[2, 3]), Box::new(|v| weighted(&v[0].sigmoid(), 16))),
        primitive("relu", k(&[2, 3]), Box::new(|v| weighted(&v[0].relu(), 17))),
        primitive("leaky_relu", k(&[2, 3]), Box::new(|v| weighted(&v[0].leaky_relu(), 18))),
        primitive("softplus", u(&[2, 3]), Box::new(|v| weighted(&v[0].softplus(), 19))),
        primitive("log_sigmoid", u(&[2, 3]), Box::new(|v| weighted(&v[0].log_sigmoid(), 20))),
        primitive(
            "log1mexp",
            Box::new(|r| vec![uniform(r, &[2, 3], -1.5, -0.05)]),
            Box::new(|v| weighted(&v[0].log1mexp()?, 21)),
        ),
        primitive(
            "matmul",
            Box::new(|r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)]),
            Box::new(|v| weighted(&v[0].matmul(&v[1])?, 22)),
        ),
        primitive("softmax", u(&[3, 4]), Box::new(|v| weighted(&v[0].softmax(1)?, 23))),
        primitive(
            "conv2d",
            Box::new(|r| vec![uniform(r, &[2, 5, 5], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)]),
            Box::new(|v| weighted(&v[0].conv2d(&v[1], 2, 1)?, 24)),
        ),
        primitive("upsample_nearest2x", u(&[2, 2, 3]), Box::new(|v| weighted(&v[0].upsample_nearest2x()?, 25))),
        primitive("embedding", u(&[5, 3]), Box::new(|v| weighted(&v[0].embedding(&[4, 0, 4, 2])?, 26))),
        primitive(
            "l1_distance",
            Box::new(|r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)]),
            Box::new(|v| v[0].l1_distance(&v[1]).map_err(Into::into)),
        ),
        primitive(
            "l2_distance",
            Box::new(|r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)]),
            Box::new(|v| v[0].l2_distance(&v[1]).map_err(Into::into)),
        ),
        primitive(
            "mse",
            Box::new(|r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)]),
            Box::new(|v| v[0].mse(&v[1]).map_err(Into::into)),
        ),
        primitive("reshape", u(&[2, 6]), Box::new(|v| weighted(&v[0].reshape(&[4, 3])?, 27))),
        primitive(
            "concat",
            Box::new(|r| vec![uniform(r, &[1, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)]),
            Box::new(|v| weighted(&Tensor::concat(&[&v[0], &v[1]], 0)?, 28)),
        ),
        primitive("narrow", u(&[3, 5]), Box::new(|v| weighted(&v[0].narrow(1, 1, 3)?, 29))),
        primitive("select", u(&[3, 4]), Box::new(|v| weighted(&v[0].select(0, 2)?, 30))),
        primitive("transpose", u(&[3, 2]), Box::new(|v| weighted(&v[0].transpose()?, 31))),
        primitive("sum", u(&[2, 3]), Box::new(|v| Ok(v[0].sum().square()))),
        primitive("mean", u(&[2, 3]), Box::new(|v| Ok(v[0].mean().square()))),
        primitive("sum_axis", u(&[2, 3, 4]), Box::new(|v| weighted(&v[0].sum_axis(1, false)?, 32))),
        primitive("mean_axis", u(&[2, 3, 4]), Box::new(|v| weighted(&v[0].mean_axis(2, true)?, 33))),
        primitive(
            "dot_axis",
            Box::new(|r| vec![uniform(r, &[3, 2, 2], -1.0, 1.0), uniform(r, &[3, 2, 2], -1.0, 1.0)]),
            Box::new(|v| weighted(&v[0].dot_axis(&v[1], 0, true)?, 34)),
        ),
        primitive("broadcast_to", u(&[3, 1]), Box::new(|v| weighted(&v[0].broadcast_to(&[2, 3, 4])?, 35))),
    ]
}

/// Every primitive on every seed in `seeds`.
pub fn primitive_suite(seeds: &[u64]) -> Result<Vec<GradRow>> {
    primitives()
        .into_iter()
        .map(|(name, make, f)| {
            let mut worst: f64 = 0.0;
            let mut coordinates = 0;
            for &seed in seeds {
                let inputs = make(&mut ChaCha8Rng::seed_from_u64(seed));
                coordinates += inputs.iter().map(Tensor::numel).sum::<usize>();
                worst = worst.max(grad_check(|x: &[Tensor]| f(x).map_err(lower), &inputs, EPS)?);
            }
            Ok(GradRow {
                name,
                kind: Kind::Primitive,
                max_error: worst,
                tolerance: PRIMITIVE_TOLERANCE,
                coordinates,
            })
        })
        .collect()
}

/// Checks `f` against the parameters selected by `select` and the extra
/// `inputs`; all other parameters stay fixed at their stored values.
pub fn check_composite<F>(store: &ParamStore, select: impl Fn(&str) -> bool, inputs: &[Tensor], f: F) -> Result<(f64, usize)>
where
    F: Fn(&Bound, &[Tensor]) -> Result<Tensor>,
{
    let fixed: BTreeMap<String, Tensor> = store
        .iter()
        .filter(|(n, _)| !select(n))
        .map(|(n, p)| Ok((n.to_string(), Tensor::from_vec(&p.shape, p.value.clone())?)))
        .collect::<Result<_>>()?;
    let names: Vec<String> = store.names().filter(|n| select(n)).map(String::from).collect();
    let mut leaves: Vec<Tensor> = names
        .iter()
        .map(|n| {
            let p = store.get(n).expect("listed");
            Ok(Tensor::from_vec(&p.shape, p.value.clone())?)
        })
        .collect::<Result<_>>()?;
    leaves.extend(inputs.iter().cloned());
    let coordinates = leaves.iter().map(Tensor::numel).sum();
    let k = names.len();
    let err = grad_check(
        |all: &[Tensor]| {
            let bound = Bound::from_leaves(
                fixed.iter().map(|(n, t)| (n.clone(), t.clone())).chain(names.iter().cloned().zip(all[..k].iter().cloned())),
            );
            f(&bound, &all[k..]).map_err(lower)
        },
        &leaves,
        EPS,
    )?;
    Ok((err, coordinates))
}

fn composite_row(name: &str, result: (f64, usize)) -> GradRow {
    GradRow {
        name: name.to_string(),
        kind: Kind::Composite,
        max_error: result.0,
        tolerance: COMPOSITE_TOLERANCE,
        coordinates: result.1,
    }
}

/// Network composites and losses at [`ModelDims::reduced`].
pub fn composite_suite(seed: u64) -> Result<Vec<GradRow>> {
    let dims = ModelDims::reduced();
    let vocab = 9;
    let model = MimNet::new(&dims, vocab, Ablation::None)?;
    let store = model.init(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0);
    let (l, d, s) = (dims.mem_width, dims.d_text(), dims.feature_size());
    let img = dims.image_size;
    let tokens = [2usize, 5, 8, 3];
    let t = tokens.len();
    let mut rows = Vec::new();

    rows.push(composite_row(
        "encode_text",
        check_composite(&store, |n| n.starts_with("text."), &[], |p, _| {
            weighted(&model.encode_text(p, &tokens)?.hidden, 40)
        })?,
    ));

    let hidden = uniform(&mut rng, &[t, d], -1.0, 1.0);
    rows.push(composite_row(
        "fuse_memory",
        check_composite(&store, |n| n.starts_with("memory."), &[hidden], |p, x| {
            let enc = TextEncoding {
                token_ids: tokens.to_vec(),
                hidden: x[0].clone(),
            };
            let fused = model.memory.fuse(p, &enc)?;
            Ok(weighted(&fused.word_textures, 41)?.add(&weighted(&fused.global, 42)?)?)
        })?,
    ));

    let v_i = uniform(&mut rng, &[l, s, s], -1.0, 1.0);
    let v_b = uniform(&mut rng, &[l, s, s], -1.0, 1.0);
    let words = uniform(&mut rng, &[t, l], -1.0, 1.0);
    rows.push(composite_row(
        "icm_forward",
        check_composite(&store, |n| n.starts_with("icm."), &[v_i.clone(), v_b.clone(), words.clone()], |p, x| {
            let fused = FusedTexture::from_word_textures(None, x[2].clone())?;
            let st = model.manipulator.icm_forward(p, &x[0], &x[1], &fused, Gate::Learned)?;
            Ok(weighted(&st.i_c, 43)?.add(&weighted(&st.alpha, 44)?)?)
        })?,
    ));

    let v_u = uniform(&mut rng, &[l, 2 * s, 2 * s], -1.0, 1.0);
    rows.push(composite_row(
        "fir_forward",
        check_composite(&store, |n| n.starts_with("fir."), &[v_u, words.clone()], |p, x| {
            let fused = FusedTexture::from_word_textures(None, x[1].clone())?;
            let mut st = model.manipulator.icm_forward(p, &v_i, &v_b, &fused, Gate::Learned)?;
            st.v_u = x[0].clone();
            model.manipulator.fir_forward(p, &mut st)?;
            weighted(st.output(Stage::Fir)?, 45)
        })?,
    ));

    for stage in Stage::BOTH {
        let dsc = model.discriminator(stage);
        let prefix = format!("{}.", dsc.prefix);
        let text_prefix = format!("{}.text.", dsc.prefix);
        let image = uniform(&mut rng, &[3, dsc.in_size, dsc.in_size], -1.0, 1.0);
        rows.push(composite_row(
            &format!("{stage}.reality_score"),
            check_composite(
                &store,
                |n| n.starts_with(&prefix) && !n.starts_with(&text_prefix),
                std::slice::from_ref(&image),
                |p, x| Ok(dsc.score(p, &x[0], None)?.reality_logit),
            )?,
        ));
        rows.push(composite_row(
            &format!("{stage}.text_score"),
            // The image enters through the trunk checked just above; its own
            // coordinates here carry gradients near 1e-8, below what central
            // differences resolve at this tolerance.
            check_composite(&store, |n| n.starts_with(&prefix), &[], |p, _| {
                let enc = dsc.encode_text(p, &tokens)?;
                Ok(dsc.score(p, &image, Some(&enc))?.log_text.expect("text given"))
            })?,
        ));
    }

    let image = uniform(&mut rng, &[3, img, img], -1.0, 1.0);
    let coarse = uniform(&mut rng, &[3, img, img], -1.0, 1.0);
    let fine = uniform(&mut rng, &[3, 2 * img, 2 * img], -1.0, 1.0);
    rows.push(composite_row(
        "loss_rec",
        check_composite(&store, |_| false, &[image, coarse, fine], |_, x| {
            let a = loss_rec(Stage::Icm, &x[0], &x[1], Pairing::paired(0))?;
            let b = loss_rec(Stage::Fir, &x[0], &x[2], Pairing::paired(0))?;
            Ok(a.add(&b)?)
        })?,
    ));
    let alpha = uniform(&mut rng, &[1, s, s], 0.1, 0.9);
    let v = uniform(&mut rng, &[l, s, s], -1.0, 1.0);
    let h_bar = uniform(&mut rng, &[l], -1.0, 1.0);
    rows.push(composite_row(
        "loss_pseudo",
        check_composite(&store, |_| false, &[v, alpha, h_bar], |_, x| loss_pseudo(&x[0], &x[1], &x[2]))?,
    ));
    let logits = uniform(&mut rng, &[2], -2.0, 2.0);
    let log_text = uniform(&mut rng, &[2], -2.0, -0.1);
    rows.push(composite_row(
        "loss_adversarial",
        check_composite(&store, |_| false, &[logits, log_text], |_, x| {
            let (r, f) = (x[0].select(0, 0)?, x[0].select(0, 1)?);
            let (tr, tf) = (x[1].select(0, 0)?, x[1].select(0, 1)?);
            let g = loss_fool_reality(&f).add(&loss_fool_text(&tf))?;
            let d = loss_discriminator(&r, &f, &tr, &tf)?;
            let extra = loss_reject_reality(&r).add(&log_one_minus_text(&tr)?)?;
            Ok(g.add(&d)?.add(&extra)?)
        })?,
    ));

    let image = uniform(&mut rng, &[3, img, img], -1.0, 1.0);
    let boundary = uniform(&mut rng, &[1, img, img], 0.0, 1.0);
    rows.push(composite_row(
        "generator_pipeline",
        check_composite(&store, |n| n == "memory.bank" || n == "icm.wr", &[], |p, _| {
            let st = model.manipulate(p, &image, &boundary, &tokens, Stage::Fir)?;
            Ok(loss_rec(Stage::Fir, &image, st.output(Stage::Fir)?, Pairing::paired(0))?
                .add(&loss_pseudo(&st.v_i, &st.alpha, &st.fused.global)?)?)
        })?,
    ));
    Ok(rows)
}

/// Primitives on [`SEEDS`] followed by the composites.
pub fn run_suite() -> Result<Vec<GradRow>> {
    let mut rows = primitive_suite(&SEEDS)?;
    rows.extend(composite_suite(SEEDS[0])?);
    Ok(rows)
}
