//! Scalar-loop versions of the fusion, gate, both stages and the text score.
//! Each `*_errors(seed)` builds one random instance, runs the library and the
//! loops, and returns the max absolute difference per compared output.

use mimnet::discriminator::Discriminator;
use mimnet::manipulate::tlu;
use mimnet::{FusedTexture, Gate, ModelDims, ParamStore, Stage, TextEncoding};
use mimnet_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Errors = Vec<(&'static str, f64)>;

fn t(shape: &[usize], v: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, v).unwrap()
}

pub fn fuse_memory_errors(seed: u64) -> Errors {
    let (model, store) = random_model(seed, 0.8);
    let p = store.bind(|_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let (n, l, d) = (model.memory.n, model.memory.width, model.memory.d_text);
    let words = rng.gen_range(1..=6);
    let h = uniform(&mut rng, words * d, 1.5);
    let text = TextEncoding {
        token_ids: vec![2; words],
        hidden: t(&[words, d], h.clone()),
    };
    let fused = model.fuse(&p, &text).unwrap();

    let bank = param(&store, "memory.bank");
    let key = param(&store, "memory.key"); // l × d
    let mut attn = Vec::new();
    let mut word = Vec::new();
    for i in 0..words {
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                let mut s = 0.0;
                for a in 0..d {
                    for b in 0..l {
                        s += h[i * d + a] * key[b * d + a] * bank[j * l + b];
                    }
                }
                s
            })
            .collect();
        let a = softmax(&logits);
        for c in 0..l {
            word.push((0..n).map(|j| a[j] * bank[j * l + c]).sum::<f64>());
        }
        attn.extend(a);
    }
    let global: Vec<f64> = (0..l).map(|c| (0..words).map(|i| word[i * l + c]).sum::<f64>() / words as f64).collect();
    vec![
        ("attention", max_abs_diff(fused.attention.as_ref().unwrap().data(), &attn)),
        ("word textures", max_abs_diff(fused.word_textures.data(), &word)),
        ("global", max_abs_diff(fused.global.data(), &global)),
    ]
}

pub fn tlu_errors(seed: u64) -> Errors {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let (l, h, w) = (rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..5));
    let v = uniform(&mut rng, l * h * w, 2.0);
    let g = uniform(&mut rng, l, 2.0);
    let got = tlu(&t(&[l, h, w], v.clone()), &t(&[l], g.clone())).unwrap();
    assert_eq!(got.shape(), &[1, h, w]);
    let want: Vec<f64> = (0..h * w).map(|k| sigmoid((0..l).map(|c| v[c * h * w + k] * g[c]).sum())).collect();
    vec![("alpha", max_abs_diff(got.data(), &want))]
}

pub struct Icm {
    pub v_c: Vec<f64>,
    pub alpha: Vec<f64>,
    pub v_u: Vec<f64>,
    pub i_c: Vec<f64>,
}

pub fn icm_oracle(store: &ParamStore, dims: &ModelDims, v_i: &[f64], v_b: &[f64], h_bar: &[f64]) -> Icm {
    let (l, s) = (dims.mem_width, dims.feature_size());
    let hw = s * s;
    let mut joined = v_b.to_vec();
    for &g in h_bar {
        joined.extend(std::iter::repeat_n(g, hw));
    }
    let (v, _, _) = conv(&joined, (2 * l, s, s), &param(store, "icm.wr"), None, l, 1, 1, 0);
    let (r1, _, _) = conv(&v, (l, s, s), &param(store, "icm.res.c1.w"), Some(&param(store, "icm.res.c1.b")), dims.res_hidden, 3, 1, 1);
    let r1: Vec<f64> = r1.into_iter().map(relu).collect();
    let (r2, _, _) = conv(&r1, (dims.res_hidden, s, s), &param(store, "icm.res.c2.w"), Some(&param(store, "icm.res.c2.b")), l, 3, 1, 1);
    let v_c: Vec<f64> = r2.iter().zip(&v).map(|(a, b)| a + b).collect();
    let alpha: Vec<f64> = (0..hw).map(|k| sigmoid((0..l).map(|c| v_c[c * hw + k] * h_bar[c]).sum())).collect();
    let mixed: Vec<f64> = (0..l * hw).map(|i| alpha[i % hw] * v_c[i] + (1.0 - alpha[i % hw]) * v_i[i]).collect();
    let v_u = upsample(&mixed, (l, s, s));
    let i_c = decode(store, "icm.dec", &v_u, (l, 2 * s, 2 * s), dims.coarse_channels, 3);
    Icm { v_c, alpha, v_u, i_c }
}

fn decode(store: &ParamStore, prefix: &str, x: &[f64], (c, h, w): (usize, usize, usize), hidden: usize, k: usize) -> Vec<f64> {
    let (a, _, _) = conv(x, (c, h, w), &param(store, &format!("{prefix}.c1.w")), Some(&param(store, &format!("{prefix}.c1.b"))), hidden, k, 1, k / 2);
    let a: Vec<f64> = a.into_iter().map(relu).collect();
    let up = upsample(&a, (hidden, h, w));
    let (o, _, _) = conv(&up, (hidden, 2 * h, 2 * w), &param(store, &format!("{prefix}.c2.w")), Some(&param(store, &format!("{prefix}.c2.b"))), 3, 3, 1, 1);
    o.into_iter().map(f64::tanh).collect()
}

fn random_stage_inputs(rng: &mut ChaCha8Rng, dims: &ModelDims) -> (Vec<f64>, Vec<f64>, usize, Vec<f64>) {
    let (l, s) = (dims.mem_width, dims.feature_size());
    let v_i = uniform(rng, l * s * s, 1.0).into_iter().map(f64::abs).collect();
    let v_b = uniform(rng, l * s * s, 1.0).into_iter().map(f64::abs).collect();
    let words = rng.gen_range(1..=5);
    let textures = uniform(rng, words * l, 0.7);
    (v_i, v_b, words, textures)
}

pub fn icm_errors(seed: u64) -> Errors {
    let (model, store) = random_model(300 + seed, 0.5);
    let dims = model.dims.clone();
    let p = store.bind(|_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let (l, s) = (dims.mem_width, dims.feature_size());
    let (v_i, v_b, words, textures) = random_stage_inputs(&mut rng, &dims);
    let fused = FusedTexture::from_word_textures(None, t(&[words, l], textures)).unwrap();
    let state = model
        .manipulator
        .icm_forward(&p, &t(&[l, s, s], v_i.clone()), &t(&[l, s, s], v_b.clone()), &fused, Gate::Learned)
        .unwrap();
    let want = icm_oracle(&store, &dims, &v_i, &v_b, fused.global.data());
    vec![
        ("v_c", max_abs_diff(state.v_c.data(), &want.v_c)),
        ("alpha", max_abs_diff(state.alpha.data(), &want.alpha)),
        ("v_u", max_abs_diff(state.v_u.data(), &want.v_u)),
        ("i_c", max_abs_diff(state.i_c.data(), &want.i_c)),
    ]
}

pub fn fir_errors(seed: u64) -> Errors {
    let (model, store) = random_model(400 + seed, 0.5);
    let dims = model.dims.clone();
    let p = store.bind(|_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
    let (l, s) = (dims.mem_width, dims.feature_size());
    let (v_i, v_b, words, textures) = random_stage_inputs(&mut rng, &dims);
    let fused = FusedTexture::from_word_textures(None, t(&[words, l], textures.clone())).unwrap();
    let mut state = model
        .manipulator
        .icm_forward(&p, &t(&[l, s, s], v_i.clone()), &t(&[l, s, s], v_b.clone()), &fused, Gate::Learned)
        .unwrap();
    model.manipulator.fir_forward(&p, &mut state).unwrap();

    let icm = icm_oracle(&store, &dims, &v_i, &v_b, fused.global.data());
    let u = 2 * s;
    let hw = u * u;
    let mut h_f = vec![0.0; l * hw];
    for k in 0..hw {
        for w in 0..words {
            let score = sigmoid((0..l).map(|c| icm.v_u[c * hw + k] * textures[w * l + c]).sum());
            for c in 0..l {
                h_f[c * hw + k] += score * textures[w * l + c] / words as f64;
            }
        }
    }
    let mut joined = icm.v_u.clone();
    joined.extend(&h_f);
    let up = upsample(&joined, (2 * l, u, u));
    let i_f = decode(&store, "fir.dec", &up, (2 * l, 2 * u, 2 * u), dims.fine_channels, dims.fine_kernel);
    vec![
        ("h_f", max_abs_diff(state.h_f.as_ref().unwrap().data(), &h_f)),
        ("i_f", max_abs_diff(state.i_f.as_ref().unwrap().data(), &i_f)),
    ]
}

/// `f(I)` of the discriminator by loops.
fn disc_features(store: &ParamStore, d: &Discriminator, image: &[f64]) -> Vec<f64> {
    let (mut x, mut c, mut h) = (image.to_vec(), 3, d.in_size);
    for (i, &o) in d.channels.iter().enumerate() {
        let pre = format!("{}.conv{i}", d.prefix);
        let (y, oh, _) = conv(&x, (c, h, h), &param(store, &format!("{pre}.w")), Some(&param(store, &format!("{pre}.b"))), o, 3, 2, 1);
        x = y.into_iter().map(leaky).collect();
        c = o;
        h = oh;
    }
    let fc = param(store, &format!("{}.fc.w", d.prefix));
    let fb = param(store, &format!("{}.fc.b", d.prefix));
    (0..d.feature)
        .map(|f| leaky(fb[f] + x.iter().enumerate().map(|(k, v)| v * fc[k * d.feature + f]).sum::<f64>()))
        .collect()
}

/// Reality score and text-conformity score; even seeds use the coarse
/// discriminator, odd seeds the fine one.
pub fn discriminator_errors(seed: u64) -> Errors {
    let (model, store) = random_model(500 + seed, 0.6);
    let p = store.bind(|_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let stage = if seed.is_multiple_of(2) { Stage::Icm } else { Stage::Fir };
    let d = model.discriminator(stage);
    let image = uniform(&mut rng, 3 * d.in_size * d.in_size, 1.0);
    let words = rng.gen_range(1..=6);
    let dt = d.d_text;
    let hidden = uniform(&mut rng, words * dt, 1.0);
    let text = TextEncoding {
        token_ids: vec![2; words],
        hidden: t(&[words, dt], hidden.clone()),
    };
    let img = t(&[3, d.in_size, d.in_size], image.clone());

    let f = disc_features(&store, d, &image);
    let rw = param(&store, &format!("{}.real.w", d.prefix));
    let rb = param(&store, &format!("{}.real.b", d.prefix));
    let reality = sigmoid(rb[0] + f.iter().zip(&rw).map(|(a, b)| a * b).sum::<f64>());

    let ww = param(&store, &format!("{}.word.w", d.prefix));
    let wb = param(&store, &format!("{}.word.b", d.prefix));
    let bw = param(&store, &format!("{}.bias.w", d.prefix));
    let bb = param(&store, &format!("{}.bias.b", d.prefix));
    let mean: Vec<f64> = (0..dt).map(|a| (0..words).map(|i| hidden[i * dt + a]).sum::<f64>() / words as f64).collect();
    let mut product = 1.0;
    for i in 0..words {
        let h = &hidden[i * dt..(i + 1) * dt];
        let importance = sigmoid(h.iter().zip(&mean).map(|(a, b)| a * b).sum());
        let mut inner = bb[0] + h.iter().zip(&bw).map(|(a, b)| a * b).sum::<f64>();
        for (fi, fv) in f.iter().enumerate() {
            let proj = wb[fi] + (0..dt).map(|a| h[a] * ww[a * d.feature + fi]).sum::<f64>();
            inner += proj * fv;
        }
        product *= sigmoid(inner).powf(importance);
    }
    vec![
        ("D_I", (d.reality_score(&p, &img).unwrap() - reality).abs()),
        ("D_T", (d.text_conformity_score(&p, &img, &text).unwrap() - product).abs()),
    ]
}
