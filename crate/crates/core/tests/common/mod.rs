//! Naive loop re-implementations shared by the integration tests. Everything
//! here works on flat `Vec<f64>` in channel-major order and never touches the
//! tensor engine.

#![allow(dead_code)]

pub mod oracle;

use mimnet::toyset::{make_split, vocabulary};
use mimnet::trainer::{StepReport, Trainer, TrainingData};
use mimnet::{Ablation, MimNet, ModelDims, ParamStore, Stage, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Zero-padded cross-correlation of a `c×h×w` input with `o×c×k×k` weights
/// plus a per-output-channel bias.
pub fn conv(x: &[f64], (c, h, w): (usize, usize, usize), k: &[f64], bias: Option<&[f64]>, o: usize, ks: usize, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[oc]);
                for ic in 0..c {
                    for i in 0..ks {
                        for j in 0..ks {
                            let iy = (y * stride + i) as isize - pad as isize;
                            let ix = (xx * stride + j) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[(ic * h + iy as usize) * w + ix as usize] * k[((oc * c + ic) * ks + i) * ks + j];
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Nearest-neighbour 2× enlargement of `c×h×w`.
pub fn upsample(x: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; c * 4 * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out[(ch * 2 * h + y) * 2 * w + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn uniform(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A reduced-size model whose every parameter is redrawn uniformly in
/// `±scale`, so zero-initialised layers are exercised too.
pub fn random_model(seed: u64, scale: f64) -> (MimNet, ParamStore) {
    let dims = ModelDims::reduced();
    let model = MimNet::new(&dims, 9, Ablation::None).unwrap();
    let mut store = model.init(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let names: Vec<String> = store.names().map(String::from).collect();
    for n in names {
        let p = store.get_mut(&n).unwrap();
        let fresh = uniform(&mut rng, p.value.len(), scale);
        let shape = p.shape.clone();
        store.insert(n, &shape, fresh);
    }
    (model, store)
}

pub fn param(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap_or_else(|| panic!("missing {name}")).value.clone()
}

/// Mean per-pixel squared error of the fine output against the upsampled
/// input over the given samples.
pub fn fine_l2(t: &Trainer, data: &TrainingData, batch: &[usize]) -> f64 {
    let p = t.store.bind(|_| false);
    batch
        .iter()
        .map(|&i| {
            let s = &data.samples[i];
            let out = t.model.generate(&p, &s.image, &s.boundary, &s.tokens, Stage::Fir).unwrap();
            out.mse(&s.image.upsample_nearest2x().unwrap()).unwrap().item()
        })
        .sum::<f64>()
        / batch.len() as f64
}

pub struct Overfit {
    /// Reconstruction loss (both stages) of the first step.
    pub first: f64,
    /// Lowest reconstruction loss over steps 2..=50.
    pub within_50: f64,
    pub baseline_l2: f64,
    pub final_l2: f64,
}

/// Reconstruction steps on four fixed paired samples.
pub fn overfit_four(steps: usize) -> Overfit {
    let d = make_split(4, 8, 3, 32).unwrap();
    let data = TrainingData::from_toy(&d.train, &vocabulary()).unwrap();
    let batch = [0, 1, 2, 3];
    // 2e-4 needs a few hundred steps just to leave the initial plateau; the
    // smoke test runs the same reconstruction objective five times faster.
    let cfg = TrainingConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        steps: 0,
        seed: 9,
        ..TrainingConfig::default()
    };
    let mut t = Trainer::new(cfg, vocabulary()).unwrap();
    let baseline_l2 = fine_l2(&t, &data, &batch);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rec = |r: &StepReport| r.get("icm.rec").unwrap() + r.get("fir.rec").unwrap();
    let first = rec(&t.reconstruction_step(&data, &batch, &mut rng).unwrap());
    let mut within_50 = f64::INFINITY;
    for step in 1..steps {
        let r = t.reconstruction_step(&data, &batch, &mut rng).unwrap();
        if step < 50 {
            within_50 = within_50.min(rec(&r));
        }
    }
    Overfit {
        first,
        within_50,
        baseline_l2,
        final_l2: fine_l2(&t, &data, &batch),
    }
}
