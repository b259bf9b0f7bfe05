//! Diff, Sim and MP, the held-out manipulation report, the discriminator gap
//! and memory dumps.

use mimnet_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MimError, Result};
use crate::manipulate::Stage;
use crate::model::MimNet;
use crate::params::ParamStore;
use crate::scorer::Scorer;
use crate::text::tokenize;
use crate::toyset::ToySample;
use crate::trainer::TrainingData;

/// Mean absolute per-channel difference with pixels mapped from `[-1, 1]` to
/// `[0, 1]`.
pub fn metric_diff(before: &Tensor, after: &Tensor) -> Result<f64> {
    if before.shape() != after.shape() {
        return Err(MimError::Dimension {
            what: "diff operands".into(),
            got: after.shape().to_vec(),
            expected: before.shape().to_vec(),
        });
    }
    let total: f64 = before.data().iter().zip(after.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / (2.0 * before.numel() as f64))
}

/// `(1 − diff) · sim`.
pub fn metric_mp(sim: f64, diff: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&diff) {
        return Err(MimError::Input(format!("diff {diff} outside [0, 1]")));
    }
    Ok((1.0 - diff) * sim)
}

/// Diff restricted to background (`mask == 0`) and object (`mask != 0`)
/// pixels; `mask` is `H×W` over the planar `C×H×W` images.
pub fn masked_diff(before: &Tensor, after: &Tensor, mask: &[f64]) -> Result<(f64, f64)> {
    metric_diff(before, after)?;
    let plane = mask.len();
    if plane == 0 || !before.numel().is_multiple_of(plane) {
        return Err(MimError::Dimension {
            what: "mask".into(),
            got: vec![plane],
            expected: before.shape()[1..].to_vec(),
        });
    }
    let (mut sums, mut counts) = ([0.0; 2], [0usize; 2]);
    for (i, (a, b)) in before.data().iter().zip(after.data()).enumerate() {
        let k = usize::from(mask[i % plane] != 0.0);
        sums[k] += (a - b).abs() / 2.0;
        counts[k] += 1;
    }
    let mean = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    Ok((mean(0), mean(1)))
}

fn upsample(t: &Tensor) -> Result<Tensor> {
    Ok(t.upsample_nearest2x()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: usize,
    pub source_caption: String,
    pub target_caption: String,
    pub sim: f64,
    pub diff: f64,
    pub mp: f64,
    /// `None` when no object mask is known.
    pub background_diff: Option<f64>,
    pub object_diff: Option<f64>,
}

impl EvalRow {
    /// Scores `after` against `before` (same shape, `3×S×S`) and `caption`.
    pub fn compute(
        scorer: &Scorer,
        id: usize,
        before: &Tensor,
        after: &Tensor,
        source_caption: &str,
        caption: &str,
        mask: Option<&[f64]>,
    ) -> Result<Self> {
        let diff = metric_diff(before, after)?;
        let side = after.shape().get(1).copied().unwrap_or(0);
        let sim = scorer.sim(after.data(), side, caption)?;
        let (background_diff, object_diff) = match mask {
            Some(m) => {
                let (b, o) = masked_diff(before, after, m)?;
                (Some(b), Some(o))
            }
            None => (None, None),
        };
        Ok(EvalRow {
            id,
            source_caption: source_caption.into(),
            target_caption: caption.into(),
            sim,
            diff,
            mp: metric_mp(sim, diff)?,
            background_diff,
            object_diff,
        })
    }

    pub fn background_preserved(&self) -> Option<bool> {
        Some(self.background_diff? < self.object_diff?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub config_hash: String,
    pub checkpoint_id: String,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub const CSV_HEADER: &str = "id,source_caption,target_caption,sim,diff,mp,background_diff,object_diff";

impl EvalReport {
    pub fn mean_sim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.sim))
    }

    pub fn mean_diff(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.diff))
    }

    pub fn mean_mp(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.mp))
    }

    /// Share of masked rows whose background changed less than the object.
    pub fn background_preserved_fraction(&self) -> Option<f64> {
        let flags: Vec<bool> = self.rows.iter().filter_map(EvalRow::background_preserved).collect();
        (!flags.is_empty()).then(|| flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
    }

    /// Rows whose MP is not exactly `(1 − diff) · sim`.
    pub fn identity_violations(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| r.mp != (1.0 - r.diff) * r.sim).map(|r| r.id).collect()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.id,
                r.source_caption,
                r.target_caption,
                r.sim,
                r.diff,
                r.mp,
                opt(r.background_diff),
                opt(r.object_diff)
            ));
        }
        out
    }
}

/// For each sample, the index of another sample whose caption names a
/// different colour, so that the manipulation has to repaint the object.
pub fn plan_manipulations(samples: &[ToySample], seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pool: Vec<usize> = (0..samples.len()).filter(|&j| samples[j].attrs.color != s.attrs.color).collect();
            if pool.is_empty() {
                return Err(MimError::Input("every sample has the same colour".into()));
            }
            Ok((i, pool[rng.gen_range(0..pool.len())]))
        })
        .collect()
}

/// Manipulates each planned source with its target caption and scores the
/// fine output against the 2×-upsampled source.
pub fn evaluate(
    model: &MimNet,
    store: &ParamStore,
    scorer: &Scorer,
    samples: &[ToySample],
    plan: &[(usize, usize)],
) -> Result<Vec<EvalRow>> {
    let p = store.bind(|_| false);
    let vocab = &scorer.vocab;
    plan.iter()
        .map(|&(i, j)| {
            let (src, tgt) = (&samples[i], &samples[j]);
            let image = Tensor::from_vec(&[3, src.size, src.size], src.image.clone())?;
            let boundary = Tensor::from_vec(&[1, src.size, src.size], src.boundary.clone())?;
            let tokens = tokenize(&tgt.caption, vocab)?;
            let out = model.generate(&p, &image, &boundary, &tokens, Stage::Fir)?;
            let mask = upsample(&Tensor::from_vec(&[1, src.size, src.size], src.mask.clone())?)?;
            EvalRow::compute(scorer, src.id, &upsample(&image)?, &out, &src.caption, &tgt.caption, Some(mask.data()))
        })
        .collect()
}

/// Mean of `σ(D(real)) − σ(D(fake))` for the reality head of `stage`, fakes
/// made from mismatched captions drawn with `seed`.
pub fn discriminator_gap(model: &MimNet, store: &ParamStore, data: &TrainingData, stage: Stage, seed: u64) -> Result<f64> {
    let p = store.bind(|_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.discriminator(stage);
    let mut total = 0.0;
    for s in &data.samples {
        let pool: Vec<&_> = data.samples.iter().filter(|o| o.caption != s.caption).collect();
        if pool.is_empty() {
            return Err(MimError::Input("every caption in the dataset is identical".into()));
        }
        let other = pool[rng.gen_range(0..pool.len())];
        let fake = model.generate(&p, &s.image, &s.boundary, &other.tokens, stage)?;
        total += d.reality_score(&p, s.real(stage))? - d.reality_score(&p, &fake)?;
    }
    Ok(total / data.len() as f64)
}

/// The coarse image decoded from each memory alone (one-hot attention on a
/// single word), drawn on a fixed input image.
pub fn dump_memory(model: &MimNet, store: &ParamStore, image: &Tensor, boundary: &Tensor) -> Result<Vec<Tensor>> {
    if !model.uses_memory() {
        return Err(MimError::Contract("this model has no memory bank".into()));
    }
    let p = store.bind(|_| false);
    let (v_i, v_b) = model.encode_images(&p, image, boundary)?;
    let n = model.memory.n;
    (0..n)
        .map(|j| {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            let fused = model.memory.texture_from_attention(&p, &Tensor::from_vec(&[1, n], row)?)?;
            let state = model.manipulate_fused(&p, &v_i, &v_b, &fused, Stage::Icm)?;
            Ok(state.i_c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: Vec<f64>) -> Tensor {
        let n = v.len();
        Tensor::from_vec(&[1, 1, n], v).unwrap()
    }

    #[test]
    fn diff_closed_forms() {
        let black = img(vec![-1.0; 4]);
        let white = img(vec![1.0; 4]);
        assert_eq!(metric_diff(&black, &black).unwrap(), 0.0);
        assert_eq!(metric_diff(&black, &white).unwrap(), 1.0);
        // Half the pixels move by 0.5 on the [0, 1] scale.
        let half = img(vec![-1.0, -1.0, 0.0, 0.0]);
        assert_eq!(metric_diff(&black, &half).unwrap(), 0.25);
        assert!(matches!(metric_diff(&black, &img(vec![0.0; 3])), Err(MimError::Dimension { .. })));
    }

    #[test]
    fn mp_identity_and_range() {
        assert_eq!(metric_mp(0.4, 0.0).unwrap(), 0.4);
        assert!(metric_mp(0.4, 1.5).is_err());
        assert!(metric_mp(0.4, -0.1).is_err());
        assert!(metric_mp(0.4, f64::NAN).is_err());
    }

    #[test]
    fn masked_split() {
        let a = img(vec![0.0; 4]);
        let b = img(vec![0.0, 0.0, 1.0, 1.0]);
        let (bg, obj) = masked_diff(&a, &b, &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!((bg, obj), (0.0, 0.5));
    }
}
