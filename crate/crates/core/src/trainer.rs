//! Two-phase training: reconstruction steps on paired captions with trainable
//! memories, and adversarial steps on mismatched captions with frozen
//! memories, alternating discriminator and generator updates.
//!
//! Every step draws its randomness from a ChaCha stream keyed by
//! `(seed, step)`, so resuming from a checkpoint needs no RNG state.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use mimnet_tensor::Tensor;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{LossWeights, StageWeights, TrainingConfig};
use crate::error::{MimError, Result};
use crate::losses::{
    integrate_discriminator, integrate_generator, loss_discriminator, loss_fool_reality, loss_fool_text, loss_pseudo,
    loss_rec, loss_reject_reality, LossTerms, Pairing,
};
use crate::manipulate::Stage;
use crate::memory::sample_random_attention_rows;
use crate::model::{is_discriminator_param, MimNet};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::text::{tokenize, Vocabulary};
use crate::toyset::ToySample;

/// One training example as tensors.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: usize,
    pub image: Tensor,
    /// Nearest-upsampled image, the real input of the fine discriminator.
    pub image_2x: Tensor,
    pub boundary: Tensor,
    pub tokens: Vec<usize>,
    pub caption: String,
}

impl TrainSample {
    pub fn real(&self, stage: Stage) -> &Tensor {
        match stage {
            Stage::Icm => &self.image,
            Stage::Fir => &self.image_2x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingData {
    pub samples: Vec<TrainSample>,
}

impl TrainingData {
    pub fn from_toy(samples: &[ToySample], vocab: &Vocabulary) -> Result<Self> {
        if samples.is_empty() {
            return Err(MimError::Input("training data is empty".into()));
        }
        let samples = samples
            .iter()
            .map(|s| {
                let image = Tensor::from_vec(&[3, s.size, s.size], s.image.clone())?;
                Ok(TrainSample {
                    id: s.id,
                    image_2x: image.upsample_nearest2x()?,
                    image,
                    boundary: Tensor::from_vec(&[1, s.size, s.size], s.boundary.clone())?,
                    tokens: tokenize(&s.caption, vocab)?,
                    caption: s.caption.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingData { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Reconstruction,
    Adversarial,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Reconstruction => "rec",
            Phase::Adversarial => "adv",
        }
    }
}

/// Loss components of one step. Keys are those of [`LOG_COLUMNS`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub phase: Phase,
    pub values: BTreeMap<String, f64>,
}

pub const LOG_COLUMNS: [&str; 17] = [
    "g_total",
    "d_total",
    "pseudo",
    "icm.rec",
    "fir.rec",
    "icm.memory",
    "fir.memory",
    "icm.reality",
    "fir.reality",
    "icm.text",
    "fir.text",
    "icm.disc",
    "fir.disc",
    "icm.d_real",
    "icm.d_fake",
    "fir.d_real",
    "fir.d_fake",
];

pub fn log_header() -> String {
    format!("step,phase,{}", LOG_COLUMNS.join(","))
}

impl StepReport {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{}", self.step, self.phase.as_str());
        for c in LOG_COLUMNS {
            row.push(',');
            if let Some(v) = self.values.get(c) {
                row.push_str(&v.to_string());
            }
        }
        row
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

pub fn stage_weights(w: &LossWeights, stage: Stage) -> &StageWeights {
    match stage {
        Stage::Icm => &w.icm,
        Stage::Fir => &w.fir,
    }
}

/// Adds `value / n` to the running mean stored under `key`.
fn accumulate(terms: &mut LossTerms, key: String, value: Tensor, n: usize) -> Result<()> {
    let scaled = value.mul_scalar(1.0 / n as f64);
    let next = match terms.remove(&key) {
        Some(prev) => prev.add(&scaled)?,
        None => scaled,
    };
    terms.insert(key, next);
    Ok(())
}

fn record_terms(values: &mut BTreeMap<String, f64>, terms: &LossTerms) {
    for (k, v) in terms {
        values.insert(k.clone(), v.item());
    }
}

/// The full training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MimNet,
    pub store: ParamStore,
    pub adam: Adam,
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    /// Steps completed so far.
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainingConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let model = MimNet::new(&config.dims, vocab.len(), config.ablation)?;
        let store = model.init(config.seed);
        Ok(Trainer {
            model,
            store,
            adam: Adam::new(),
            config,
            vocab,
            step: 0,
        })
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.config.learning_rate,
            beta1: self.config.adam_beta1,
            beta2: self.config.adam_beta2,
            eps: self.config.adam_eps,
        }
    }

    pub fn phase_of(&self, step: u64) -> Phase {
        let cycle = (self.config.recon_ratio + self.config.adv_ratio) as u64;
        if step % cycle < self.config.recon_ratio as u64 {
            Phase::Reconstruction
        } else {
            Phase::Adversarial
        }
    }

    /// The random stream of one step.
    pub fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step + 1);
        rng
    }

    pub fn sample_batch(&self, data: &TrainingData, rng: &mut impl Rng) -> Vec<usize> {
        let (n, b) = (data.len(), self.config.batch_size);
        if b <= n {
            index::sample(rng, n, b).into_vec()
        } else {
            (0..b).map(|_| rng.gen_range(0..n)).collect()
        }
    }

    /// A caption that differs from sample `i`'s: uniform over the other batch
    /// members with a different caption, else over the whole dataset.
    pub fn mismatched(&self, data: &TrainingData, batch: &[usize], i: usize, rng: &mut impl Rng) -> Result<usize> {
        let own = &data.samples[i].caption;
        let pool: Vec<usize> = batch.iter().copied().filter(|&j| data.samples[j].caption != *own).collect();
        if !pool.is_empty() {
            return Ok(pool[rng.gen_range(0..pool.len())]);
        }
        let pool: Vec<usize> = (0..data.len()).filter(|&j| data.samples[j].caption != *own).collect();
        if pool.is_empty() {
            return Err(MimError::Input("every caption in the dataset is identical".into()));
        }
        Ok(pool[rng.gen_range(0..pool.len())])
    }

    /// Paired captions, memories trainable: `λ_rec L_rec + λ_p L_p + λ_m L_m`
    /// per stage, then a reality-discriminator update on the random-memory
    /// images.
    pub fn reconstruction_step(&mut self, data: &TrainingData, batch: &[usize], rng: &mut impl Rng) -> Result<StepReport> {
        let w = self.config.effective_weights();
        let mut report = StepReport {
            step: self.step,
            phase: Phase::Reconstruction,
            values: BTreeMap::new(),
        };
        let memory_stages: Vec<Stage> = Stage::BOTH
            .into_iter()
            .filter(|&s| stage_weights(&w, s).memory > 0.0 && self.model.uses_memory())
            .collect();
        if w.pseudo == 0.0 && w.icm.rec == 0.0 && w.fir.rec == 0.0 && memory_stages.is_empty() {
            return Ok(report);
        }
        self.model.memory.unfreeze();
        let p = self.store.bind(|n| self.model.generator_trainable(n));
        let b = batch.len();
        let mut terms = LossTerms::new();
        let mut fakes = Vec::new();
        for &i in batch {
            let s = &data.samples[i];
            let text = self.model.encode_text(&p, &s.tokens)?;
            let fused = self.model.fuse(&p, &text)?;
            let (v_i, v_b) = self.model.encode_images(&p, &s.image, &s.boundary)?;
            let state = self.model.manipulate_fused(&p, &v_i, &v_b, &fused, Stage::Fir)?;
            for stage in Stage::BOTH {
                let rec = loss_rec(stage, &s.image, state.output(stage)?, Pairing::paired(s.id))?;
                accumulate(&mut terms, format!("{stage}.rec"), rec, b)?;
            }
            if w.pseudo > 0.0 {
                accumulate(&mut terms, "pseudo".into(), loss_pseudo(&v_i, &state.alpha, &fused.global)?, b)?;
            }
            if !memory_stages.is_empty() {
                let rows = sample_random_attention_rows(s.tokens.len(), self.model.memory.n, rng);
                let random = self.model.memory.texture_from_attention(&p, &rows)?;
                let last = *memory_stages.last().expect("nonempty");
                let rstate = self.model.manipulate_fused(&p, &v_i, &v_b, &random, last)?;
                for &stage in &memory_stages {
                    let fake = rstate.output(stage)?;
                    let logit = self.model.discriminator(stage).score(&p, fake, None)?.reality_logit;
                    accumulate(&mut terms, format!("{stage}.memory"), loss_fool_reality(&logit), b)?;
                    fakes.push((i, stage, fake.detach()));
                }
            }
        }
        let total = integrate_generator(&terms, &w)?;
        record_terms(&mut report.values, &terms);
        report.values.insert("g_total".into(), total.item());
        if total.requires_grad() {
            total.backward()?;
            let cfg = self.adam_config();
            self.adam.step(&mut self.store, &p.grads(), &cfg)?;
        }

        if !fakes.is_empty() {
            let pd = self.store.bind(is_discriminator_param);
            let mut d_terms = LossTerms::new();
            for (i, stage, fake) in &fakes {
                let d = self.model.discriminator(*stage);
                let real = d.score(&pd, data.samples[*i].real(*stage), None)?.reality_logit;
                let fake = d.score(&pd, fake, None)?.reality_logit;
                let l = loss_fool_reality(&real).add(&loss_reject_reality(&fake))?;
                accumulate(&mut d_terms, format!("{stage}.disc"), l, b)?;
            }
            let total = integrate_discriminator(&d_terms, &w)?;
            record_terms(&mut report.values, &d_terms);
            report.values.insert("d_total".into(), total.item());
            if total.requires_grad() {
                total.backward()?;
                let cfg = self.adam_config();
                self.adam.step(&mut self.store, &pd.grads(), &cfg)?;
            }
        }
        Ok(report)
    }

    /// Mismatched captions, memories frozen: a discriminator update on `L_D`
    /// against detached fakes, then a generator update on
    /// `λ_I L_I + λ_T L_T` scored by the updated discriminators.
    pub fn adversarial_step(&mut self, data: &TrainingData, batch: &[usize], rng: &mut impl Rng) -> Result<StepReport> {
        let w = self.config.effective_weights();
        let mut report = StepReport {
            step: self.step,
            phase: Phase::Adversarial,
            values: BTreeMap::new(),
        };
        self.model.memory.freeze();
        let result = self.adversarial_inner(data, batch, rng, &w, &mut report);
        self.model.memory.unfreeze();
        result.map(|_| report)
    }

    fn adversarial_inner(
        &mut self,
        data: &TrainingData,
        batch: &[usize],
        rng: &mut impl Rng,
        w: &LossWeights,
        report: &mut StepReport,
    ) -> Result<()> {
        let b = batch.len();
        let pg = self.store.bind(|n| self.model.generator_trainable(n));
        let mut fakes = Vec::with_capacity(b);
        for &i in batch {
            let j = self.mismatched(data, batch, i, rng)?;
            let s = &data.samples[i];
            let state = self.model.manipulate(&pg, &s.image, &s.boundary, &data.samples[j].tokens, Stage::Fir)?;
            fakes.push((i, j, state));
        }

        let pd = self.store.bind(is_discriminator_param);
        let mut d_terms = LossTerms::new();
        let mut probs: BTreeMap<String, f64> = BTreeMap::new();
        for (i, j, state) in &fakes {
            for stage in Stage::BOTH {
                let d = self.model.discriminator(stage);
                let real_text = d.encode_text(&pd, &data.samples[*i].tokens)?;
                let fake_text = d.encode_text(&pd, &data.samples[*j].tokens)?;
                let real = d.score(&pd, data.samples[*i].real(stage), Some(&real_text))?;
                let fake = d.score(&pd, &state.output(stage)?.detach(), Some(&fake_text))?;
                let l = loss_discriminator(
                    &real.reality_logit,
                    &fake.reality_logit,
                    real.log_text.as_ref().expect("text given"),
                    fake.log_text.as_ref().expect("text given"),
                )?;
                accumulate(&mut d_terms, format!("{stage}.disc"), l, b)?;
                *probs.entry(format!("{stage}.d_real")).or_default() +=
                    mimnet_tensor::sigmoid(real.reality_logit.item()) / b as f64;
                *probs.entry(format!("{stage}.d_fake")).or_default() +=
                    mimnet_tensor::sigmoid(fake.reality_logit.item()) / b as f64;
            }
        }
        let d_total = integrate_discriminator(&d_terms, w)?;
        record_terms(&mut report.values, &d_terms);
        report.values.extend(probs);
        report.values.insert("d_total".into(), d_total.item());
        if d_total.requires_grad() {
            d_total.backward()?;
            let cfg = self.adam_config();
            self.adam.step(&mut self.store, &pd.grads(), &cfg)?;
        }

        let scorer = self.store.bind(|_| false);
        let mut g_terms = LossTerms::new();
        for (_, j, state) in &fakes {
            for stage in Stage::BOTH {
                let sw = stage_weights(w, stage);
                if sw.reality == 0.0 && sw.text == 0.0 {
                    continue;
                }
                let d = self.model.discriminator(stage);
                let text = d.encode_text(&scorer, &data.samples[*j].tokens)?;
                let scores = d.score(&scorer, state.output(stage)?, Some(&text))?;
                accumulate(&mut g_terms, format!("{stage}.reality"), loss_fool_reality(&scores.reality_logit), b)?;
                let log_text = scores.log_text.expect("text given");
                accumulate(&mut g_terms, format!("{stage}.text"), loss_fool_text(&log_text), b)?;
            }
        }
        let g_total = integrate_generator(&g_terms, w)?;
        record_terms(&mut report.values, &g_terms);
        report.values.insert("g_total".into(), g_total.item());
        if g_total.requires_grad() {
            g_total.backward()?;
            let cfg = self.adam_config();
            self.adam.step(&mut self.store, &pg.grads(), &cfg)?;
        }
        Ok(())
    }

    /// Runs the next scheduled step.
    pub fn step_once(&mut self, data: &TrainingData) -> Result<StepReport> {
        if data.is_empty() {
            return Err(MimError::Input("training data is empty".into()));
        }
        let mut rng = self.step_rng(self.step);
        let batch = self.sample_batch(data, &mut rng);
        let report = match self.phase_of(self.step) {
            Phase::Reconstruction => self.reconstruction_step(data, &batch, &mut rng)?,
            Phase::Adversarial => self.adversarial_step(data, &batch, &mut rng)?,
        };
        self.step += 1;
        Ok(report)
    }

    /// Trains until `config.steps`. With `out`, appends to `out/losses.csv`,
    /// writes `out/step_<k>.ckpt` every `checkpoint_every` steps and
    /// `out/final.ckpt` at the end.
    pub fn train(&mut self, data: &TrainingData, out: Option<&Path>) -> Result<Vec<StepReport>> {
        self.train_with(data, out, |_| {})
    }

    pub fn train_with(
        &mut self,
        data: &TrainingData,
        out: Option<&Path>,
        mut progress: impl FnMut(&StepReport),
    ) -> Result<Vec<StepReport>> {
        let mut log = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| MimError::io(dir, e))?;
                let path = dir.join("losses.csv");
                let fresh = !path.exists() || self.step == 0;
                let mut f = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(&path)
                    .map_err(|e| MimError::io(&path, e))?;
                if fresh {
                    writeln!(f, "{}", log_header()).map_err(|e| MimError::io(&path, e))?;
                }
                Some((f, path))
            }
            None => None,
        };
        let mut history = Vec::new();
        while self.step < self.config.steps as u64 {
            let report = self.step_once(data)?;
            if let Some((f, path)) = log.as_mut() {
                writeln!(f, "{}", report.csv_row()).map_err(|e| MimError::io(path.as_path(), e))?;
            }
            progress(&report);
            history.push(report);
            let every = self.config.checkpoint_every as u64;
            if let (Some(dir), true) = (out, every > 0 && self.step.is_multiple_of(every)) {
                self.checkpoint().save(&dir.join(format!("step_{}.ckpt", self.step)))?;
            }
        }
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join("final.ckpt"))?;
        }
        Ok(history)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.store.clone(),
            adam: self.adam.clone(),
            step: self.step,
            config: self.config.to_text(),
            vocab: self.vocab.to_text(),
        }
    }

    /// Rebuilds the trainer; the parameter set must match the configured
    /// architecture exactly.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let config = TrainingConfig::from_text(&ckpt.config)?;
        let vocab = Vocabulary::parse(&ckpt.vocab)?;
        let mut t = Trainer::new(config, vocab)?;
        let expected: Vec<(&str, &[usize])> = t.store.iter().map(|(n, p)| (n, p.shape.as_slice())).collect();
        let found: Vec<(&str, &[usize])> = ckpt.params.iter().map(|(n, p)| (n, p.shape.as_slice())).collect();
        if expected != found {
            let missing = expected.iter().find(|e| !found.contains(e)).or_else(|| found.iter().find(|f| !expected.contains(f)));
            return Err(MimError::Contract(format!(
                "checkpoint parameters do not match the configured model (first difference: {:?})",
                missing.map(|m| m.0)
            )));
        }
        t.store = ckpt.params;
        t.adam = ckpt.adam;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
