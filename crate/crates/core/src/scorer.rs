//! The image-caption scorer behind the Sim metric: a small CNN and a
//! mean-pooled word embedding mapped into one space, trained contrastively on
//! the toy set. Sim is the cosine of the two embeddings.

use std::collections::BTreeSet;
use std::path::Path;

use mimnet_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{bytes_record, read_records, record_text, write_records, Record};
use crate::config::parse_kv;
use crate::error::{MimError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bound, ParamStore};
use crate::text::{tokenize, Vocabulary};
use crate::toyset::ToySample;
use crate::vision::{conv, register_conv};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorerConfig {
    pub channels: usize,
    pub embed: usize,
    pub dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            channels: 8,
            embed: 16,
            dim: 16,
            steps: 300,
            batch: 16,
            lr: 3e-3,
            temperature: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scorer {
    pub vocab: Vocabulary,
    /// Side of the square images the CNN reads; larger inputs are average
    /// pooled down to it.
    pub image_size: usize,
    pub config: ScorerConfig,
    pub store: ParamStore,
    pub steps_trained: u64,
}

/// Averages `factor×factor` blocks of a `C×H×W` buffer.
pub fn average_pool(data: &[f64], channels: usize, side: usize, factor: usize) -> Vec<f64> {
    assert_eq!(data.len(), channels * side * side);
    let out = side / factor;
    let norm = (factor * factor) as f64;
    let mut pooled = vec![0.0; channels * out * out];
    for c in 0..channels {
        for y in 0..out {
            for x in 0..out {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += data[c * side * side + (y * factor + dy) * side + x * factor + dx];
                    }
                }
                pooled[c * out * out + y * out + x] = acc / norm;
            }
        }
    }
    pooled
}

fn normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.square().sum_axis(1, true)?.add_scalar(1e-12).sqrt()?;
    Ok(x.div(&norm)?)
}

/// Mean of the diagonal log-probabilities, rows and columns averaged.
fn matching_loss(logits: &Tensor) -> Result<Tensor> {
    let n = logits.shape()[0];
    let eye = Tensor::eye(n);
    let rows = logits.softmax(1)?.log()?.mul(&eye)?.sum();
    let cols = logits.softmax(0)?.log()?.mul(&eye)?.sum();
    Ok(rows.add(&cols)?.mul_scalar(-0.5 / n as f64))
}

impl Scorer {
    pub fn new(vocab: Vocabulary, image_size: usize, config: ScorerConfig) -> Result<Self> {
        if image_size < 8 || !image_size.is_multiple_of(8) {
            return Err(MimError::Config(format!("scorer image size {image_size} must be a multiple of 8")));
        }
        if config.channels == 0 || config.embed == 0 || config.dim == 0 || config.batch < 2 {
            return Err(MimError::Config("scorer widths must be positive and the batch at least 2".into()));
        }
        if !(config.lr > 0.0 && config.temperature > 0.0) {
            return Err(MimError::Config("scorer learning rate and temperature must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let c = config.channels;
        register_conv(&mut store, "img.c1", c, 3, 3, &mut rng);
        register_conv(&mut store, "img.c2", 2 * c, c, 3, &mut rng);
        register_conv(&mut store, "img.c3", 2 * c, 2 * c, 3, &mut rng);
        store.fan_in_uniform("img.fc", &[2 * c, config.dim], 2 * c, &mut rng);
        store.normal("txt.embed", &[vocab.len(), config.embed], 1.0, &mut rng);
        store.fan_in_uniform("txt.fc", &[config.embed, config.dim], config.embed, &mut rng);
        Ok(Scorer {
            vocab,
            image_size,
            config,
            store,
            steps_trained: 0,
        })
    }

    /// `[3, image_size·k, image_size·k]` values in `[-1, 1]` → the pooled
    /// `[3, image_size, image_size]` tensor the CNN reads.
    pub fn prepare_image(&self, image: &[f64], side: usize) -> Result<Tensor> {
        if image.len() != 3 * side * side || !side.is_multiple_of(self.image_size) {
            return Err(MimError::Dimension {
                what: "scorer image".into(),
                got: vec![image.len()],
                expected: vec![3, self.image_size, self.image_size],
            });
        }
        let pooled = average_pool(image, 3, side, side / self.image_size);
        Ok(Tensor::from_vec(&[3, self.image_size, self.image_size], pooled)?)
    }

    /// Unit-norm `[1, dim]` image embedding.
    pub fn embed_image(&self, p: &Bound, image: &Tensor) -> Result<Tensor> {
        let mut h = image.clone();
        for (name, relu) in [("img.c1", true), ("img.c2", true), ("img.c3", false)] {
            h = conv(p, name, &h, 2, 1)?;
            if relu {
                h = h.relu();
            }
        }
        let c = h.shape()[0];
        let pooled = h.reshape(&[c, h.numel() / c])?.mean_axis(1, false)?.reshape(&[1, c])?;
        normalize_rows(&pooled.matmul(p.get("img.fc")?)?)
    }

    /// Unit-norm `[1, dim]` caption embedding.
    pub fn embed_text(&self, p: &Bound, tokens: &[usize]) -> Result<Tensor> {
        let words = p.get("txt.embed")?.embedding(tokens)?;
        let mean = words.mean_axis(0, true)?;
        normalize_rows(&mean.matmul(p.get("txt.fc")?)?)
    }

    fn require_trained(&self) -> Result<()> {
        if self.steps_trained == 0 {
            return Err(MimError::Contract("the Sim scorer has not been trained".into()));
        }
        Ok(())
    }

    /// Cosine similarity of an image (`3×side×side`, values in `[-1, 1]`)
    /// and a caption.
    pub fn sim(&self, image: &[f64], side: usize, caption: &str) -> Result<f64> {
        self.require_trained()?;
        let tokens = tokenize(caption, &self.vocab)?;
        let p = self.store.bind(|_| false);
        let img = self.embed_image(&p, &self.prepare_image(image, side)?)?;
        let txt = self.embed_text(&p, &tokens)?;
        Ok(img.mul(&txt)?.sum().item())
    }

    /// Contrastive training with in-batch negatives. Batches never hold two
    /// samples with the same caption attributes, so every negative is a true
    /// mismatch. Returns the loss of each step.
    pub fn train(&mut self, samples: &[ToySample]) -> Result<Vec<f64>> {
        let mut keys: Vec<usize> = samples.iter().map(|s| s.attrs.caption_key()).collect();
        keys.sort_unstable();
        keys.dedup();
        if keys.len() < 2 {
            return Err(MimError::Input("scorer training needs at least two distinct captions".into()));
        }
        let images: Vec<Tensor> = samples
            .iter()
            .map(|s| self.prepare_image(&s.image, s.size))
            .collect::<Result<_>>()?;
        let tokens: Vec<Vec<usize>> = samples
            .iter()
            .map(|s| tokenize(&s.caption, &self.vocab))
            .collect::<Result<_>>()?;
        let cfg = AdamConfig {
            lr: self.config.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut adam = Adam::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5c0e);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut history = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            order.shuffle(&mut rng);
            let mut seen = BTreeSet::new();
            let batch: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| seen.insert(samples[i].attrs.caption_key()))
                .take(self.config.batch)
                .collect();
            let p = self.store.bind(|_| true);
            let img: Vec<Tensor> = batch.iter().map(|&i| self.embed_image(&p, &images[i])).collect::<Result<_>>()?;
            let txt: Vec<Tensor> = batch.iter().map(|&i| self.embed_text(&p, &tokens[i])).collect::<Result<_>>()?;
            let img = Tensor::concat(&img.iter().collect::<Vec<_>>(), 0)?;
            let txt = Tensor::concat(&txt.iter().collect::<Vec<_>>(), 0)?;
            let logits = img.matmul(&txt.transpose()?)?.mul_scalar(1.0 / self.config.temperature);
            let loss = matching_loss(&logits)?;
            history.push(loss.item());
            loss.backward()?;
            adam.step(&mut self.store, &p.grads(), &cfg)?;
            self.steps_trained += 1;
        }
        Ok(history)
    }

    fn header(&self) -> String {
        let c = &self.config;
        format!(
            "image_size={}\nchannels={}\nembed={}\ndim={}\nsteps={}\nbatch={}\nlr={}\ntemperature={}\nseed={}\nsteps_trained={}\n",
            self.image_size,
            c.channels,
            c.embed,
            c.dim,
            c.steps,
            c.batch,
            c.lr,
            c.temperature,
            c.seed,
            self.steps_trained
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut records = vec![
            bytes_record("meta/scorer", self.header().as_bytes()),
            bytes_record("meta/vocab", self.vocab.to_text().as_bytes()),
        ];
        for (name, p) in self.store.iter() {
            records.push(Record {
                name: format!("param/{name}"),
                shape: p.shape.clone(),
                data: p.value.iter().map(|&v| v as f32).collect(),
            });
        }
        write_records(&records)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let records = read_records(bytes)?;
        let find = |name: &str| {
            records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| MimError::format("scorer", format!("missing {name}")))
        };
        let header = record_text(find("meta/scorer")?)?;
        let vocab = Vocabulary::parse(&record_text(find("meta/vocab")?)?)?;
        let mut config = ScorerConfig::default();
        let (mut image_size, mut steps_trained) = (0, 0);
        for (k, v) in parse_kv(&header)? {
            let bad = |_| MimError::format("scorer", format!("bad value for {k}: {v}"));
            match k.as_str() {
                "image_size" => image_size = v.parse().map_err(bad)?,
                "channels" => config.channels = v.parse().map_err(bad)?,
                "embed" => config.embed = v.parse().map_err(bad)?,
                "dim" => config.dim = v.parse().map_err(bad)?,
                "steps" => config.steps = v.parse().map_err(bad)?,
                "batch" => config.batch = v.parse().map_err(bad)?,
                "lr" => config.lr = v.parse().map_err(|_| MimError::format("scorer", format!("bad lr {v}")))?,
                "temperature" => {
                    config.temperature = v.parse().map_err(|_| MimError::format("scorer", format!("bad temperature {v}")))?
                }
                "seed" => config.seed = v.parse().map_err(bad)?,
                "steps_trained" => steps_trained = v.parse().map_err(bad)?,
                _ => return Err(MimError::format("scorer", format!("unknown header key {k}"))),
            }
        }
        let mut scorer = Scorer::new(vocab, image_size, config)?;
        let expected: Vec<String> = scorer.store.names().map(|n| format!("param/{n}")).collect();
        let found: Vec<&Record> = records.iter().filter(|r| r.name.starts_with("param/")).collect();
        if found.len() != expected.len() {
            return Err(MimError::format("scorer", "parameter set does not match the header"));
        }
        for r in found {
            let name = &r.name["param/".len()..];
            let p = scorer
                .store
                .get_mut(name)
                .ok_or_else(|| MimError::format("scorer", format!("unexpected parameter {name}")))?;
            if p.shape != r.shape {
                return Err(MimError::format("scorer", format!("shape mismatch for {name}")));
            }
            p.value = r.data.iter().map(|&v| v as f64).collect();
        }
        scorer.steps_trained = steps_trained;
        Ok(scorer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| MimError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| MimError::io(path, e))?)
    }
}
