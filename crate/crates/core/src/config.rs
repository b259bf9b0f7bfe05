//! Model dimensions, loss weights and training hyperparameters, with a flat
//! `key=value` text form (one pair per line, `#` comments).

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{MimError, Result};

/// Desk-scale sizes. Image features sit at a quarter of the input
/// resolution; the fused map, coarse image and fine image each double it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub image_size: usize,
    pub embed_dim: usize,
    /// Per direction; word features have twice this width.
    pub text_hidden: usize,
    pub n_memories: usize,
    /// Memory width, also the channel count of every feature map.
    pub mem_width: usize,
    pub enc_channels: usize,
    pub res_hidden: usize,
    pub coarse_channels: usize,
    pub fine_channels: usize,
    /// Kernel of the first fine-decoder convolution (1 or 3).
    pub fine_kernel: usize,
    pub disc_base: usize,
    pub disc_cap: usize,
    pub disc_feature: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            image_size: 32,
            embed_dim: 16,
            text_hidden: 16,
            n_memories: 16,
            mem_width: 32,
            enc_channels: 8,
            res_hidden: 16,
            coarse_channels: 8,
            fine_channels: 8,
            fine_kernel: 1,
            disc_base: 4,
            disc_cap: 16,
            disc_feature: 32,
        }
    }
}

impl ModelDims {
    /// Tiny sizes for finite-difference checks: 16×16 images, 4×4 features.
    pub fn reduced() -> Self {
        ModelDims {
            image_size: 16,
            embed_dim: 4,
            text_hidden: 3,
            n_memories: 3,
            mem_width: 5,
            enc_channels: 3,
            res_hidden: 3,
            coarse_channels: 2,
            fine_channels: 2,
            fine_kernel: 3,
            disc_base: 2,
            disc_cap: 4,
            disc_feature: 4,
        }
    }

    pub fn d_text(&self) -> usize {
        2 * self.text_hidden
    }

    pub fn feature_size(&self) -> usize {
        self.image_size / 4
    }

    pub fn fused_size(&self) -> usize {
        self.image_size / 2
    }

    pub fn fine_size(&self) -> usize {
        self.image_size * 2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.embed_dim,
            self.text_hidden,
            self.n_memories,
            self.mem_width,
            self.enc_channels,
            self.res_hidden,
            self.coarse_channels,
            self.fine_channels,
            self.disc_base,
            self.disc_cap,
            self.disc_feature,
        ];
        if positive.contains(&0) {
            return Err(MimError::Config("model dimensions must be positive".into()));
        }
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return Err(MimError::Config(format!(
                "image_size must be a power of two ≥ 8, got {}",
                self.image_size
            )));
        }
        if self.fine_kernel != 1 && self.fine_kernel != 3 {
            return Err(MimError::Config("fine_kernel must be 1 or 3".into()));
        }
        Ok(())
    }
}

/// Per-stage generator weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageWeights {
    pub reality: f64,
    pub text: f64,
    pub rec: f64,
    pub memory: f64,
}

impl Default for StageWeights {
    fn default() -> Self {
        StageWeights {
            reality: 1.0,
            text: 1.0,
            rec: 10.0,
            memory: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub pseudo: f64,
    pub icm: StageWeights,
    pub fir: StageWeights,
    pub beta_icm: f64,
    pub beta_fir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pseudo: 1.0,
            icm: StageWeights::default(),
            fir: StageWeights::default(),
            beta_icm: 1.0,
            beta_fir: 1.0,
        }
    }
}

impl LossWeights {
    pub fn all(&self) -> [f64; 11] {
        [
            self.pseudo,
            self.icm.reality,
            self.icm.text,
            self.icm.rec,
            self.icm.memory,
            self.fir.reality,
            self.fir.text,
            self.fir.rec,
            self.fir.memory,
            self.beta_icm,
            self.beta_fir,
        ]
    }
}

/// One component removed for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Gate forced open: alpha ≡ 1.
    Tlu,
    /// Word textures from a learned linear map of the word features.
    Memory,
    /// Pseudo ground-truth feature loss off.
    PseudoLoss,
    /// Randomized memory loss off.
    MemoryLoss,
}

impl Ablation {
    pub const VARIANTS: [Ablation; 4] = [Ablation::Tlu, Ablation::Memory, Ablation::PseudoLoss, Ablation::MemoryLoss];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Tlu => "tlu",
            Ablation::Memory => "memory",
            Ablation::PseudoLoss => "pseudo_loss",
            Ablation::MemoryLoss => "memory_loss",
        }
    }
}

impl FromStr for Ablation {
    type Err = MimError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Ablation::None,
            "tlu" => Ablation::Tlu,
            "memory" => Ablation::Memory,
            "pseudo_loss" => Ablation::PseudoLoss,
            "memory_loss" => Ablation::MemoryLoss,
            other => return Err(MimError::Config(format!("unknown ablation `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub dims: ModelDims,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Reconstruction steps per cycle.
    pub recon_ratio: usize,
    /// Adversarial steps per cycle.
    pub adv_ratio: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub ablation: Ablation,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dims: ModelDims::default(),
            weights: LossWeights::default(),
            learning_rate: 0.0002,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            steps: 2000,
            recon_ratio: 1,
            adv_ratio: 1,
            seed: 0,
            checkpoint_every: 0,
            ablation: Ablation::None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| MimError::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(MimError::Config("learning_rate must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(MimError::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(MimError::Config("adam_eps must be positive".into()));
        }
        if self.recon_ratio == 0 || self.adv_ratio == 0 {
            return Err(MimError::Config("phase ratios must be positive integers".into()));
        }
        if self.batch_size == 0 {
            return Err(MimError::Config("batch_size must be positive".into()));
        }
        if self.weights.all().iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(MimError::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Loss weights after the ablation switches off its component.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        match self.ablation {
            Ablation::PseudoLoss => w.pseudo = 0.0,
            Ablation::MemoryLoss | Ablation::Memory => {
                w.icm.memory = 0.0;
                w.fir.memory = 0.0;
            }
            Ablation::None | Ablation::Tlu => {}
        }
        w
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let d = &self.dims;
        let w = &self.weights;
        vec![
            ("image_size", d.image_size.to_string()),
            ("embed_dim", d.embed_dim.to_string()),
            ("text_hidden", d.text_hidden.to_string()),
            ("n_memories", d.n_memories.to_string()),
            ("mem_width", d.mem_width.to_string()),
            ("enc_channels", d.enc_channels.to_string()),
            ("res_hidden", d.res_hidden.to_string()),
            ("coarse_channels", d.coarse_channels.to_string()),
            ("fine_channels", d.fine_channels.to_string()),
            ("fine_kernel", d.fine_kernel.to_string()),
            ("disc_base", d.disc_base.to_string()),
            ("disc_cap", d.disc_cap.to_string()),
            ("disc_feature", d.disc_feature.to_string()),
            ("lambda_p", w.pseudo.to_string()),
            ("lambda_i_icm", w.icm.reality.to_string()),
            ("lambda_t_icm", w.icm.text.to_string()),
            ("lambda_rec_icm", w.icm.rec.to_string()),
            ("lambda_m_icm", w.icm.memory.to_string()),
            ("lambda_i_fir", w.fir.reality.to_string()),
            ("lambda_t_fir", w.fir.text.to_string()),
            ("lambda_rec_fir", w.fir.rec.to_string()),
            ("lambda_m_fir", w.fir.memory.to_string()),
            ("beta_icm", w.beta_icm.to_string()),
            ("beta_fir", w.beta_fir.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps", self.steps.to_string()),
            ("recon_ratio", self.recon_ratio.to_string()),
            ("adv_ratio", self.adv_ratio.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("ablation", self.ablation.as_str().to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.dims;
        let w = &mut self.weights;
        match key {
            "image_size" => d.image_size = parse(key, value)?,
            "embed_dim" => d.embed_dim = parse(key, value)?,
            "text_hidden" => d.text_hidden = parse(key, value)?,
            "n_memories" => d.n_memories = parse(key, value)?,
            "mem_width" => d.mem_width = parse(key, value)?,
            "enc_channels" => d.enc_channels = parse(key, value)?,
            "res_hidden" => d.res_hidden = parse(key, value)?,
            "coarse_channels" => d.coarse_channels = parse(key, value)?,
            "fine_channels" => d.fine_channels = parse(key, value)?,
            "fine_kernel" => d.fine_kernel = parse(key, value)?,
            "disc_base" => d.disc_base = parse(key, value)?,
            "disc_cap" => d.disc_cap = parse(key, value)?,
            "disc_feature" => d.disc_feature = parse(key, value)?,
            "lambda_p" => w.pseudo = parse(key, value)?,
            "lambda_i_icm" => w.icm.reality = parse(key, value)?,
            "lambda_t_icm" => w.icm.text = parse(key, value)?,
            "lambda_rec_icm" => w.icm.rec = parse(key, value)?,
            "lambda_m_icm" => w.icm.memory = parse(key, value)?,
            "lambda_i_fir" => w.fir.reality = parse(key, value)?,
            "lambda_t_fir" => w.fir.text = parse(key, value)?,
            "lambda_rec_fir" => w.fir.rec = parse(key, value)?,
            "lambda_m_fir" => w.fir.memory = parse(key, value)?,
            "beta_icm" => w.beta_icm = parse(key, value)?,
            "beta_fir" => w.beta_fir = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "recon_ratio" => self.recon_ratio = parse(key, value)?,
            "adv_ratio" => self.adv_ratio = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            other => return Err(MimError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Applies every `key=value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys whose values differ between two configs.
    pub fn diff(&self, other: &TrainingConfig) -> Vec<&'static str> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, _)| a.0)
            .collect()
    }
}

/// The full model followed by one config per single ablation. Each variant
/// differs from the full config in the `ablation` key alone.
pub fn ablation_suite(base: &TrainingConfig) -> Result<Vec<TrainingConfig>> {
    let full = TrainingConfig {
        ablation: Ablation::None,
        ..base.clone()
    };
    let mut out = vec![full.clone()];
    for a in Ablation::VARIANTS {
        let v = TrainingConfig {
            ablation: a,
            ..full.clone()
        };
        if full.diff(&v) != ["ablation"] {
            return Err(MimError::Contract(format!("ablation `{}` changes more than one key", a.as_str())));
        }
        out.push(v);
    }
    Ok(out)
}

/// Splits a flat config file into `(key, value)` pairs. Blank lines and
/// `#` comments are skipped; whitespace around keys and values is trimmed.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| MimError::Config(format!("line {}: expected key=value", lineno + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(MimError::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainingConfig::default();
        cfg.learning_rate = 1.5e-4;
        cfg.weights.fir.memory = 0.25;
        cfg.ablation = Ablation::Tlu;
        let back = TrainingConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = TrainingConfig::from_text("# hi\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(TrainingConfig::from_text("seed").is_err());
        assert!(TrainingConfig::from_text("nope=1").is_err());
        assert!(TrainingConfig::from_text("seed=abc").is_err());
        assert!(TrainingConfig::from_text("learning_rate=0").is_err());
        assert!(TrainingConfig::from_text("adam_beta2=1").is_err());
        assert!(TrainingConfig::from_text("recon_ratio=0").is_err());
    }

    #[test]
    fn ablations_differ_in_one_key() {
        let base = TrainingConfig::default();
        for a in Ablation::VARIANTS {
            let cfg = TrainingConfig { ablation: a, ..base.clone() };
            assert_eq!(base.diff(&cfg), vec!["ablation"]);
        }
    }

    #[test]
    fn effective_weights_follow_ablation() {
        let mut cfg = TrainingConfig::default();
        cfg.ablation = Ablation::PseudoLoss;
        assert_eq!(cfg.effective_weights().pseudo, 0.0);
        cfg.ablation = Ablation::MemoryLoss;
        let w = cfg.effective_weights();
        assert_eq!((w.icm.memory, w.fir.memory, w.pseudo), (0.0, 0.0, 1.0));
    }
}
