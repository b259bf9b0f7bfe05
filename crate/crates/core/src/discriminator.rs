//! Reality and text-conformity discriminators, one pair per stage.
//!
//! A stride-2 convolution trunk reduces the image to `4×4`, a dense layer
//! gives the feature vector `f(I)`. The reality head is a linear logit; the
//! text head scores every word through `f(I)·W(h_i) + b(h_i)` and combines the
//! word scores as a product with per-word exponents `α_i`, evaluated in log
//! space.

use mimnet_tensor::Tensor;
use rand::Rng;

use crate::config::ModelDims;
use crate::error::{MimError, Result};
use crate::manipulate::Stage;
use crate::params::{Bound, ParamStore};
use crate::text::{TextEncoder, TextEncoding};
use crate::vision::{conv, expect_shape, register_conv};

/// Spatial size at which the trunk stops downsampling.
const TRUNK_END: usize = 4;

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub stage: Stage,
    pub prefix: String,
    pub in_size: usize,
    /// Output channels of each trunk layer.
    pub channels: Vec<usize>,
    pub feature: usize,
    pub d_text: usize,
    /// The discriminator's own caption encoder.
    pub text: TextEncoder,
}

/// Scores of one image (and optionally one caption).
#[derive(Debug, Clone)]
pub struct Scores {
    /// Logit of `D_I`; `D_I = σ(logit)`.
    pub reality_logit: Tensor,
    /// `log D_T`, always ≤ 0.
    pub log_text: Option<Tensor>,
}

impl Discriminator {
    pub fn new(stage: Stage, dims: &ModelDims, vocab_size: usize) -> Result<Self> {
        let in_size = match stage {
            Stage::Icm => dims.image_size,
            Stage::Fir => dims.fine_size(),
        };
        if in_size < TRUNK_END || !(in_size / TRUNK_END).is_power_of_two() || in_size % TRUNK_END != 0 {
            return Err(MimError::Config(format!("discriminator input {in_size} is not 4·2^k")));
        }
        let layers = (in_size / TRUNK_END).trailing_zeros() as usize;
        let channels = (0..layers).map(|i| (dims.disc_base << i).min(dims.disc_cap)).collect();
        let prefix = format!("d_{}", stage.as_str());
        Ok(Discriminator {
            stage,
            text: TextEncoder::new(&format!("{prefix}.text"), vocab_size, dims.embed_dim, dims.text_hidden),
            prefix,
            in_size,
            channels,
            feature: dims.disc_feature,
            d_text: dims.d_text(),
        })
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    fn flat_width(&self) -> usize {
        self.channels.last().copied().unwrap_or(3) * TRUNK_END * TRUNK_END
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let mut c_in = 3;
        for (i, &c) in self.channels.iter().enumerate() {
            register_conv(store, &self.name(&format!("conv{i}")), c, c_in, 3, rng);
            c_in = c;
        }
        let (flat, f, d) = (self.flat_width(), self.feature, self.d_text);
        store.fan_in_uniform(self.name("fc.w"), &[flat, f], flat, rng);
        store.zeros(self.name("fc.b"), &[1, f]);
        store.fan_in_uniform(self.name("real.w"), &[f, 1], f, rng);
        store.zeros(self.name("real.b"), &[1, 1]);
        store.fan_in_uniform(self.name("word.w"), &[d, f], d, rng);
        store.zeros(self.name("word.b"), &[1, f]);
        store.fan_in_uniform(self.name("bias.w"), &[d, 1], d, rng);
        store.zeros(self.name("bias.b"), &[1, 1]);
        self.text.register(store, rng);
    }

    /// `f(I)`, shape `1×F`.
    pub fn features(&self, p: &Bound, image: &Tensor) -> Result<Tensor> {
        expect_shape(&format!("{} input", self.prefix), image, &[3, self.in_size, self.in_size])?;
        let mut x = image.clone();
        for i in 0..self.channels.len() {
            x = conv(p, &self.name(&format!("conv{i}")), &x, 2, 1)?.leaky_relu();
        }
        let flat = x.reshape(&[1, self.flat_width()])?;
        Ok(flat.matmul(p.get(&self.name("fc.w"))?)?.add(p.get(&self.name("fc.b"))?)?.leaky_relu())
    }

    /// Logit of `D_I` from features.
    pub fn reality_logit(&self, p: &Bound, f: &Tensor) -> Result<Tensor> {
        let z = f.matmul(p.get(&self.name("real.w"))?)?.add(p.get(&self.name("real.b"))?)?;
        Ok(z.reshape(&[])?)
    }

    /// `log D_T = Σ_i α_i log σ(f·W(h_i) + b(h_i))` for given exponents.
    pub fn log_text_with_weights(&self, p: &Bound, f: &Tensor, hidden: &Tensor, weights: &Tensor) -> Result<Tensor> {
        let t = hidden.shape()[0];
        expect_shape("word features", hidden, &[t, self.d_text])?;
        expect_shape("word importance", weights, &[t, 1])?;
        let w_h = hidden.matmul(p.get(&self.name("word.w"))?)?.add(p.get(&self.name("word.b"))?)?; // t × F
        let b_h = hidden.matmul(p.get(&self.name("bias.w"))?)?.add(p.get(&self.name("bias.b"))?)?; // t × 1
        let inner = w_h.matmul(&f.transpose()?)?.add(&b_h)?;
        Ok(weights.mul(&inner.log_sigmoid())?.sum())
    }

    /// Encodes a caption with the discriminator's own text encoder.
    pub fn encode_text(&self, p: &Bound, token_ids: &[usize]) -> Result<TextEncoding> {
        self.text.encode(p, token_ids)
    }

    /// `log D_T` with the learned word importance.
    pub fn log_text(&self, p: &Bound, f: &Tensor, text: &TextEncoding) -> Result<Tensor> {
        let weights = word_importance(&text.hidden)?;
        self.log_text_with_weights(p, f, &text.hidden, &weights)
    }

    pub fn score(&self, p: &Bound, image: &Tensor, text: Option<&TextEncoding>) -> Result<Scores> {
        let f = self.features(p, image)?;
        Ok(Scores {
            reality_logit: self.reality_logit(p, &f)?,
            log_text: text.map(|t| self.log_text(p, &f, t)).transpose()?,
        })
    }

    /// `D_I(I) ∈ (0, 1)`.
    pub fn reality_score(&self, p: &Bound, image: &Tensor) -> Result<f64> {
        let f = self.features(p, image)?;
        Ok(mimnet_tensor::sigmoid(self.reality_logit(p, &f)?.item()))
    }

    /// `D_T(I, T) ∈ (0, 1]`.
    pub fn text_conformity_score(&self, p: &Bound, image: &Tensor, text: &TextEncoding) -> Result<f64> {
        let f = self.features(p, image)?;
        Ok(self.log_text(p, &f, text)?.item().exp())
    }
}

/// `α_i = σ(h_i · mean_k h_k)`, shape `t×1`.
pub fn word_importance(hidden: &Tensor) -> Result<Tensor> {
    if hidden.rank() != 2 || hidden.shape()[0] == 0 {
        return Err(MimError::Input(format!("word features of shape {:?}", hidden.shape())));
    }
    let mean = hidden.mean_axis(0, true)?;
    Ok(hidden.dot_axis(&mean, 1, true)?.sigmoid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params(d: &Discriminator) -> Bound {
        let mut store = ParamStore::new();
        d.register(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<String> = store.names().map(String::from).collect();
        for n in names {
            let p = store.get_mut(&n).unwrap();
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        store.bind(|_| false)
    }

    #[test]
    fn trunk_layout() {
        let dims = ModelDims::default();
        let d = Discriminator::new(Stage::Icm, &dims, 10).unwrap();
        assert_eq!(d.channels, vec![4, 8, 16]);
        let d = Discriminator::new(Stage::Fir, &dims, 10).unwrap();
        assert_eq!(d.channels, vec![4, 8, 16, 16]);
        assert_eq!(d.prefix, "d_fir");
    }

    #[test]
    fn zero_parameters_score_one_half() {
        let dims = ModelDims::reduced();
        let d = Discriminator::new(Stage::Icm, &dims, 6).unwrap();
        let p = zero_params(&d);
        let img = Tensor::full(&[3, 16, 16], 0.3);
        assert_eq!(d.reality_score(&p, &img).unwrap(), 0.5);
        assert!(d.reality_score(&p, &Tensor::zeros(&[3, 32, 32])).is_err());
    }

    #[test]
    fn word_importance_cases() {
        let h = Tensor::from_vec(&[1, 2], vec![0.5, -1.0]).unwrap();
        let a = word_importance(&h).unwrap();
        assert!((a.item() - mimnet_tensor::sigmoid(1.25)).abs() < 1e-15);
        let z = word_importance(&Tensor::zeros(&[3, 4])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn text_score_limits() {
        let dims = ModelDims::reduced();
        let d = Discriminator::new(Stage::Icm, &dims, 6).unwrap();
        let mut store = ParamStore::new();
        d.register(&mut store, &mut ChaCha8Rng::seed_from_u64(4));
        let p = store.bind(|_| false);
        let f = d.features(&p, &Tensor::full(&[3, 16, 16], 0.2)).unwrap();
        let h = Tensor::from_vec(&[2, dims.d_text()], (0..2 * dims.d_text()).map(|i| i as f64 * 0.1).collect()).unwrap();
        let none = d.log_text_with_weights(&p, &f, &h, &Tensor::zeros(&[2, 1])).unwrap();
        assert_eq!(none.item().exp(), 1.0);
        let some = d.log_text_with_weights(&p, &f, &h, &Tensor::ones(&[2, 1])).unwrap();
        assert!(some.item() < 0.0);
    }
}
