//! Learned texture memories and the attention that turns word features into
//! word-level texture features.
//!
//! Every word feature `h_i` scores every memory through the bilinear form
//! `h_i · W m_j`; a softmax over memories gives the attention row `a_i`, and
//! the word texture is the convex combination `ĥ_i = Σ_j a_ij m_j`. The global
//! texture `h̄` is the mean of the word textures over the caption.

use mimnet_tensor::Tensor;
use rand::Rng;

use crate::error::{MimError, Result};
use crate::params::{Bound, ParamStore};
use crate::text::TextEncoding;

pub const BANK: &str = "memory.bank";
pub const KEY: &str = "memory.key";

/// `n × l` memories plus the `l × d_text` key projection. While `frozen`,
/// the memories are bound without gradients, so no optimizer step can move
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub n: usize,
    pub width: usize,
    pub d_text: usize,
    pub frozen: bool,
}

/// Attention rows, word textures and the global texture of one caption.
#[derive(Debug, Clone)]
pub struct FusedTexture {
    /// `t × n`; absent when textures come from a direct text projection.
    pub attention: Option<Tensor>,
    /// `t × l`
    pub word_textures: Tensor,
    /// `l`
    pub global: Tensor,
}

impl FusedTexture {
    pub fn from_word_textures(attention: Option<Tensor>, word_textures: Tensor) -> Result<Self> {
        let l = word_textures.shape()[1];
        let global = word_textures.mean_axis(0, false)?.reshape(&[l])?;
        Ok(FusedTexture {
            attention,
            word_textures,
            global,
        })
    }

    pub fn len(&self) -> usize {
        self.word_textures.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MemoryBank {
    pub fn new(n: usize, width: usize, d_text: usize) -> Result<Self> {
        if n == 0 || width == 0 || d_text == 0 {
            return Err(MimError::Config("memory bank dimensions must be positive".into()));
        }
        Ok(MemoryBank {
            n,
            width,
            d_text,
            frozen: false,
        })
    }

    /// Memories ~ N(0, 0.02²); key projection uniform in ±1/sqrt(l).
    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.normal(BANK, &[self.n, self.width], 0.02, rng);
        store.fan_in_uniform(KEY, &[self.width, self.d_text], self.width, rng);
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Whether a parameter name should carry gradients under the current
    /// freeze state. Only the memories themselves are gated.
    pub fn is_trainable(&self, name: &str) -> bool {
        !(self.frozen && name == BANK)
    }

    fn check_bank(&self, p: &Bound) -> Result<Tensor> {
        let bank = p.get(BANK)?;
        if bank.shape() != [self.n, self.width] {
            return Err(MimError::Dimension {
                what: "memory bank".into(),
                got: bank.shape().to_vec(),
                expected: vec![self.n, self.width],
            });
        }
        Ok(bank.clone())
    }

    /// Attention of each word over the memories, then the convex mix.
    pub fn fuse(&self, p: &Bound, text: &TextEncoding) -> Result<FusedTexture> {
        let h = &text.hidden;
        if h.rank() != 2 || h.shape()[1] != self.d_text {
            return Err(MimError::Dimension {
                what: "fuse_memory word features".into(),
                got: h.shape().to_vec(),
                expected: vec![text.len(), self.d_text],
            });
        }
        let bank = self.check_bank(p)?;
        let keys = bank.matmul(p.get(KEY)?)?; // n × d_text
        let logits = h.matmul(&keys.transpose()?)?; // t × n
        let attention = logits.softmax(1)?;
        let word_textures = attention.matmul(&bank)?;
        FusedTexture::from_word_textures(Some(attention), word_textures)
    }

    /// Word textures from externally chosen attention rows, bypassing text.
    pub fn texture_from_attention(&self, p: &Bound, rows: &Tensor) -> Result<FusedTexture> {
        if rows.rank() != 2 || rows.shape()[1] != self.n {
            return Err(MimError::Dimension {
                what: "attention rows".into(),
                got: rows.shape().to_vec(),
                expected: vec![rows.shape().first().copied().unwrap_or(1), self.n],
            });
        }
        for row in rows.data().chunks(self.n) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&a| !(a >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(MimError::Input(format!("attention row {row:?} is not on the simplex")));
            }
        }
        let bank = self.check_bank(p)?;
        let word_textures = rows.matmul(&bank)?;
        FusedTexture::from_word_textures(Some(rows.clone()), word_textures)
    }
}

/// A one-hot attention row with the hot index uniform over `0..n`.
pub fn sample_random_attention(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    assert!(n >= 1, "memory bank cannot be empty");
    let mut row = vec![0.0; n];
    row[rng.gen_range(0..n)] = 1.0;
    row
}

/// `rows` independent one-hot rows as a `rows × n` tensor.
pub fn sample_random_attention_rows(rows: usize, n: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows).flat_map(|_| sample_random_attention(n, rng)).collect();
    Tensor::from_vec(&[rows, n], data).expect("rows ≥ 1")
}
