//! Caption tokenization and the bidirectional LSTM word encoder.

use std::collections::HashMap;

use mimnet_tensor::Tensor;
use rand::Rng;

use crate::error::{MimError, Result};
use crate::params::{Bound, ParamStore};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const RESERVED: usize = 2;

/// Token ↔ id map. Ids 0 and 1 are PAD and UNK; real tokens start at 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from distinct tokens, in order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(MimError::format("vocabulary", format!("invalid token {t:?}")));
            }
            if vocab.index.contains_key(&t) {
                return Err(MimError::format("vocabulary", format!("duplicate token {t:?}")));
            }
            vocab.index.insert(t.clone(), vocab.tokens.len() + RESERVED);
            vocab.tokens.push(t);
        }
        Ok(vocab)
    }

    /// Reads the one-token-per-line form written by [`Vocabulary::to_text`].
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    /// Number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.tokens.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        match id {
            PAD => "<pad>",
            UNK => "<unk>",
            i => self.tokens.get(i - RESERVED).map_or("<unk>", String::as_str),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// Lowercase, whitespace-split, strip everything that is not alphanumeric.
pub fn normalize(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn tokenize(caption: &str, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let ids: Vec<usize> = normalize(caption).iter().map(|w| vocab.id(w)).collect();
    if ids.is_empty() {
        return Err(MimError::Input(format!("caption {caption:?} has no tokens")));
    }
    Ok(ids)
}

/// Per-word features of one caption.
#[derive(Debug, Clone)]
pub struct TextEncoding {
    pub token_ids: Vec<usize>,
    /// `t × 2·hidden`; row `i` is `[forward_i, backward_i]`.
    pub hidden: Tensor,
}

impl TextEncoding {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// One-layer bidirectional LSTM over learned word embeddings.
///
/// Parameters under `prefix`: `embed [V×E]`, and per direction `d ∈ {fwd, bwd}`
/// `d.wx [E×4H]`, `d.wh [H×4H]`, `d.b [1×4H]` with gate blocks ordered
/// input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub prefix: String,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub max_len: usize,
}

pub const MAX_CAPTION_LEN: usize = 16;

impl TextEncoder {
    pub fn new(prefix: &str, vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        TextEncoder {
            prefix: prefix.to_string(),
            vocab_size,
            embed_dim,
            hidden,
            max_len: MAX_CAPTION_LEN,
        }
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let (e, h) = (self.embed_dim, self.hidden);
        store.normal(self.name("embed"), &[self.vocab_size, e], 1.0, rng);
        for dir in ["fwd", "bwd"] {
            store.fan_in_uniform(self.name(&format!("{dir}.wx")), &[e, 4 * h], h, rng);
            store.fan_in_uniform(self.name(&format!("{dir}.wh")), &[h, 4 * h], h, rng);
            store.zeros(self.name(&format!("{dir}.b")), &[1, 4 * h]);
        }
    }

    fn run_direction(&self, p: &Bound, dir: &str, inputs: &Tensor, order: &[usize]) -> Result<Vec<Tensor>> {
        let h = self.hidden;
        let projected = inputs.matmul(p.get(&self.name(&format!("{dir}.wx")))?)?;
        let wh = p.get(&self.name(&format!("{dir}.wh")))?;
        let b = p.get(&self.name(&format!("{dir}.b")))?;
        let mut state_h = Tensor::zeros(&[1, h]);
        let mut state_c = Tensor::zeros(&[1, h]);
        let mut out = vec![None; order.len()];
        for &pos in order {
            let z = projected.narrow(0, pos, 1)?.add(&state_h.matmul(wh)?)?.add(b)?;
            let i = z.narrow(1, 0, h)?.sigmoid();
            let f = z.narrow(1, h, h)?.sigmoid();
            let g = z.narrow(1, 2 * h, h)?.tanh();
            let o = z.narrow(1, 3 * h, h)?.sigmoid();
            state_c = f.mul(&state_c)?.add(&i.mul(&g)?)?;
            state_h = o.mul(&state_c.tanh())?;
            out[pos] = Some(state_h.clone());
        }
        Ok(out.into_iter().map(|t| t.expect("every position visited")).collect())
    }

    pub fn encode(&self, p: &Bound, token_ids: &[usize]) -> Result<TextEncoding> {
        let t = token_ids.len();
        if t == 0 || t > self.max_len {
            return Err(MimError::Input(format!("caption length {t} outside 1..={}", self.max_len)));
        }
        if token_ids.contains(&PAD) {
            return Err(MimError::Input("PAD inside a caption".into()));
        }
        let inputs = p.get(&self.name("embed"))?.embedding(token_ids)?;
        let forward: Vec<usize> = (0..t).collect();
        let backward: Vec<usize> = (0..t).rev().collect();
        let fw = self.run_direction(p, "fwd", &inputs, &forward)?;
        let bw = self.run_direction(p, "bwd", &inputs, &backward)?;
        let rows = fw
            .iter()
            .zip(&bw)
            .map(|(a, b)| Tensor::concat(&[a, b], 1))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let hidden = Tensor::concat(&rows.iter().collect::<Vec<_>>(), 0)?;
        Ok(TextEncoding {
            token_ids: token_ids.to_vec(),
            hidden,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["a", "red", "circle"]).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        let v = vocab();
        assert_eq!(tokenize("A red circle.", &v).unwrap(), vec![2, 3, 4]);
        assert_eq!(tokenize("zzzqq red", &v).unwrap(), vec![UNK, 3]);
        assert!(tokenize("", &v).is_err());
        assert!(tokenize(" ... ", &v).is_err());
    }

    #[test]
    fn vocabulary_text_roundtrip() {
        let v = vocab();
        assert_eq!(v.to_text(), "a\nred\ncircle\n");
        let back = Vocabulary::parse(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("red"), 3);
        assert_eq!(back.token(PAD), "<pad>");
        assert!(Vocabulary::parse("a\na\n").is_err());
        assert!(Vocabulary::parse("a\n\nb\n").is_err());
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let enc = TextEncoder::new("t", 5, 3, 2);
        let mut store = ParamStore::new();
        for (name, shape) in [
            ("t.embed", vec![5, 3]),
            ("t.fwd.wx", vec![3, 8]),
            ("t.fwd.wh", vec![2, 8]),
            ("t.fwd.b", vec![1, 8]),
            ("t.bwd.wx", vec![3, 8]),
            ("t.bwd.wh", vec![2, 8]),
            ("t.bwd.b", vec![1, 8]),
        ] {
            store.zeros(name, &shape);
        }
        let out = enc.encode(&store.bind(|_| false), &[2, 3, 4]).unwrap();
        assert_eq!(out.hidden.shape(), &[3, 4]);
        assert!(out.hidden.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_lengths() {
        let enc = TextEncoder::new("t", 5, 3, 2);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        enc.register(&mut store, &mut rng);
        let p = store.bind(|_| false);
        assert!(enc.encode(&p, &[]).is_err());
        assert!(enc.encode(&p, &[2; MAX_CAPTION_LEN + 1]).is_err());
        assert!(enc.encode(&p, &[2, PAD]).is_err());
    }
}
