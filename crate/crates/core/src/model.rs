//! The full network: caption encoder, image/boundary encoder, memory bank,
//! both generator stages and one discriminator per stage.

use mimnet_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Ablation, ModelDims};
use crate::discriminator::Discriminator;
use crate::error::{MimError, Result};
use crate::manipulate::{Gate, ManipulationState, Manipulator, Stage};
use crate::memory::{FusedTexture, MemoryBank};
use crate::params::{Bound, ParamStore};
use crate::text::{TextEncoder, TextEncoding};
use crate::vision::Encoder;

/// Replaces the memory attention under the memory ablation: `ĥ_i = h_i W_d`.
pub const DIRECT_TEXTURE: &str = "memory.direct";

/// Discriminator parameters are exactly those under `d_`.
pub fn is_discriminator_param(name: &str) -> bool {
    name.starts_with("d_")
}

#[derive(Debug, Clone)]
pub struct MimNet {
    pub dims: ModelDims,
    pub vocab_size: usize,
    pub ablation: Ablation,
    pub text: TextEncoder,
    pub encoder: Encoder,
    pub memory: MemoryBank,
    pub manipulator: Manipulator,
    pub d_icm: Discriminator,
    pub d_fir: Discriminator,
}

impl MimNet {
    pub fn new(dims: &ModelDims, vocab_size: usize, ablation: Ablation) -> Result<Self> {
        dims.validate()?;
        if vocab_size < 3 {
            return Err(MimError::Config(format!("vocabulary of {vocab_size} ids is too small")));
        }
        Ok(MimNet {
            dims: dims.clone(),
            vocab_size,
            ablation,
            text: TextEncoder::new("text", vocab_size, dims.embed_dim, dims.text_hidden),
            encoder: Encoder::new("enc", dims),
            memory: MemoryBank::new(dims.n_memories, dims.mem_width, dims.d_text())?,
            manipulator: Manipulator::new(dims),
            d_icm: Discriminator::new(Stage::Icm, dims, vocab_size)?,
            d_fir: Discriminator::new(Stage::Fir, dims, vocab_size)?,
        })
    }

    /// Fresh parameters; a pure function of `seed`.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.text.register(&mut store, &mut rng);
        self.encoder.register(&mut store, &mut rng);
        self.memory.register(&mut store, &mut rng);
        if self.ablation == Ablation::Memory {
            let (d, l) = (self.dims.d_text(), self.dims.mem_width);
            store.fan_in_uniform(DIRECT_TEXTURE, &[d, l], d, &mut rng);
        }
        self.manipulator.register(&mut store, &mut rng);
        self.d_icm.register(&mut store, &mut rng);
        self.d_fir.register(&mut store, &mut rng);
        store
    }

    pub fn gate(&self) -> Gate {
        match self.ablation {
            Ablation::Tlu => Gate::Forced(1.0),
            _ => Gate::Learned,
        }
    }

    pub fn uses_memory(&self) -> bool {
        self.ablation != Ablation::Memory
    }

    pub fn discriminator(&self, stage: Stage) -> &Discriminator {
        match stage {
            Stage::Icm => &self.d_icm,
            Stage::Fir => &self.d_fir,
        }
    }

    /// Generator-side parameters that may move right now: everything outside
    /// the discriminators, minus the memories while they are frozen.
    pub fn generator_trainable(&self, name: &str) -> bool {
        !is_discriminator_param(name) && self.memory.is_trainable(name)
    }

    pub fn encode_text(&self, p: &Bound, token_ids: &[usize]) -> Result<TextEncoding> {
        self.text.encode(p, token_ids)
    }

    /// Word and global textures of a caption.
    pub fn fuse(&self, p: &Bound, text: &TextEncoding) -> Result<FusedTexture> {
        if self.uses_memory() {
            self.memory.fuse(p, text)
        } else {
            let word = text.hidden.matmul(p.get(DIRECT_TEXTURE)?)?;
            FusedTexture::from_word_textures(None, word)
        }
    }

    /// `(v_i, v_b)` feature maps.
    pub fn encode_images(&self, p: &Bound, image: &Tensor, boundary: &Tensor) -> Result<(Tensor, Tensor)> {
        let v_i = self.encoder.encode_image(p, image)?.tensor;
        let v_b = self.encoder.encode_boundary(p, boundary)?.tensor;
        Ok((v_i, v_b))
    }

    /// Runs ICM and, for `Stage::Fir`, FIR on given textures.
    pub fn manipulate_fused(
        &self,
        p: &Bound,
        v_i: &Tensor,
        v_b: &Tensor,
        fused: &FusedTexture,
        stage: Stage,
    ) -> Result<ManipulationState> {
        let mut state = self.manipulator.icm_forward(p, v_i, v_b, fused, self.gate())?;
        if stage == Stage::Fir {
            self.manipulator.fir_forward(p, &mut state)?;
        }
        Ok(state)
    }

    pub fn manipulate(
        &self,
        p: &Bound,
        image: &Tensor,
        boundary: &Tensor,
        token_ids: &[usize],
        stage: Stage,
    ) -> Result<ManipulationState> {
        let text = self.encode_text(p, token_ids)?;
        let fused = self.fuse(p, &text)?;
        let (v_i, v_b) = self.encode_images(p, image, boundary)?;
        self.manipulate_fused(p, &v_i, &v_b, &fused, stage)
    }

    /// `I_c` for `Stage::Icm`, `I_f` for `Stage::Fir`.
    pub fn generate(&self, p: &Bound, image: &Tensor, boundary: &Tensor, token_ids: &[usize], stage: Stage) -> Result<Tensor> {
        let state = self.manipulate(p, image, boundary, token_ids, stage)?;
        Ok(state.output(stage)?.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_shapes_and_determinism() {
        let dims = ModelDims::reduced();
        let net = MimNet::new(&dims, 8, Ablation::None).unwrap();
        let store = net.init(5);
        assert!(store.bitwise_eq(&net.init(5)));
        let p = store.bind(|_| false);
        let img = Tensor::full(&[3, 16, 16], 0.2);
        let bnd = Tensor::full(&[1, 16, 16], 0.1);
        let a = net.generate(&p, &img, &bnd, &[2, 3, 4], Stage::Fir).unwrap();
        assert_eq!(a.shape(), &[3, 32, 32]);
        let b = net.generate(&store.bind(|_| false), &img, &bnd, &[2, 3, 4], Stage::Fir).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = net.generate(&p, &img, &bnd, &[2, 3, 4], Stage::Icm).unwrap();
        assert_eq!(c.shape(), &[3, 16, 16]);
    }

    #[test]
    fn ablations_change_the_wiring() {
        let dims = ModelDims::reduced();
        let direct = MimNet::new(&dims, 8, Ablation::Memory).unwrap();
        let store = direct.init(1);
        assert!(store.get(DIRECT_TEXTURE).is_some());
        let p = store.bind(|_| false);
        let text = direct.encode_text(&p, &[2, 5]).unwrap();
        assert!(direct.fuse(&p, &text).unwrap().attention.is_none());
        let no_tlu = MimNet::new(&dims, 8, Ablation::Tlu).unwrap();
        let p = no_tlu.init(1).bind(|_| false);
        let st = no_tlu
            .manipulate(&p, &Tensor::zeros(&[3, 16, 16]), &Tensor::zeros(&[1, 16, 16]), &[3], Stage::Icm)
            .unwrap();
        assert!(st.alpha.data().iter().all(|&a| a == 1.0));
    }
}
