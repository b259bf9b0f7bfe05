//! The two generator stages.
//!
//! ICM projects every boundary feature together with the global texture into
//! a manipulated feature, gates it against the original image features with
//! the TLU map and decodes a coarse image. FIR lets each position of the
//! upsampled features attend over the word textures and decodes at twice the
//! input resolution.

use std::fmt;
use std::str::FromStr;

use mimnet_tensor::Tensor;
use rand::Rng;

use crate::config::ModelDims;
use crate::error::{MimError, Result};
use crate::memory::FusedTexture;
use crate::params::{Bound, ParamStore};
use crate::vision::{coarse_decoder, expect_shape, fine_decoder, Decoder, ResidualBlock};

pub const ICM_PROJECTION: &str = "icm.wr";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Icm,
    Fir,
}

impl Stage {
    pub const BOTH: [Stage; 2] = [Stage::Icm, Stage::Fir];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Icm => "icm",
            Stage::Fir => "fir",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = MimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icm" => Ok(Stage::Icm),
            "fir" => Ok(Stage::Fir),
            other => Err(MimError::Input(format!("unknown stage `{other}` (icm, fir)"))),
        }
    }
}

/// How the TLU map is obtained. `Forced` replaces it by a constant, which is
/// how the TLU ablation and the gate-limit checks run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Learned,
    Forced(f64),
}

/// Every intermediate of one manipulation.
#[derive(Debug, Clone)]
pub struct ManipulationState {
    pub v_i: Tensor,
    pub v_b: Tensor,
    pub fused: FusedTexture,
    /// Output of the `W_r` projection, before the residual block.
    pub v: Tensor,
    pub v_c: Tensor,
    pub alpha: Tensor,
    pub v_u: Tensor,
    pub i_c: Tensor,
    pub h_f: Option<Tensor>,
    pub i_f: Option<Tensor>,
}

impl ManipulationState {
    pub fn output(&self, stage: Stage) -> Result<&Tensor> {
        match stage {
            Stage::Icm => Ok(&self.i_c),
            Stage::Fir => self
                .i_f
                .as_ref()
                .ok_or_else(|| MimError::Contract("fine stage was not run".into())),
        }
    }
}

/// TLU: `σ(v_c(x,y) · h̄)` at each position, shape `1×H×W`.
pub fn tlu(v_c: &Tensor, h_bar: &Tensor) -> Result<Tensor> {
    let l = h_bar.numel();
    if v_c.rank() != 3 || v_c.shape()[0] != l {
        return Err(MimError::Dimension {
            what: "tlu features".into(),
            got: v_c.shape().to_vec(),
            expected: vec![l, v_c.shape().get(1).copied().unwrap_or(1), v_c.shape().get(2).copied().unwrap_or(1)],
        });
    }
    Ok(v_c.dot_axis(&h_bar.reshape(&[l, 1, 1])?, 0, true)?.sigmoid())
}

/// `h_f(x,y) = (1/t) Σ_k σ(v_u(x,y) · ĥ_k) ĥ_k`, shape `l×H×W`.
pub fn fir_textures(v_u: &Tensor, word_textures: &Tensor) -> Result<Tensor> {
    let (t, l) = (word_textures.shape()[0], word_textures.shape()[1]);
    if v_u.rank() != 3 || v_u.shape()[0] != l {
        return Err(MimError::Dimension {
            what: "fir features".into(),
            got: v_u.shape().to_vec(),
            expected: vec![l, v_u.shape().get(1).copied().unwrap_or(1), v_u.shape().get(2).copied().unwrap_or(1)],
        });
    }
    let (h, w) = (v_u.shape()[1], v_u.shape()[2]);
    let flat = v_u.reshape(&[l, h * w])?;
    let scores = word_textures.matmul(&flat)?.sigmoid(); // t × HW
    let mixed = word_textures.transpose()?.matmul(&scores)?.mul_scalar(1.0 / t as f64);
    Ok(mixed.reshape(&[l, h, w])?)
}

/// Parameters and wiring of ICM and FIR.
#[derive(Debug, Clone)]
pub struct Manipulator {
    pub dims: ModelDims,
    pub residual: ResidualBlock,
    pub coarse: Decoder,
    pub fine: Decoder,
}

impl Manipulator {
    pub fn new(dims: &ModelDims) -> Self {
        Manipulator {
            dims: dims.clone(),
            residual: ResidualBlock {
                prefix: "icm.res".into(),
                channels: dims.mem_width,
                hidden: dims.res_hidden,
            },
            coarse: coarse_decoder("icm.dec", dims),
            fine: fine_decoder("fir.dec", dims),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let l = self.dims.mem_width;
        store.fan_in_uniform(ICM_PROJECTION, &[l, 2 * l, 1, 1], 2 * l, rng);
        self.residual.register(store, rng);
        self.coarse.register(store, rng);
        self.fine.register(store, rng);
    }

    /// Coarse stage. Returns the state with the fine fields unset.
    pub fn icm_forward(
        &self,
        p: &Bound,
        v_i: &Tensor,
        v_b: &Tensor,
        fused: &FusedTexture,
        gate: Gate,
    ) -> Result<ManipulationState> {
        let l = self.dims.mem_width;
        let s = self.dims.feature_size();
        expect_shape("icm image features", v_i, &[l, s, s])?;
        expect_shape("icm boundary features", v_b, &[l, s, s])?;
        expect_shape("icm global texture", &fused.global, &[l])?;
        let h_bar = fused.global.reshape(&[l, 1, 1])?.broadcast_to(&[l, s, s])?;
        let v = Tensor::concat(&[v_b, &h_bar], 0)?.conv2d(p.get(ICM_PROJECTION)?, 1, 0)?;
        let v_c = self.residual.forward(p, &v)?;
        let alpha = match gate {
            Gate::Learned => tlu(&v_c, &fused.global)?,
            Gate::Forced(a) => Tensor::full(&[1, s, s], a),
        };
        let mixed = alpha.mul(&v_c)?.add(&alpha.rsub_scalar(1.0).mul(v_i)?)?;
        let v_u = mixed.upsample_nearest2x()?;
        let i_c = self.coarse.forward(p, &v_u)?;
        Ok(ManipulationState {
            v_i: v_i.clone(),
            v_b: v_b.clone(),
            fused: fused.clone(),
            v,
            v_c,
            alpha,
            v_u,
            i_c,
            h_f: None,
            i_f: None,
        })
    }

    /// Fine stage on top of a coarse state.
    pub fn fir_forward(&self, p: &Bound, state: &mut ManipulationState) -> Result<()> {
        let h_f = fir_textures(&state.v_u, &state.fused.word_textures)?;
        let joined = Tensor::concat(&[&state.v_u, &h_f], 0)?.upsample_nearest2x()?;
        state.i_f = Some(self.fine.forward(p, &joined)?);
        state.h_f = Some(h_f);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], f: impl Fn(usize) -> f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn tlu_limits() {
        let v_c = t(&[3, 2, 2], |i| (i as f64 * 0.7).sin());
        let zero = tlu(&v_c, &Tensor::zeros(&[3])).unwrap();
        assert!(zero.data().iter().all(|&a| a == 0.5));
        let h = t(&[3], |i| i as f64 - 0.6);
        let a = tlu(&v_c, &h).unwrap();
        let b = tlu(&v_c, &h.neg()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x + y - 1.0).abs() < 1e-15);
        }
        assert!(tlu(&v_c, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn fir_single_word_and_orthogonal_position() {
        let word = t(&[1, 2], |i| [0.5, -1.0][i]);
        let v_u = t(&[2, 1, 2], |i| [1.0, 2.0, 3.0, 1.0][i]);
        let h_f = fir_textures(&v_u, &word).unwrap();
        let s0 = mimnet_tensor::sigmoid(0.5 * 1.0 - 1.0 * 3.0);
        assert!((h_f.data()[0] - s0 * 0.5).abs() < 1e-15);
        assert!((h_f.data()[2] - -s0).abs() < 1e-15);

        let words = t(&[2, 2], |i| [1.0, 0.0, 2.0, 0.0][i]);
        let orth = t(&[2, 1, 1], |i| [0.0, 5.0][i]);
        let h_f = fir_textures(&orth, &words).unwrap();
        assert!((h_f.data()[0] - 0.5 * 0.5 * 3.0).abs() < 1e-15);
        assert_eq!(h_f.data()[1], 0.0);
    }

    #[test]
    fn stage_names_roundtrip() {
        for s in Stage::BOTH {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("xyz".parse::<Stage>().is_err());
    }
}
