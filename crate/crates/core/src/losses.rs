//! Training objectives. Every log-loss is computed from logits (or from
//! `log D_T`) so finite inputs never produce infinities.

use std::collections::BTreeMap;

use mimnet_tensor::Tensor;

use crate::config::LossWeights;
use crate::error::{MimError, Result};
use crate::manipulate::Stage;

/// Smallest `log D_T` fed to `log(1 − D_T)`; keeps the fake-caption term
/// finite when every word weight vanishes.
const LOG_TEXT_CEIL: f64 = -1e-12;

/// Identifies which sample an image or a caption came from, so that paired
/// losses can check their precondition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairing {
    pub image: usize,
    pub caption: usize,
}

impl Pairing {
    pub fn paired(id: usize) -> Self {
        Pairing { image: id, caption: id }
    }
}

/// Per-pixel squared error between the stage output and the input image.
/// The fine output is compared with the nearest-upsampled input.
pub fn loss_rec(stage: Stage, image: &Tensor, output: &Tensor, pairing: Pairing) -> Result<Tensor> {
    if pairing.image != pairing.caption {
        return Err(MimError::Contract(format!(
            "reconstruction needs a paired caption (image {}, caption from {})",
            pairing.image, pairing.caption
        )));
    }
    let target = match stage {
        Stage::Icm => image.clone(),
        Stage::Fir => image.upsample_nearest2x()?,
    };
    if target.shape() != output.shape() {
        return Err(MimError::Dimension {
            what: format!("{stage} reconstruction"),
            got: output.shape().to_vec(),
            expected: target.shape().to_vec(),
        });
    }
    Ok(output.mse(&target)?)
}

/// Mean absolute difference between the α-weighted spatial average of the
/// image features and the global texture.
pub fn loss_pseudo(v_i: &Tensor, alpha: &Tensor, h_bar: &Tensor) -> Result<Tensor> {
    let l = h_bar.numel();
    if v_i.rank() != 3 || v_i.shape()[0] != l || alpha.shape() != [1, v_i.shape()[1], v_i.shape()[2]] {
        return Err(MimError::Dimension {
            what: "pseudo loss features".into(),
            got: v_i.shape().to_vec(),
            expected: vec![l, alpha.shape().get(1).copied().unwrap_or(0), alpha.shape().get(2).copied().unwrap_or(0)],
        });
    }
    let mass = alpha.sum();
    if !(mass.item() >= 1e-8) {
        return Err(MimError::Tensor(mimnet_tensor::TensorError::Numeric {
            op: "loss_pseudo",
            msg: format!("gate mass {} below 1e-8", mass.item()),
        }));
    }
    let weighted = v_i.mul(alpha)?.sum_axis(2, false)?.sum_axis(1, false)?;
    let pooled = weighted.div(&mass)?;
    Ok(pooled.l1_distance(&h_bar.reshape(&[l])?)?)
}

/// `−log σ(logit)`, i.e. `−log D_I` of an image the generator wants judged
/// real. Used for `L_m` and `L_I`.
pub fn loss_fool_reality(reality_logit: &Tensor) -> Tensor {
    reality_logit.log_sigmoid().neg()
}

/// `−log D_T`.
pub fn loss_fool_text(log_text: &Tensor) -> Tensor {
    log_text.neg()
}

/// `log(1 − D_T)` from `log D_T`.
pub fn log_one_minus_text(log_text: &Tensor) -> Result<Tensor> {
    Ok(log_text.clamp_max(LOG_TEXT_CEIL).log1mexp()?)
}

/// The four discriminator terms of one sample:
/// `−[log D_I(I) + log(1 − D_I(Ĩ)) + log D_T(I, T) + log(1 − D_T(Ĩ, T̂))]`.
/// The fake inputs must already be detached from the generator.
pub fn loss_discriminator(
    real_logit: &Tensor,
    fake_logit: &Tensor,
    real_log_text: &Tensor,
    fake_log_text: &Tensor,
) -> Result<Tensor> {
    let total = real_logit
        .log_sigmoid()
        .add(&fake_logit.neg().log_sigmoid())?
        .add(real_log_text)?
        .add(&log_one_minus_text(fake_log_text)?)?;
    Ok(total.neg())
}

/// `−log(1 − D_I(I))` on a fake image: the discriminator's side of `L_m`.
pub fn loss_reject_reality(fake_logit: &Tensor) -> Tensor {
    fake_logit.neg().log_sigmoid().neg()
}

/// Named scalar losses, keyed like the weights: `pseudo`, `<stage>.rec`,
/// `<stage>.memory`, `<stage>.reality`, `<stage>.text`, `<stage>.disc`.
pub type LossTerms = BTreeMap<String, Tensor>;

pub fn generator_weight(w: &LossWeights, key: &str) -> Option<f64> {
    let (stage, term) = match key.split_once('.') {
        Some((s, t)) => (s, t),
        None => return (key == "pseudo").then_some(w.pseudo),
    };
    let sw = match stage {
        "icm" => &w.icm,
        "fir" => &w.fir,
        _ => return None,
    };
    match term {
        "reality" => Some(sw.reality),
        "text" => Some(sw.text),
        "rec" => Some(sw.rec),
        "memory" => Some(sw.memory),
        _ => None,
    }
}

pub fn discriminator_weight(w: &LossWeights, key: &str) -> Option<f64> {
    match key {
        "icm.disc" => Some(w.beta_icm),
        "fir.disc" => Some(w.beta_fir),
        _ => None,
    }
}

fn integrate(terms: &LossTerms, weight: impl Fn(&str) -> Option<f64>) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for (name, value) in terms {
        let w = weight(name).ok_or_else(|| MimError::Contract(format!("no weight for loss `{name}`")))?;
        let v = value.item();
        if !v.is_finite() {
            return Err(MimError::NonFinite {
                component: name.clone(),
                value: v,
            });
        }
        if w != 0.0 {
            total = total.add(&value.mul_scalar(w))?;
        }
    }
    Ok(total)
}

/// `λ_p L_p + Σ_stages (λ_I L_I + λ_T L_T + λ_rec L_rec + λ_m L_m)` over the
/// terms present.
pub fn integrate_generator(terms: &LossTerms, w: &LossWeights) -> Result<Tensor> {
    integrate(terms, |k| generator_weight(w, k))
}

/// `β_icm L_D^icm + β_fir L_D^fir` over the terms present.
pub fn integrate_discriminator(terms: &LossTerms, w: &LossWeights) -> Result<Tensor> {
    integrate(terms, |k| discriminator_weight(w, k))
}
