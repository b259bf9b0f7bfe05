//! Image-side blocks: the shared feature encoder, the residual block and the
//! two decoders.

use mimnet_tensor::Tensor;
use rand::Rng;

use crate::config::ModelDims;
use crate::error::{MimError, Result};
use crate::params::{Bound, ParamStore};

/// Where a feature map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Image,
    Boundary,
    Manipulated,
    Upsampled,
}

#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub source: FeatureSource,
}

pub(crate) fn expect_shape(what: &str, t: &Tensor, want: &[usize]) -> Result<()> {
    if t.shape() != want {
        return Err(MimError::Dimension {
            what: what.to_string(),
            got: t.shape().to_vec(),
            expected: want.to_vec(),
        });
    }
    Ok(())
}

/// Registers a convolution kernel `[out, in, k, k]` and a bias `[out, 1, 1]`.
pub(crate) fn register_conv(store: &mut ParamStore, name: &str, c_out: usize, c_in: usize, k: usize, rng: &mut impl Rng) {
    store.fan_in_uniform(format!("{name}.w"), &[c_out, c_in, k, k], c_in * k * k, rng);
    store.zeros(format!("{name}.b"), &[c_out, 1, 1]);
}

pub(crate) fn conv(p: &Bound, name: &str, x: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    Ok(x.conv2d(w, stride, pad)?.add(b)?)
}

/// Two stride-2 convolutions. Images and boundary maps each have their own
/// first layer and share the second.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub prefix: String,
    pub dims: ModelDims,
}

impl Encoder {
    pub fn new(prefix: &str, dims: &ModelDims) -> Self {
        Encoder {
            prefix: prefix.into(),
            dims: dims.clone(),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = &self.dims;
        register_conv(store, &format!("{}.image", self.prefix), d.enc_channels, 3, 3, rng);
        register_conv(store, &format!("{}.boundary", self.prefix), d.enc_channels, 1, 3, rng);
        register_conv(store, &format!("{}.trunk", self.prefix), d.mem_width, d.enc_channels, 3, rng);
    }

    fn run(&self, p: &Bound, adapter: &str, x: &Tensor) -> Result<Tensor> {
        let h = conv(p, &format!("{}.{adapter}", self.prefix), x, 2, 1)?.relu();
        Ok(conv(p, &format!("{}.trunk", self.prefix), &h, 2, 1)?.relu())
    }

    /// `3×S×S` image in [−1, 1] → `l × S/4 × S/4`.
    pub fn encode_image(&self, p: &Bound, image: &Tensor) -> Result<FeatureMap> {
        let s = self.dims.image_size;
        expect_shape("encode_image", image, &[3, s, s])?;
        Ok(FeatureMap {
            tensor: self.run(p, "image", image)?,
            source: FeatureSource::Image,
        })
    }

    /// `1×S×S` edge map → `l × S/4 × S/4`.
    pub fn encode_boundary(&self, p: &Bound, boundary: &Tensor) -> Result<FeatureMap> {
        let s = self.dims.image_size;
        expect_shape("encode_boundary", boundary, &[1, s, s])?;
        Ok(FeatureMap {
            tensor: self.run(p, "boundary", boundary)?,
            source: FeatureSource::Boundary,
        })
    }
}

/// `f_r(v) + v` with `f_r` = conv → relu → conv. The second convolution
/// starts at zero, so the block is the identity at initialisation.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub prefix: String,
    pub channels: usize,
    pub hidden: usize,
}

impl ResidualBlock {
    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        register_conv(store, &format!("{}.c1", self.prefix), self.hidden, self.channels, 3, rng);
        store.zeros(format!("{}.c2.w", self.prefix), &[self.channels, self.hidden, 3, 3]);
        store.zeros(format!("{}.c2.b", self.prefix), &[self.channels, 1, 1]);
    }

    pub fn forward(&self, p: &Bound, v: &Tensor) -> Result<Tensor> {
        if v.rank() != 3 || v.shape()[0] != self.channels {
            let mut expected = v.shape().to_vec();
            expected.resize(3, 1);
            expected[0] = self.channels;
            return Err(MimError::Dimension {
                what: "residual block input".into(),
                got: v.shape().to_vec(),
                expected,
            });
        }
        let h = conv(p, &format!("{}.c1", self.prefix), v, 1, 1)?.relu();
        let r = conv(p, &format!("{}.c2", self.prefix), &h, 1, 1)?;
        Ok(r.add(v)?)
    }
}

/// conv → relu → 2× upsample → 3×3 conv → tanh.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub prefix: String,
    pub in_channels: usize,
    pub hidden: usize,
    pub first_kernel: usize,
    /// Spatial extent of the input.
    pub in_size: usize,
}

impl Decoder {
    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        register_conv(store, &format!("{}.c1", self.prefix), self.hidden, self.in_channels, self.first_kernel, rng);
        register_conv(store, &format!("{}.c2", self.prefix), 3, self.hidden, 3, rng);
    }

    /// Returns a `3 × 2s × 2s` image with values in (−1, 1).
    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        expect_shape(&self.prefix, x, &[self.in_channels, self.in_size, self.in_size])?;
        let pad = self.first_kernel / 2;
        let h = conv(p, &format!("{}.c1", self.prefix), x, 1, pad)?.relu();
        let up = h.upsample_nearest2x()?;
        Ok(conv(p, &format!("{}.c2", self.prefix), &up, 1, 1)?.tanh())
    }
}

/// Coarse decoder: `l × S/2 × S/2` → `3 × S × S`.
pub fn coarse_decoder(prefix: &str, d: &ModelDims) -> Decoder {
    Decoder {
        prefix: prefix.into(),
        in_channels: d.mem_width,
        hidden: d.coarse_channels,
        first_kernel: 3,
        in_size: d.fused_size(),
    }
}

/// Fine decoder: `2l × S × S` → `3 × 2S × 2S`. The caller upsamples.
pub fn fine_decoder(prefix: &str, d: &ModelDims) -> Decoder {
    Decoder {
        prefix: prefix.into(),
        in_channels: 2 * d.mem_width,
        hidden: d.fine_channels,
        first_kernel: d.fine_kernel,
        in_size: d.image_size,
    }
}
