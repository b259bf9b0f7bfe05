//! Conversions between planar tensors in `[-1, 1]` and PNM rasters.

use std::path::Path;

use mimnet::pnm::Raster;
use mimnet::{MimError, Result};
use mimnet_tensor::Tensor;

/// A square PPM as a `3×S×S` tensor in `[-1, 1]`.
pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let r = Raster::load(path)?;
    if r.channels != 3 || r.width != r.height {
        return Err(MimError::Input(format!(
            "{}: expected a square RGB image, got {}x{} with {} channel(s)",
            path.display(),
            r.width,
            r.height,
            r.channels
        )));
    }
    Ok(Tensor::from_vec(&[3, r.height, r.width], r.to_planar(-1.0, 1.0))?)
}

/// A square PGM as a `1×S×S` tensor in `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<Tensor> {
    let r = Raster::load(path)?;
    if r.channels != 1 || r.width != r.height {
        return Err(MimError::Input(format!("{}: expected a square grayscale image", path.display())));
    }
    Ok(Tensor::from_vec(&[1, r.height, r.width], r.to_planar(0.0, 1.0))?)
}

pub fn to_raster(t: &Tensor, lo: f64, hi: f64) -> Raster {
    let s = t.shape();
    Raster::from_planar(s[0], s[1], s[2], t.data(), lo, hi)
}

pub fn save_rgb(t: &Tensor, path: &Path) -> Result<()> {
    to_raster(t, -1.0, 1.0).save(path)
}

pub fn save_gray(t: &Tensor, path: &Path) -> Result<()> {
    to_raster(t, 0.0, 1.0).save(path)
}

/// Nearest-neighbour enlargement by an integer factor.
fn enlarge(r: &Raster, factor: usize) -> Raster {
    let (w, h) = (r.width * factor, r.height * factor);
    let mut data = Vec::with_capacity(w * h * r.channels);
    for y in 0..h {
        for x in 0..w {
            let i = ((y / factor) * r.width + x / factor) * r.channels;
            data.extend_from_slice(&r.data[i..i + r.channels]);
        }
    }
    Raster {
        width: w,
        height: h,
        channels: r.channels,
        data,
    }
}

/// Side-by-side strip, each panel scaled up to the tallest one, separated by
/// 2-pixel white gutters.
pub fn strip(panels: &[Raster]) -> Raster {
    const GUTTER: usize = 2;
    let height = panels.iter().map(|p| p.height).max().unwrap_or(0);
    let scaled: Vec<Raster> = panels.iter().map(|p| enlarge(p, (height / p.height).max(1))).collect();
    let width = scaled.iter().map(|p| p.width).sum::<usize>() + GUTTER * panels.len().saturating_sub(1);
    let mut data = vec![255u8; width * height * 3];
    let mut x0 = 0;
    for p in &scaled {
        for y in 0..p.height {
            for x in 0..p.width {
                let src = (y * p.width + x) * p.channels;
                let dst = (y * width + x0 + x) * 3;
                for c in 0..3 {
                    data[dst + c] = p.data[src + c.min(p.channels - 1)];
                }
            }
        }
        x0 += p.width + GUTTER;
    }
    Raster {
        width,
        height,
        channels: 3,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_layout() {
        let a = Raster {
            width: 1,
            height: 1,
            channels: 1,
            data: vec![10],
        };
        let b = Raster {
            width: 2,
            height: 2,
            channels: 3,
            data: vec![1; 12],
        };
        let s = strip(&[a, b]);
        assert_eq!((s.width, s.height), (2 + 2 + 2, 2));
        assert_eq!(&s.data[..3], &[10, 10, 10]);
        assert_eq!(&s.data[6..9], &[255, 255, 255]);
        assert_eq!(&s.data[12..15], &[1, 1, 1]);
    }
}
