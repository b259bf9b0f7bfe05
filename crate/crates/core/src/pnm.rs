//! Binary PPM (P6) and PGM (P5) with `maxval ≤ 255`.

use std::fs;
use std::path::Path;

use crate::error::{MimError, Result};

/// Decoded raster, interleaved (`y`, `x`, channel) bytes scaled to 0..=255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 3 for P6, 1 for P5.
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Largest width or height accepted by the decoder.
pub const MAX_SIDE: usize = 8192;

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        let digits = &self.bytes[start..self.pos];
        if digits.is_empty() || digits.len() > 6 {
            return Err(MimError::format("pnm", format!("bad {what}")));
        }
        Ok(std::str::from_utf8(digits).expect("ascii digits").parse().expect("≤ 6 digits"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(MimError::format("pnm", "expected P5 or P6 magic")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(MimError::format("pnm", format!("unsupported size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(MimError::format("pnm", format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(MimError::format("pnm", "missing whitespace after maxval"));
    }
    let body = &bytes[h.pos + 1..];
    let n = width * height * channels;
    if body.len() != n {
        return Err(MimError::format("pnm", format!("expected {n} payload bytes, found {}", body.len())));
    }
    let data = body
        .iter()
        .map(|&v| {
            if v as usize > maxval {
                Err(MimError::format("pnm", format!("sample {v} above maxval {maxval}")))
            } else {
                Ok(((v as usize * 255 + maxval / 2) / maxval) as u8)
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode(r: &Raster) -> Result<Vec<u8>> {
    let magic = match r.channels {
        3 => "P6",
        1 => "P5",
        c => return Err(MimError::Input(format!("{c} channels cannot be written as PNM"))),
    };
    if r.data.len() != r.width * r.height * r.channels {
        return Err(MimError::Input("raster size does not match its data".into()));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.data);
    Ok(out)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Raster {
    /// From a `C×H×W` planar tensor; values are mapped from `[lo, hi]` onto
    /// 0..=255.
    pub fn from_planar(channels: usize, height: usize, width: usize, planar: &[f64], lo: f64, hi: f64) -> Self {
        assert_eq!(planar.len(), channels * height * width);
        let plane = height * width;
        let mut data = Vec::with_capacity(planar.len());
        for i in 0..plane {
            for c in 0..channels {
                data.push(quantize((planar[c * plane + i] - lo) / (hi - lo)));
            }
        }
        Raster {
            width,
            height,
            channels,
            data,
        }
    }

    /// Back to planar values in `[lo, hi]`.
    pub fn to_planar(&self, lo: f64, hi: f64) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; self.data.len()];
        for (i, px) in self.data.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = lo + (hi - lo) * v as f64 / 255.0;
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, encode(self)?).map_err(|e| MimError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        decode(&fs::read(path).map_err(|e| MimError::io(path, e))?)
    }
}
