//! Binary checkpoint format.
//!
//! ```text
//! "MIMN" | u32 version | u32 count | count × record
//! record = u16 name_len | name (UTF-8) | u8 rank | rank × u32 dim | f32 payload
//! ```
//!
//! All integers and floats are little-endian. Parameters are `param/<name>`,
//! Adam moments `adam.m/<name>` and `adam.v/<name>`, Adam step counts and the
//! global step are stored as the eight bytes of a `u64` (one byte per value),
//! and the config text and vocabulary as their UTF-8 bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{MimError, Result};
use crate::optim::{Adam, AdamSlot};
use crate::params::ParamStore;

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub const MAGIC: &[u8; 4] = b"MIMN";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

/// One named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let name_len = u16::try_from(r.name.len())
            .map_err(|_| MimError::Contract(format!("tensor name of {} bytes", r.name.len())))?;
        if r.shape.len() > MAX_RANK || r.shape.iter().product::<usize>() != r.data.len() {
            return Err(MimError::Contract(format!("record `{}` has inconsistent shape", r.name)));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.shape.len() as u8);
        for &d in &r.shape {
            let d = u32::try_from(d).map_err(|_| MimError::Contract(format!("dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(MimError::format("checkpoint", format!("truncated while reading {what} at byte {}", self.pos))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses the container. Rejects bad magic, other versions, truncation,
/// invalid names and trailing bytes.
pub fn read_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(MimError::format("checkpoint", "bad magic (not a checkpoint file)"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(MimError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let count = c.u32("tensor count")? as usize;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| MimError::format("checkpoint", "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u8("rank")? as usize;
        if rank > MAX_RANK {
            return Err(MimError::format("checkpoint", format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| MimError::format("checkpoint", format!("tensor `{name}` is too large")))?;
        let payload = c.take(numel * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        records.push(Record { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(MimError::format("checkpoint", format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(records)
}

pub(crate) fn bytes_record(name: &str, bytes: &[u8]) -> Record {
    Record {
        name: name.to_string(),
        shape: vec![bytes.len()],
        data: bytes.iter().map(|&b| b as f32).collect(),
    }
}

fn record_bytes(r: &Record) -> Result<Vec<u8>> {
    if r.shape.len() != 1 {
        return Err(MimError::format("checkpoint", format!("`{}` is not a byte vector", r.name)));
    }
    r.data
        .iter()
        .map(|&v| {
            if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(MimError::format("checkpoint", format!("`{}` holds a non-byte value {v}", r.name)))
            }
        })
        .collect()
}

fn record_u64(r: &Record) -> Result<u64> {
    let b = record_bytes(r)?;
    let arr: [u8; 8] = b
        .try_into()
        .map_err(|_| MimError::format("checkpoint", format!("`{}` is not an 8-byte counter", r.name)))?;
    Ok(u64::from_le_bytes(arr))
}

pub(crate) fn record_text(r: &Record) -> Result<String> {
    String::from_utf8(record_bytes(r)?).map_err(|_| MimError::format("checkpoint", format!("`{}` is not UTF-8", r.name)))
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub adam: Adam,
    pub step: u64,
    /// `key=value` text of the training config.
    pub config: String,
    /// One token per line.
    pub vocab: String,
}

impl Checkpoint {
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = vec![
            bytes_record("meta/step", &self.step.to_le_bytes()),
            bytes_record("meta/config", self.config.as_bytes()),
            bytes_record("meta/vocab", self.vocab.as_bytes()),
        ];
        for (name, p) in self.params.iter() {
            out.push(Record {
                name: format!("param/{name}"),
                shape: p.shape.clone(),
                data: p.value.iter().map(|&v| v as f32).collect(),
            });
        }
        for (name, slot) in &self.adam.slots {
            let n = slot.m.len();
            out.push(Record {
                name: format!("adam.m/{name}"),
                shape: vec![n],
                data: slot.m.iter().map(|&v| v as f32).collect(),
            });
            out.push(Record {
                name: format!("adam.v/{name}"),
                shape: vec![n],
                data: slot.v.iter().map(|&v| v as f32).collect(),
            });
            out.push(bytes_record(&format!("adam.t/{name}"), &slot.t.to_le_bytes()));
        }
        out
    }

    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut adam = Adam::new();
        let (mut step, mut config, mut vocab) = (None, None, None);
        let mut partial: std::collections::BTreeMap<String, (Option<Vec<f64>>, Option<Vec<f64>>, Option<u64>)> =
            Default::default();
        for r in records {
            let (kind, name) = r
                .name
                .split_once('/')
                .ok_or_else(|| MimError::format("checkpoint", format!("unqualified tensor name `{}`", r.name)))?;
            let widen = |d: &[f32]| d.iter().map(|&v| v as f64).collect::<Vec<f64>>();
            match (kind, name) {
                ("meta", "step") => step = Some(record_u64(&r)?),
                ("meta", "config") => config = Some(record_text(&r)?),
                ("meta", "vocab") => vocab = Some(record_text(&r)?),
                ("param", _) => {
                    if params.get(name).is_some() {
                        return Err(MimError::format("checkpoint", format!("duplicate parameter `{name}`")));
                    }
                    params.insert(name, &r.shape, widen(&r.data));
                }
                ("adam.m", _) => partial.entry(name.to_string()).or_default().0 = Some(widen(&r.data)),
                ("adam.v", _) => partial.entry(name.to_string()).or_default().1 = Some(widen(&r.data)),
                ("adam.t", _) => partial.entry(name.to_string()).or_default().2 = Some(record_u64(&r)?),
                _ => return Err(MimError::format("checkpoint", format!("unknown tensor `{}`", r.name))),
            }
        }
        for (name, parts) in partial {
            let size = params
                .get(&name)
                .map(|p| p.value.len())
                .ok_or_else(|| MimError::format("checkpoint", format!("optimizer state for unknown parameter `{name}`")))?;
            match parts {
                (Some(m), Some(v), Some(t)) if m.len() == size && v.len() == size => {
                    adam.slots.insert(name, AdamSlot { m, v, t });
                }
                _ => return Err(MimError::format("checkpoint", format!("incomplete optimizer state for `{name}`"))),
            }
        }
        let missing = |what: &str| MimError::format("checkpoint", format!("missing meta/{what}"));
        Ok(Checkpoint {
            params,
            adam,
            step: step.ok_or_else(|| missing("step"))?,
            config: config.ok_or_else(|| missing("config"))?,
            vocab: vocab.ok_or_else(|| missing("vocab"))?,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        write_records(&self.to_records())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_records(read_records(bytes)?)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| MimError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| MimError::io(&tmp, e))?;
        f.sync_all().map_err(|e| MimError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| MimError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| MimError::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Short content hash, used to identify a checkpoint in reports.
    pub fn fingerprint(bytes: &[u8]) -> String {
        short_hash(bytes)
    }
}
