//! Flat binary dataset cache, bit-exact across platforms.
//!
//! Layout (all little-endian):
//!   16-byte header: magic "STNL", version u16, variant u8, flags u8
//!     (bit 0: normalized), n u32, h u16, w u16
//!   normalization stats: mean f32, std f32 (zeros when unnormalized)
//!   image values: n*h*w f32
//!   labels: n bytes
//!   perturbation records: per sample kind u8, a f64, b f64

use super::{LabeledImageSet, Perturbation, Variant};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"STNL";
const VERSION: u16 = 1;

/// FNV-1a 64-bit hash, used as the dataset checksum.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn encode(set: &LabeledImageSet) -> Vec<u8> {
    let (h, w) = set.dims();
    let n = set.len();
    let mut out = Vec::with_capacity(16 + 8 + n * h * w * 4 + n + n * 17);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(set.variant.id());
    out.push(u8::from(set.normalization.is_some()));
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    let (mean, std) = set.normalization.unwrap_or((0.0, 0.0));
    out.extend_from_slice(&mean.to_le_bytes());
    out.extend_from_slice(&std.to_le_bytes());
    for &v in set.images.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&set.labels);
    for p in &set.perturbations {
        let (kind, a, b) = p.encode();
        out.push(kind);
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<LabeledImageSet> {
    if bytes.len() < 24 {
        return Err(Error::data("cache truncated: shorter than header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::data("bad cache magic (want STNL)"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::data(format!("unsupported cache version {version}")));
    }
    let variant = Variant::from_id(bytes[6])?;
    let normalized = bytes[7] & 1 != 0;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u16::from_le_bytes([bytes[12], bytes[13]]) as usize;
    let w = u16::from_le_bytes([bytes[14], bytes[15]]) as usize;
    let mean = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let std = f32::from_le_bytes(bytes[20..24].try_into().unwrap());

    let want = 24 + n * h * w * 4 + n + n * 17;
    if bytes.len() != want {
        return Err(Error::data(format!(
            "cache length {} does not match header ({} expected)",
            bytes.len(),
            want
        )));
    }
    let mut at = 24;
    let mut values = Vec::with_capacity(n * h * w);
    for _ in 0..n * h * w {
        values.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
        at += 4;
    }
    let labels = bytes[at..at + n].to_vec();
    at += n;
    let mut perturbations = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = bytes[at];
        let a = f64::from_le_bytes(bytes[at + 1..at + 9].try_into().unwrap());
        let b = f64::from_le_bytes(bytes[at + 9..at + 17].try_into().unwrap());
        perturbations.push(Perturbation::decode(kind, a, b)?);
        at += 17;
    }
    let images = Tensor::new(vec![n, 1, h, w], values)?;
    let mut set = LabeledImageSet::new(images, labels, perturbations, variant)?;
    if normalized {
        set.normalization = Some((mean, std));
    }
    Ok(set)
}

/// Writes the cache and returns its checksum.
pub fn write_cache(set: &LabeledImageSet, path: &Path) -> Result<u64> {
    let bytes = encode(set);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, &bytes)?;
    Ok(fnv1a64(&bytes))
}

pub fn read_cache(path: &Path) -> Result<LabeledImageSet> {
    let bytes = fs::read(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}
