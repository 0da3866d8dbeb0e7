//! Binary feature cache with random access by sample id.
//!
//! Layout (all integers u32 little-endian, floats f64 little-endian):
//!
//! ```text
//! magic "TGFC" | version u32
//! per record:
//!   id_len u32 | id bytes (UTF-8)
//!   rgb_dim u32   | rgb_dim f64       (global RGB)
//!   depth_dim u32 | depth_dim f64     (global depth)
//!   region_count u32
//!   per region: rgb_dim u32 | payload | depth_dim u32 | payload
//! index: entry_count u32, then per entry id_len u32 | id bytes | offset u32
//! index_offset u32                                     (last 4 bytes)
//! ```
//!
//! Record offsets are measured from the start of the file. Training reads
//! features exclusively from this file; images are never touched once the
//! cache exists.

use super::{GlobalFeatures, RegionFeatures, SampleFeatures};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"TGFC";
const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_vec(buf: &mut Vec<u8>, v: &[f64]) {
    put_u32(buf, v.len() as u32);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(Error::Format("feature cache truncated".into()));
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let end = self.pos + 8 * n;
        if end > self.bytes.len() {
            return Err(Error::Format("feature cache truncated".into()));
        }
        let out = self.bytes[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = end;
        Ok(out)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("feature cache truncated".into()));
        }
        let s = std::str::from_utf8(&self.bytes[self.pos..end])
            .map_err(|_| Error::Format("feature cache id is not UTF-8".into()))?
            .to_string();
        self.pos = end;
        Ok(s)
    }
}

/// Serialize and atomically write a cache file. Record order is preserved.
pub fn write_cache(path: &Path, records: &[(String, SampleFeatures)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let mut index = Vec::with_capacity(records.len());
    for (id, feats) in records {
        index.push((id.clone(), buf.len() as u32));
        put_u32(&mut buf, id.len() as u32);
        buf.extend_from_slice(id.as_bytes());
        put_vec(&mut buf, &feats.global.rgb);
        put_vec(&mut buf, &feats.global.depth);
        put_u32(&mut buf, feats.regions.len() as u32);
        for r in &feats.regions {
            put_vec(&mut buf, &r.rgb);
            put_vec(&mut buf, &r.depth);
        }
    }
    let index_offset = buf.len() as u32;
    put_u32(&mut buf, index.len() as u32);
    for (id, offset) in &index {
        put_u32(&mut buf, id.len() as u32);
        buf.extend_from_slice(id.as_bytes());
        put_u32(&mut buf, *offset);
    }
    put_u32(&mut buf, index_offset);
    atomic_write(path, &buf)
}

/// Write a single sample's features as a one-record cache file.
pub fn cache_write(
    path: &Path,
    sample_id: &str,
    global: &GlobalFeatures,
    regions: &[RegionFeatures],
) -> Result<()> {
    write_cache(
        path,
        &[(
            sample_id.to_string(),
            SampleFeatures { global: global.clone(), regions: regions.to_vec() },
        )],
    )
}

/// An opened cache: the trailing index plus the raw bytes, giving random
/// access by id without parsing every record.
pub struct FeatureCache {
    bytes: Vec<u8>,
    index: HashMap<String, u32>,
    ids: Vec<String>,
}

impl FeatureCache {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "{} is not a feature cache (bad magic)",
                path.display()
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported cache version {version}")));
        }
        let index_offset =
            u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()) as usize;
        if index_offset >= bytes.len() {
            return Err(Error::Format("feature cache index offset out of range".into()));
        }
        let mut r = Reader { bytes: &bytes, pos: index_offset };
        let count = r.u32()? as usize;
        let mut index = HashMap::with_capacity(count);
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.string()?;
            let offset = r.u32()?;
            ids.push(id.clone());
            index.insert(id, offset);
        }
        Ok(Self { bytes, index, ids })
    }

    /// Sample ids in record order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Random-access read of one record.
    pub fn read(&self, id: &str) -> Result<SampleFeatures> {
        let &offset = self.index.get(id).ok_or_else(|| Error::CacheMiss(id.to_string()))?;
        let mut r = Reader { bytes: &self.bytes, pos: offset as usize };
        let stored_id = r.string()?;
        if stored_id != id {
            return Err(Error::Format(format!(
                "cache index points at record {stored_id:?}, expected {id:?}"
            )));
        }
        let rgb = r.f64_vec()?;
        let depth = r.f64_vec()?;
        let region_count = r.u32()? as usize;
        let mut regions = Vec::with_capacity(region_count);
        for _ in 0..region_count {
            let rgb = r.f64_vec()?;
            let depth = r.f64_vec()?;
            regions.push(RegionFeatures { rgb, depth });
        }
        Ok(SampleFeatures { global: GlobalFeatures { rgb, depth }, regions })
    }
}

/// One-shot read of a single sample.
pub fn cache_read(path: &Path, sample_id: &str) -> Result<SampleFeatures> {
    FeatureCache::open(path)?.read(sample_id)
}
