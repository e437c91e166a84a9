//! Binary embedding cache.
//!
//! Layout (little-endian): `SEMB`, version byte, u32 dim, u32-prefixed
//! model id, then records of u64 fingerprint, u32-prefixed key and dim f32
//! values, then a CRC32 of the record bytes.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{EmbedError, EmbeddingRecord};

const MAGIC: &[u8; 4] = b"SEMB";
const VERSION: u8 = 1;

#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    model_id: String,
    dim: usize,
    entries: Vec<(String, u64, Vec<f32>)>,
    index: HashMap<(String, u64), usize>,
    dirty: bool,
}

impl EmbeddingCache {
    /// Opens an existing cache file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref().to_path_buf();
        let bytes = fs::read(&path)?;
        let (model_id, dim, entries) = decode(&bytes).map_err(|reason| EmbedError::CacheCorrupt {
            path: path.display().to_string(),
            reason,
        })?;
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (key, fp, _)) in entries.iter().enumerate() {
            if index.insert((key.clone(), *fp), i).is_some() {
                return Err(EmbedError::CacheCorrupt {
                    path: path.display().to_string(),
                    reason: format!("duplicate entry for {key}"),
                });
            }
        }
        Ok(Self { path, model_id, dim, entries, index, dirty: false })
    }

    /// Opens `path` if it exists, checking model and dim, or starts an empty
    /// cache that is written on the first flush.
    pub fn open_or_create(path: impl AsRef<Path>, model_id: &str, dim: usize) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        if path.exists() {
            let cache = Self::open(path)?;
            if cache.model_id != model_id || cache.dim != dim {
                return Err(EmbedError::CacheMismatch {
                    cache_model: cache.model_id.clone(),
                    cache_dim: cache.dim,
                    model: model_id.to_string(),
                    dim,
                });
            }
            return Ok(cache);
        }
        if dim == 0 {
            return Err(EmbedError::InvalidVector { key: String::new(), reason: "dim must be positive".into() });
        }
        Ok(Self {
            path: path.to_path_buf(),
            model_id: model_id.to_string(),
            dim,
            entries: Vec::new(),
            index: HashMap::new(),
            dirty: true,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str, model_id: &str, fingerprint: u64) -> Option<&[f32]> {
        if model_id != self.model_id {
            return None;
        }
        self.index.get(&(key.to_string(), fingerprint)).map(|&i| self.entries[i].2.as_slice())
    }

    /// Inserts a record. Re-putting an identical vector is a no-op; a
    /// different vector under the same key and fingerprint is a conflict.
    pub fn put(&mut self, record: &EmbeddingRecord) -> Result<(), EmbedError> {
        record.validate()?;
        if record.model_id != self.model_id || record.dim != self.dim {
            return Err(EmbedError::CacheMismatch {
                cache_model: self.model_id.clone(),
                cache_dim: self.dim,
                model: record.model_id.clone(),
                dim: record.dim,
            });
        }
        let id = (record.key.clone(), record.prompt_fingerprint);
        if let Some(&i) = self.index.get(&id) {
            let same = self.entries[i].2.iter().zip(&record.vector).all(|(a, b)| a.to_bits() == b.to_bits());
            return if same {
                Ok(())
            } else {
                Err(EmbedError::Conflict { key: record.key.clone(), fingerprint: record.prompt_fingerprint })
            };
        }
        self.index.insert(id, self.entries.len());
        self.entries.push((record.key.clone(), record.prompt_fingerprint, record.vector.clone()));
        self.dirty = true;
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        self.entries
            .iter()
            .map(|(k, fp, v)| EmbeddingRecord::new(k.clone(), *fp, self.model_id.clone(), v.clone()))
    }

    /// Writes the cache atomically through a sibling temp file.
    pub fn flush(&mut self) -> Result<(), EmbedError> {
        if !self.dirty {
            return Ok(());
        }
        let bytes = encode(&self.model_id, self.dim, &self.entries);
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut tmp = self.path.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.dirty = false;
        Ok(())
    }
}

impl Drop for EmbeddingCache {
    fn drop(&mut self) {
        if self.dirty {
            if let Err(e) = self.flush() {
                tracing::warn!(path = %self.path.display(), error = %e, "cache flush on drop failed");
            }
        }
    }
}

fn encode(model_id: &str, dim: usize, entries: &[(String, u64, Vec<f32>)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + entries.len() * (16 + dim * 4));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(model_id.len() as u32).to_le_bytes());
    out.extend_from_slice(model_id.as_bytes());
    let body_start = out.len();
    for (key, fp, v) in entries {
        out.extend_from_slice(&fp.to_le_bytes());
        out.extend_from_slice(&(key.len() as u32).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[body_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("unexpected end of file reading {what} at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| format!("{what} is not UTF-8"))
    }
}

type Decoded = (String, usize, Vec<(String, u64, Vec<f32>)>);

fn decode(bytes: &[u8]) -> Result<Decoded, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err("dim is zero".into());
    }
    let model_id = r.string("model id")?;
    if bytes.len() < r.pos + 4 {
        return Err("missing checksum".into());
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc32fast::hash(&bytes[r.pos..body_end]) != stored {
        return Err("checksum mismatch".into());
    }
    let mut body = Reader { buf: &bytes[..body_end], pos: r.pos };
    let mut entries = Vec::new();
    while body.pos < body_end {
        let fp = u64::from_le_bytes(body.take(8, "fingerprint")?.try_into().unwrap());
        let key = body.string("key")?;
        let raw = body.take(dim * 4, "vector")?;
        let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(format!("non-finite value in {key}"));
        }
        entries.push((key, fp, v));
    }
    Ok((model_id, dim, entries))
}
