//! Versioned binary checkpoint: `STCK`, version byte, u32-prefixed JSON
//! header (config, vocabularies, optimizer settings, RNG state), the
//! parameter tensors followed by both optimizer moments as named f32
//! tensors, and a trailing CRC32 of everything before it.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use super::params::{Mat, Params};
use super::{ModelConfig, ModelError, SeqTabModel};
use crate::vocab::Vocabs;

const MAGIC: &[u8; 4] = b"STCK";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as `[low, high]` 64-bit halves.
    pub word_pos: [u64; 2],
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: [pos as u64, (pos >> 64) as u64] }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos[0] as u128 | (self.word_pos[1] as u128) << 64);
        rng
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocabs: Vocabs,
    optimizer: AdamWConfig,
    step: u64,
    rng: RngState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SeqTabModel<f32>,
    pub vocabs: Vocabs,
    pub optimizer: AdamW<f32>,
    pub rng: RngState,
}

fn put_tensors(out: &mut Vec<u8>, p: &Params<f32>) {
    for (name, _, m) in p.tensors() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn read_tensors(c: &mut Cursor<'_>, into: &mut Params<f32>) -> Result<(), ModelError> {
    for (name, _, m) in into.tensors_mut() {
        let n = c.u32()? as usize;
        let got = std::str::from_utf8(c.take(n)?).map_err(|_| ModelError::Checkpoint("tensor name not UTF-8".into()))?;
        if got != name {
            return Err(ModelError::Checkpoint(format!("expected tensor {name}, found {got}")));
        }
        let (rows, cols) = (c.u32()? as usize, c.u32()? as usize);
        if (rows, cols) != (m.rows, m.cols) {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} is {rows}x{cols}, config implies {}x{}",
                m.rows, m.cols
            )));
        }
        let raw = c.take(rows * cols * 4)?;
        *m = Mat { rows, cols, data: raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect() };
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.model.config.clone(),
            vocabs: self.vocabs.clone(),
            optimizer: self.optimizer.config,
            step: self.optimizer.step,
            rng: self.rng.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        put_tensors(&mut out, &self.model.params);
        put_tensors(&mut out, &self.optimizer.m);
        put_tensors(&mut out, &self.optimizer.v);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", bytes[4])));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(ModelError::Checkpoint("checksum mismatch".into()));
        }
        let mut c = Cursor { buf: body, pos: 5 };
        let n = c.u32()? as usize;
        let header: Header =
            serde_json::from_slice(c.take(n)?).map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        header.config.validate()?;
        let mut params = Params::zeros(&header.config);
        read_tensors(&mut c, &mut params)?;
        let mut optimizer = AdamW::new(header.optimizer, &params);
        optimizer.step = header.step;
        read_tensors(&mut c, &mut optimizer.m)?;
        read_tensors(&mut c, &mut optimizer.v)?;
        if c.pos != body.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            model: SeqTabModel { config: header.config, params },
            vocabs: header.vocabs,
            optimizer,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
