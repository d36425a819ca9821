//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "TKGCKPT\0" | version u32 | header length u64 | header JSON
//! tensor count u32 | per tensor: name, rank u32, dims u64*, data f64*
//! moments: step u64, then first and second moments per tensor
//! final state flag u8 [entities, relations, timestamp i64]
//! crc32 of everything above, u32
//! ```

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::EvolutionState;
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::tensor::Tensor;
use crate::training::{OptimizerState, TrainConfig};

pub const MAGIC: &[u8; 8] = b"TKGCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("tensor table mismatch: {0}")]
    ShapeTable(String),
    #[error("bad header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Metadata stored as JSON in the header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Identifier of the run manifest that produced this file.
    pub run_id: Option<String>,
    /// Epoch whose parameters were kept; 0 for an untrained model.
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub final_state: Option<EvolutionState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.bytes(name.as_bytes());
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        self.f64s(t.data());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        // every length prefixes at least that many bytes
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(CheckpointError::Truncated);
        }
        Ok(n as usize)
    }
    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.len()?;
        self.take(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn tensor(&mut self) -> Result<(String, Tensor), CheckpointError> {
        let name = String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| CheckpointError::ShapeTable("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::ShapeTable(format!(
                "tensor '{name}' has rank {rank}"
            )));
        }
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let data = self.f64s()?;
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::ShapeTable(format!("tensor '{name}': {e}")))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        w.bytes(&header);
        let named = self.params.named_tensors();
        w.u32(named.len() as u32);
        for (name, t) in &named {
            w.tensor(name, t);
        }
        w.u64(self.optimizer.step);
        for (m, v) in self.optimizer.first.iter().zip(&self.optimizer.second) {
            w.f64s(m);
            w.f64s(v);
        }
        match &self.final_state {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.tensor("state.entities", &s.entities);
                w.tensor("state.relations", &s.relations);
                w.u64(s.timestamp.map_or(u64::MAX, |t| t as u64));
            }
        }
        let crc = crc32fast::hash(&w.0);
        w.u32(crc);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if buf.len() < MAGIC.len() + 8 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let header: CheckpointHeader =
            serde_json::from_slice(r.bytes()?).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut params = ModelParams::init(header.model.clone(), 0)?;
        let count = r.u32()? as usize;
        let expected: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if count != expected.len() {
            return Err(CheckpointError::ShapeTable(format!(
                "file holds {count} tensors, configuration needs {}",
                expected.len()
            )));
        }
        let mut sizes = Vec::with_capacity(count);
        for ((want_name, want_shape), slot) in expected.iter().zip(params.tensors_mut()) {
            let (name, t) = r.tensor()?;
            if &name != want_name || t.shape() != want_shape.as_slice() {
                return Err(CheckpointError::ShapeTable(format!(
                    "expected '{want_name}' {want_shape:?}, found '{name}' {:?}",
                    t.shape()
                )));
            }
            sizes.push(t.numel());
            slot.data_mut().copy_from_slice(t.data());
        }
        let mut optimizer = OptimizerState::new(&sizes);
        optimizer.step = r.u64()?;
        for (i, &n) in sizes.iter().enumerate() {
            let m = r.f64s()?;
            let v = r.f64s()?;
            if m.len() != n || v.len() != n {
                return Err(CheckpointError::ShapeTable(format!(
                    "moments of '{}' have {}/{} values, tensor has {n}",
                    expected[i].0,
                    m.len(),
                    v.len()
                )));
            }
            optimizer.first[i] = m;
            optimizer.second[i] = v;
        }
        let final_state = match r.u8()? {
            0 => None,
            1 => {
                let (_, entities) = r.tensor()?;
                let (_, relations) = r.tensor()?;
                let d = header.model.dim;
                if entities.shape() != [header.model.num_entities, d]
                    || relations.shape() != [header.model.num_relations, d]
                {
                    return Err(CheckpointError::ShapeTable(
                        "stored state does not match the model dimensions".into(),
                    ));
                }
                let ts = r.u64()?;
                Some(EvolutionState {
                    entities,
                    relations,
                    timestamp: (ts != u64::MAX).then_some(ts as usize),
                })
            }
            f => return Err(CheckpointError::Header(format!("bad state flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(CheckpointError::Header("trailing bytes after payload".into()));
        }
        Ok(Self {
            header,
            params,
            optimizer,
            final_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .map_err(io)?
            .read_to_end(&mut buf)
            .map_err(io)?;
        Self::from_bytes(&buf)
    }
}
