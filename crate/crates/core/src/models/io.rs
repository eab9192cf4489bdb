//! Binary checkpoint and representation-cache formats.
//!
//! Checkpoint: `DPCK`, u32 version, u64 header length, JSON header, then the
//! little-endian f32 blob addressed by the header's offset table.
//! Representations: `DPRC`, u32 version, u32 D, u64 N, then N records of
//! (u32 id length, id bytes, u32 turn index, D f32).

use serde::{Deserialize, Serialize};

use crate::gradkernel::{ParamStore, Tensor};

use super::{Model, ModelConfig, ModelError, Stage};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DPCK";
pub const REPR_MAGIC: &[u8; 4] = b"DPRC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stage: Stage,
    pub epoch: usize,
    pub valid_bleu2: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    stage: Stage,
    epoch: usize,
    seed: u64,
    valid_bleu2: Option<f64>,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in ck.model.params.iter() {
        tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset });
        offset += t.len();
    }
    let header = Header {
        config: ck.model.config.clone(),
        stage: ck.stage,
        epoch: ck.epoch,
        seed: ck.model.config.seed,
        valid_bleu2: ck.valid_bleu2,
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ck.model.params.tensors() {
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.at < n {
            return Err(ModelError::Format(format!("truncated while reading {what} at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, ModelError> {
        let len = n.checked_mul(4).ok_or_else(|| ModelError::Format(format!("{what} too large")))?;
        Ok(self.take(len, what)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), ModelError> {
        if self.take(4, "magic")? != magic {
            return Err(ModelError::Format(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let v = self.u32("version")?;
        if v != VERSION {
            return Err(ModelError::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut r = Reader { bytes, at: 0 };
    r.header(CHECKPOINT_MAGIC)?;
    let len = r.u64("header length")? as usize;
    let header: Header =
        serde_json::from_slice(r.take(len, "header")?).map_err(|e| ModelError::Format(format!("header: {e}")))?;
    let blob_start = r.at;
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() - blob_start != total * 4 {
        return Err(ModelError::Format(format!(
            "blob holds {} bytes, offset table needs {}",
            bytes.len() - blob_start,
            total * 4
        )));
    }
    let mut params = ParamStore::new();
    let mut expected = 0;
    for t in &header.tensors {
        if t.offset != expected {
            return Err(ModelError::Format(format!("tensor {} at offset {}, expected {}", t.name, t.offset, expected)));
        }
        let n: usize = t.shape.iter().product();
        let data = r.f32s(n, &t.name)?;
        params
            .insert(t.name.clone(), Tensor::new(t.shape.clone(), data).map_err(|e| ModelError::Format(e.to_string()))?);
        expected += n;
    }
    if header.seed != header.config.seed {
        return Err(ModelError::Integrity(format!(
            "header seed {} differs from config seed {}",
            header.seed, header.config.seed
        )));
    }
    let model = Model::from_params(header.config, params)?;
    Ok(Checkpoint { model, stage: header.stage, epoch: header.epoch, valid_bleu2: header.valid_bleu2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub vector: Vec<f32>,
}

pub fn write_representations(dim: usize, records: &[RepresentationRecord]) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(REPR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        if r.vector.len() != dim {
            return Err(ModelError::Integrity(format!(
                "vector for {}#{} has {} dims, expected {dim}",
                r.dialogue_id,
                r.turn_index,
                r.vector.len()
            )));
        }
        out.extend_from_slice(&(r.dialogue_id.len() as u32).to_le_bytes());
        out.extend_from_slice(r.dialogue_id.as_bytes());
        out.extend_from_slice(&(r.turn_index as u32).to_le_bytes());
        for &x in &r.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Returns the dimension and the records.
pub fn read_representations(bytes: &[u8]) -> Result<(usize, Vec<RepresentationRecord>), ModelError> {
    let mut r = Reader { bytes, at: 0 };
    r.header(REPR_MAGIC)?;
    let dim = r.u32("dimension")? as usize;
    let n = r.u64("record count")? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let len = r.u32("id length")? as usize;
        let id = std::str::from_utf8(r.take(len, "id")?)
            .map_err(|_| ModelError::Format(format!("record {i}: id is not UTF-8")))?
            .to_string();
        let turn = r.u32("turn index")? as usize;
        let vector = r.f32s(dim, "vector")?;
        out.push(RepresentationRecord { dialogue_id: id, turn_index: turn, vector });
    }
    if r.at != bytes.len() {
        return Err(ModelError::Format(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok((dim, out))
}
