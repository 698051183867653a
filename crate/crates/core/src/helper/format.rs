//! HM1 helper-model files, little-endian:
//!
//! ```text
//! "HM01" | u32 version | u32 count
//! per model: u64 ip | u8 kind | u16 h | u32 len | payload | f32 tau
//!            | u32 n | n x (u16 len, trace id, u16 len, input id)
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Pattern-table payload: u32 entries, then (u64 key, u32 taken,
//! u32 not taken) per entry in key order. Perceptron payload: u8 weight
//! width, then h + 1 i16 weights.

use std::collections::BTreeMap;

use thiserror::Error;

use super::model::{HelperKind, HelperModel, HelperParams, Provenance};

pub const HM1_MAGIC: &[u8; 4] = b"HM01";
pub const HM1_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("corrupt helper model file: {0}")]
    CorruptModel(String),
    #[error("unsupported helper model file: {0}")]
    Format(String),
}

pub fn save_models(models: &[HelperModel]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HM1_MAGIC);
    out.extend_from_slice(&HM1_VERSION.to_le_bytes());
    out.extend_from_slice(&(models.len() as u32).to_le_bytes());
    for m in models {
        out.extend_from_slice(&m.ip.to_le_bytes());
        out.push(m.kind().code());
        out.extend_from_slice(&m.history.to_le_bytes());
        let payload = encode_params(&m.params);
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&m.tau.to_le_bytes());
        out.extend_from_slice(&(m.provenance.len() as u32).to_le_bytes());
        for p in &m.provenance {
            put_str(&mut out, &p.trace_id);
            put_str(&mut out, &p.input_id);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let b = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
    out.extend_from_slice(&(b.len() as u16).to_le_bytes());
    out.extend_from_slice(b);
}

fn encode_params(p: &HelperParams) -> Vec<u8> {
    let mut out = Vec::new();
    match p {
        HelperParams::PatternTable(t) => {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            for (k, (tk, nt)) in t {
                out.extend_from_slice(&k.to_le_bytes());
                out.extend_from_slice(&tk.to_le_bytes());
                out.extend_from_slice(&nt.to_le_bytes());
            }
        }
        HelperParams::Perceptron { weight_bits, weights } => {
            out.push(*weight_bits);
            for w in weights {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::CorruptModel(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        self.array().map(u64::from_le_bytes)
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::CorruptModel("provenance is not UTF-8".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn load_models(bytes: &[u8]) -> Result<Vec<HelperModel>, ModelError> {
    if bytes.len() < 4 || &bytes[..4] != HM1_MAGIC {
        return Err(ModelError::Format("missing HM01 magic".into()));
    }
    if bytes.len() < 16 {
        return Err(ModelError::CorruptModel("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(ModelError::CorruptModel("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != HM1_VERSION {
        return Err(ModelError::Format(format!("version {version}, expected {HM1_VERSION}")));
    }
    let count = r.u32()?;
    let mut models = Vec::new();
    for _ in 0..count {
        let ip = r.u64()?;
        let kind = HelperKind::from_code(r.u8()?).ok_or_else(|| ModelError::Format("unknown helper kind".into()))?;
        let history = r.u16()?;
        let len = r.u32()? as usize;
        let mut p = Reader { buf: r.take(len)?, pos: 0 };
        let params = match kind {
            HelperKind::PatternTable => {
                let n = p.u32()?;
                let mut t = BTreeMap::new();
                for _ in 0..n {
                    let k = p.u64()?;
                    t.insert(k, (p.u32()?, p.u32()?));
                }
                HelperParams::PatternTable(t)
            }
            HelperKind::Perceptron => {
                let weight_bits = p.u8()?;
                let n = (len - 1) / 2;
                let weights = (0..n).map(|_| p.u16().map(|w| w as i16)).collect::<Result<_, _>>()?;
                HelperParams::Perceptron { weight_bits, weights }
            }
        };
        if !p.done() {
            return Err(ModelError::CorruptModel(format!("model {ip:#x}: payload length mismatch")));
        }
        let tau = f32::from_le_bytes(r.array()?);
        let n = r.u32()?;
        let provenance = (0..n)
            .map(|_| Ok(Provenance { trace_id: r.string()?, input_id: r.string()? }))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let m = HelperModel { ip, history, params, tau, provenance };
        m.validate().map_err(|e| ModelError::CorruptModel(format!("model {ip:#x}: {e}")))?;
        models.push(m);
    }
    if !r.done() {
        return Err(ModelError::CorruptModel("trailing bytes after models".into()));
    }
    Ok(models)
}
