//! IT1 instruction-trace formats.
//!
//! `IT1-jsonl` starts with a `{"format":"IT1","instructions":N}` header line
//! followed by one JSON object per instruction. `IT1-bin` starts with the
//! magic `IT01` and a little-endian `u64` instruction count; each record is
//!
//! ```text
//! u64 seq | u64 ip | u8 flags (bit0 = branch, bit1 = taken)
//! [u8 kind | u64 target]              -- branches only
//! u8 n | n x u8 reg                   -- regs_read
//! u8 n | n x (u8 reg, u64 value)      -- regs_written
//! u8 n | n x u64 addr                 -- mem_read
//! u8 n | n x u64 addr                 -- mem_written
//! ```

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::bt1::read_exact_or;
use super::record::{check_monotone, BranchInfo, BranchKind, InstrTrace, InstructionRecord};
use super::TraceError;

pub const BIN_MAGIC: &[u8; 4] = b"IT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrFormat {
    JsonLines,
    Binary,
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    format: String,
    instructions: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonInstr {
    seq: u64,
    ip: u64,
    is_branch: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<BranchKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    taken: Option<bool>,
    regs_read: Vec<u8>,
    regs_written: Vec<(u8, u64)>,
    mem_read: Vec<u64>,
    mem_written: Vec<u64>,
}

impl From<&InstructionRecord> for JsonInstr {
    fn from(r: &InstructionRecord) -> Self {
        JsonInstr {
            seq: r.seq,
            ip: r.ip,
            is_branch: r.branch.is_some(),
            kind: r.branch.map(|b| b.kind),
            target: r.branch.map(|b| b.target),
            taken: r.branch.map(|b| b.taken),
            regs_read: r.regs_read.clone(),
            regs_written: r.regs_written.clone(),
            mem_read: r.mem_read.clone(),
            mem_written: r.mem_written.clone(),
        }
    }
}

impl JsonInstr {
    fn into_record(self, line: usize) -> Result<InstructionRecord, TraceError> {
        let branch = if self.is_branch {
            match (self.kind, self.target, self.taken) {
                (Some(kind), Some(target), Some(taken)) => Some(BranchInfo { kind, target, taken }),
                _ => {
                    return Err(TraceError::Corrupt(format!(
                        "line {line}: branch record missing kind/target/taken"
                    )))
                }
            }
        } else {
            None
        };
        Ok(InstructionRecord {
            seq: self.seq,
            ip: self.ip,
            branch,
            regs_read: self.regs_read,
            regs_written: self.regs_written,
            mem_read: self.mem_read,
            mem_written: self.mem_written,
        })
    }
}

pub fn read_instr_trace<R: Read>(source: R, format: InstrFormat) -> Result<InstrTrace, TraceError> {
    let (records, name) = match format {
        InstrFormat::JsonLines => (read_jsonl(BufReader::new(source))?, "IT1-jsonl"),
        InstrFormat::Binary => (read_bin(BufReader::new(source))?, "IT1-bin"),
    };
    Ok(InstrTrace::from_records(name, records))
}

pub fn write_instr_trace<W: Write>(
    records: &[InstructionRecord],
    format: InstrFormat,
    mut out: W,
) -> Result<(), TraceError> {
    if let Err(seq) = check_monotone(records.iter().map(|r| r.seq)) {
        return Err(TraceError::Argument(format!("records out of seq order at seq {seq}")));
    }
    for r in records {
        r.check().map_err(TraceError::Argument)?;
    }
    match format {
        InstrFormat::JsonLines => {
            let header = JsonHeader { format: "IT1".into(), instructions: records.len() as u64 };
            serde_json::to_writer(&mut out, &header).map_err(|e| TraceError::Argument(e.to_string()))?;
            out.write_all(b"\n")?;
            for r in records {
                serde_json::to_writer(&mut out, &JsonInstr::from(r))
                    .map_err(|e| TraceError::Argument(e.to_string()))?;
                out.write_all(b"\n")?;
            }
        }
        InstrFormat::Binary => {
            out.write_all(BIN_MAGIC)?;
            out.write_all(&(records.len() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(64);
            for r in records {
                buf.clear();
                encode_bin_record(r, &mut buf)?;
                out.write_all(&buf)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn encode_instr_trace(records: &[InstructionRecord], format: InstrFormat) -> Result<Vec<u8>, TraceError> {
    let mut out = Vec::new();
    write_instr_trace(records, format, &mut out)?;
    Ok(out)
}

fn card(n: usize, what: &str, seq: u64) -> Result<u8, TraceError> {
    u8::try_from(n).map_err(|_| {
        TraceError::Argument(format!("seq {seq}: {what} has {n} entries, at most 255 allowed"))
    })
}

fn encode_bin_record(r: &InstructionRecord, buf: &mut Vec<u8>) -> Result<(), TraceError> {
    buf.extend_from_slice(&r.seq.to_le_bytes());
    buf.extend_from_slice(&r.ip.to_le_bytes());
    let mut flags = 0u8;
    if let Some(b) = r.branch {
        flags |= 1;
        if b.taken {
            flags |= 2;
        }
    }
    buf.push(flags);
    if let Some(b) = r.branch {
        buf.push(b.kind.code());
        buf.extend_from_slice(&b.target.to_le_bytes());
    }
    buf.push(card(r.regs_read.len(), "regs_read", r.seq)?);
    buf.extend_from_slice(&r.regs_read);
    buf.push(card(r.regs_written.len(), "regs_written", r.seq)?);
    for &(reg, value) in &r.regs_written {
        buf.push(reg);
        buf.extend_from_slice(&value.to_le_bytes());
    }
    buf.push(card(r.mem_read.len(), "mem_read", r.seq)?);
    for a in &r.mem_read {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    buf.push(card(r.mem_written.len(), "mem_written", r.seq)?);
    for a in &r.mem_written {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    Ok(())
}

fn push_checked(records: &mut Vec<InstructionRecord>, rec: InstructionRecord) -> Result<(), TraceError> {
    if let Some(prev) = records.last() {
        if rec.seq <= prev.seq {
            return Err(TraceError::Corrupt(format!(
                "non-monotone seq: {} follows {}",
                rec.seq, prev.seq
            )));
        }
    }
    rec.check().map_err(TraceError::Corrupt)?;
    records.push(rec);
    Ok(())
}

fn read_jsonl<R: BufRead>(mut source: R) -> Result<Vec<InstructionRecord>, TraceError> {
    let mut header = String::new();
    source.read_line(&mut header)?;
    let header: JsonHeader = serde_json::from_str(header.trim_end())
        .map_err(|e| TraceError::Format(format!("bad IT1 header: {e}")))?;
    if header.format != "IT1" {
        return Err(TraceError::Format(format!("unexpected format tag `{}`", header.format)));
    }
    let mut records = Vec::with_capacity(header.instructions.min(1 << 20) as usize);
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = i + 2;
        let obj: JsonInstr = serde_json::from_str(&line)
            .map_err(|e| TraceError::Corrupt(format!("line {lineno}: {e}")))?;
        push_checked(&mut records, obj.into_record(lineno)?)?;
    }
    if records.len() as u64 != header.instructions {
        return Err(TraceError::Corrupt(format!(
            "header declares {} instructions, found {}",
            header.instructions,
            records.len()
        )));
    }
    Ok(records)
}

struct BinCursor<R> {
    inner: R,
    record: u64,
}

impl<R: Read> BinCursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], TraceError> {
        let mut buf = [0u8; N];
        let rec = self.record;
        read_exact_or(&mut self.inner, &mut buf, || TraceError::Corrupt(format!("truncated record {rec}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, TraceError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u64(&mut self) -> Result<u64, TraceError> {
        Ok(u64::from_le_bytes(self.bytes::<8>()?))
    }
}

fn read_bin<R: Read>(mut source: R) -> Result<Vec<InstructionRecord>, TraceError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut source, &mut magic, || TraceError::Format("missing IT01 magic".into()))?;
    if &magic != BIN_MAGIC {
        return Err(TraceError::Format("bad IT01 magic".into()));
    }
    let mut count = [0u8; 8];
    read_exact_or(&mut source, &mut count, || TraceError::Format("missing instruction count".into()))?;
    let count = u64::from_le_bytes(count);
    let mut cur = BinCursor { inner: source, record: 0 };
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for i in 0..count {
        cur.record = i;
        let seq = cur.u64()?;
        let ip = cur.u64()?;
        let flags = cur.u8()?;
        if flags & !3 != 0 {
            return Err(TraceError::Corrupt(format!("record {i}: bad flags {flags:#x}")));
        }
        let branch = if flags & 1 != 0 {
            let code = cur.u8()?;
            let kind = BranchKind::from_code(code)
                .ok_or_else(|| TraceError::Corrupt(format!("record {i}: bad kind code {code}")))?;
            let target = cur.u64()?;
            Some(BranchInfo { kind, target, taken: flags & 2 != 0 })
        } else if flags & 2 != 0 {
            return Err(TraceError::Corrupt(format!("record {i}: taken flag on non-branch")));
        } else {
            None
        };
        let n = cur.u8()?;
        let regs_read = (0..n).map(|_| cur.u8()).collect::<Result<Vec<_>, _>>()?;
        let n = cur.u8()?;
        let regs_written = (0..n)
            .map(|_| Ok((cur.u8()?, cur.u64()?)))
            .collect::<Result<Vec<_>, TraceError>>()?;
        let n = cur.u8()?;
        let mem_read = (0..n).map(|_| cur.u64()).collect::<Result<Vec<_>, _>>()?;
        let n = cur.u8()?;
        let mem_written = (0..n).map(|_| cur.u64()).collect::<Result<Vec<_>, _>>()?;
        push_checked(
            &mut records,
            InstructionRecord { seq, ip, branch, regs_read, regs_written, mem_read, mem_written },
        )?;
    }
    let mut extra = [0u8; 1];
    if cur.inner.read(&mut extra)? != 0 {
        return Err(TraceError::Corrupt(format!("trailing bytes after {count} declared records")));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_json_record_sets() {
        let data = concat!(
            "{\"format\":\"IT1\",\"instructions\":2}\n",
            "{\"seq\":0,\"ip\":4096,\"is_branch\":false,\"regs_read\":[3],\"regs_written\":[[5,42]],\"mem_read\":[],\"mem_written\":[]}\n",
            "{\"seq\":1,\"ip\":4100,\"is_branch\":true,\"kind\":\"COND\",\"target\":4200,\"taken\":true,\"regs_read\":[5],\"regs_written\":[],\"mem_read\":[],\"mem_written\":[]}\n",
        );
        let t = read_instr_trace(data.as_bytes(), InstrFormat::JsonLines).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.records[0].regs_read, vec![3]);
        assert_eq!(t.records[0].regs_written, vec![(5, 42)]);
        assert!(t.records[0].branch.is_none());
        assert!(t.records[1].is_cond());
        assert_eq!(t.meta.cond_branches, 1);
        // the canonical writer reproduces the input exactly
        let again = encode_instr_trace(&t.records, InstrFormat::JsonLines).unwrap();
        assert_eq!(again, data.as_bytes());
    }

    #[test]
    fn count_mismatch_is_corrupt() {
        let data = "{\"format\":\"IT1\",\"instructions\":3}\n";
        let err = read_instr_trace(data.as_bytes(), InstrFormat::JsonLines).unwrap_err();
        assert!(matches!(err, TraceError::Corrupt(_)));
    }

    #[test]
    fn bad_header_is_format_error() {
        let err = read_instr_trace("{\"format\":\"BT1\",\"instructions\":0}\n".as_bytes(), InstrFormat::JsonLines)
            .unwrap_err();
        assert!(matches!(err, TraceError::Format(_)));
        let err = read_instr_trace("garbage\n".as_bytes(), InstrFormat::JsonLines).unwrap_err();
        assert!(matches!(err, TraceError::Format(_)));
    }

    #[test]
    fn cond_without_reads_rejected() {
        let rec = InstructionRecord {
            seq: 0,
            ip: 1,
            branch: Some(BranchInfo { kind: BranchKind::Cond, target: 2, taken: true }),
            ..Default::default()
        };
        let err = encode_instr_trace(&[rec], InstrFormat::Binary).unwrap_err();
        assert!(matches!(err, TraceError::Argument(_)));
    }

    #[test]
    fn binary_truncation_detected() {
        let rec = InstructionRecord {
            seq: 0,
            ip: 1,
            regs_read: vec![1, 2],
            regs_written: vec![(3, 99)],
            ..Default::default()
        };
        let mut bytes = encode_instr_trace(&[rec], InstrFormat::Binary).unwrap();
        bytes.pop();
        let err = read_instr_trace(bytes.as_slice(), InstrFormat::Binary).unwrap_err();
        assert!(matches!(err, TraceError::Corrupt(_)));
    }

    #[test]
    fn too_many_reads_rejected_on_write() {
        let rec = InstructionRecord { seq: 0, ip: 0, mem_read: (0..300).collect(), ..Default::default() };
        assert!(matches!(
            encode_instr_trace(&[rec], InstrFormat::Binary),
            Err(TraceError::Argument(_))
        ));
    }
}
