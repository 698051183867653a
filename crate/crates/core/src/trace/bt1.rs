//! BT1 branch-trace formats.
//!
//! * `BT1-text`: line 1 is `BT1`, then one `seq,ip_hex,kind,target_hex,taken`
//!   line per record.
//! * `BT1-bin`: magic `BT01`, little-endian `u64` record count, then fixed
//!   26-byte records (`u64 ip`, `u64 target`, `u64 seq`, `u8 kind`,
//!   `u8 taken`).

use std::io::{BufRead, BufReader, Read, Write};

use super::record::{check_monotone, BranchKind, BranchRecord, BranchTrace};
use super::TraceError;

pub const TEXT_HEADER: &str = "BT1";
pub const BIN_MAGIC: &[u8; 4] = b"BT01";
pub const BIN_RECORD_BYTES: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchFormat {
    Text,
    Binary,
}

pub fn read_branch_trace<R: Read>(source: R, format: BranchFormat) -> Result<BranchTrace, TraceError> {
    let records = match format {
        BranchFormat::Text => read_text(BufReader::new(source))?,
        BranchFormat::Binary => read_bin(BufReader::new(source))?,
    };
    let name = match format {
        BranchFormat::Text => "BT1-text",
        BranchFormat::Binary => "BT1-bin",
    };
    Ok(BranchTrace::from_records(name, records))
}

pub fn write_branch_trace<W: Write>(
    records: &[BranchRecord],
    format: BranchFormat,
    mut out: W,
) -> Result<(), TraceError> {
    if let Err(seq) = check_monotone(records.iter().map(|r| r.seq)) {
        return Err(TraceError::Argument(format!("records out of seq order at seq {seq}")));
    }
    for r in records {
        r.check().map_err(TraceError::Argument)?;
    }
    match format {
        BranchFormat::Text => {
            writeln!(out, "{TEXT_HEADER}")?;
            for r in records {
                writeln!(
                    out,
                    "{},{:#x},{},{:#x},{}",
                    r.seq,
                    r.ip,
                    r.kind,
                    r.target,
                    u8::from(r.taken)
                )?;
            }
        }
        BranchFormat::Binary => {
            out.write_all(BIN_MAGIC)?;
            out.write_all(&(records.len() as u64).to_le_bytes())?;
            let mut buf = [0u8; BIN_RECORD_BYTES];
            for r in records {
                buf[0..8].copy_from_slice(&r.ip.to_le_bytes());
                buf[8..16].copy_from_slice(&r.target.to_le_bytes());
                buf[16..24].copy_from_slice(&r.seq.to_le_bytes());
                buf[24] = r.kind.code();
                buf[25] = u8::from(r.taken);
                out.write_all(&buf)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Convenience wrapper returning the encoded bytes.
pub fn encode_branch_trace(records: &[BranchRecord], format: BranchFormat) -> Result<Vec<u8>, TraceError> {
    let mut out = Vec::new();
    write_branch_trace(records, format, &mut out)?;
    Ok(out)
}

fn parse_hex(field: &str, line: usize) -> Result<u64, TraceError> {
    let digits = field
        .strip_prefix("0x")
        .ok_or_else(|| TraceError::Corrupt(format!("line {line}: expected 0x-prefixed hex, got `{field}`")))?;
    u64::from_str_radix(digits, 16)
        .map_err(|_| TraceError::Corrupt(format!("line {line}: bad hex `{field}`")))
}

fn parse_text_line(line: &str, lineno: usize) -> Result<BranchRecord, TraceError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 5 {
        return Err(TraceError::Corrupt(format!(
            "line {lineno}: expected 5 fields, found {}",
            fields.len()
        )));
    }
    let seq = fields[0]
        .parse::<u64>()
        .map_err(|_| TraceError::Corrupt(format!("line {lineno}: bad seq `{}`", fields[0])))?;
    let ip = parse_hex(fields[1], lineno)?;
    let kind: BranchKind = fields[2].parse()?;
    let target = parse_hex(fields[3], lineno)?;
    let taken = match fields[4] {
        "0" => false,
        "1" => true,
        other => return Err(TraceError::Corrupt(format!("line {lineno}: bad taken flag `{other}`"))),
    };
    let rec = BranchRecord { seq, ip, kind, target, taken };
    rec.check().map_err(TraceError::Corrupt)?;
    Ok(rec)
}

fn push_checked(records: &mut Vec<BranchRecord>, rec: BranchRecord) -> Result<(), TraceError> {
    if let Some(prev) = records.last() {
        if rec.seq <= prev.seq {
            return Err(TraceError::Corrupt(format!(
                "non-monotone seq: {} follows {}",
                rec.seq, prev.seq
            )));
        }
    }
    records.push(rec);
    Ok(())
}

fn read_text<R: BufRead>(mut source: R) -> Result<Vec<BranchRecord>, TraceError> {
    let mut header = String::new();
    source.read_line(&mut header)?;
    if header.trim_end_matches(['\n', '\r']) != TEXT_HEADER {
        return Err(TraceError::Format(format!("expected `{TEXT_HEADER}` header")));
    }
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec = parse_text_line(&line, i + 2)?;
        push_checked(&mut records, rec)?;
    }
    Ok(records)
}

fn read_bin<R: Read>(mut source: R) -> Result<Vec<BranchRecord>, TraceError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut source, &mut magic, || TraceError::Format("missing BT01 magic".into()))?;
    if &magic != BIN_MAGIC {
        return Err(TraceError::Format("bad BT01 magic".into()));
    }
    let mut count = [0u8; 8];
    read_exact_or(&mut source, &mut count, || TraceError::Format("missing record count".into()))?;
    let count = u64::from_le_bytes(count);
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut buf = [0u8; BIN_RECORD_BYTES];
    for i in 0..count {
        read_exact_or(&mut source, &mut buf, || {
            TraceError::Corrupt(format!("truncated record {i} of {count}"))
        })?;
        let kind = BranchKind::from_code(buf[24])
            .ok_or_else(|| TraceError::Corrupt(format!("record {i}: bad kind code {}", buf[24])))?;
        let taken = match buf[25] {
            0 => false,
            1 => true,
            other => return Err(TraceError::Corrupt(format!("record {i}: bad taken byte {other}"))),
        };
        let rec = BranchRecord {
            ip: u64::from_le_bytes(buf[0..8].try_into().unwrap()),
            target: u64::from_le_bytes(buf[8..16].try_into().unwrap()),
            seq: u64::from_le_bytes(buf[16..24].try_into().unwrap()),
            kind,
            taken,
        };
        rec.check().map_err(TraceError::Corrupt)?;
        push_checked(&mut records, rec)?;
    }
    let mut extra = [0u8; 1];
    if source.read(&mut extra)? != 0 {
        return Err(TraceError::Corrupt(format!(
            "trailing bytes after {count} declared records"
        )));
    }
    Ok(records)
}

pub(super) fn read_exact_or<R: Read>(
    source: &mut R,
    buf: &mut [u8],
    err: impl FnOnce() -> TraceError,
) -> Result<(), TraceError> {
    match source.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(err()),
        Err(e) => Err(e.into()),
    }
}
