//! Trace records, file formats and the synthetic generator.

mod bt1;
pub mod gen;
mod it1;
mod record;

use std::io::{self, Read};
use std::path::Path;

use thiserror::Error;

pub use bt1::{encode_branch_trace, read_branch_trace, write_branch_trace, BranchFormat};
pub use gen::{
    generate_branch_trace, generate_trace, Behavior, Difficulty, Gate, ManifestEntry, PlantedBehavior,
    PlantedManifest, PoolRange, SyntheticProgramSpec, TraceGenerator,
};
pub use it1::{encode_instr_trace, read_instr_trace, write_instr_trace, InstrFormat};
pub use record::{
    project_branches, BranchInfo, BranchKind, BranchRecord, BranchTrace, InstrTrace, InstructionRecord,
    Location, TraceMeta,
};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt trace: {0}")]
    Corrupt(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Any of the four on-disk trace encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Branch(BranchFormat),
    Instr(InstrFormat),
}

impl TraceFormat {
    /// Recognizes a format from the first bytes of a file.
    pub fn sniff(prefix: &[u8]) -> Option<TraceFormat> {
        if prefix.starts_with(bt1::BIN_MAGIC) {
            Some(TraceFormat::Branch(BranchFormat::Binary))
        } else if prefix.starts_with(it1::BIN_MAGIC) {
            Some(TraceFormat::Instr(InstrFormat::Binary))
        } else if prefix.starts_with(b"BT1\n") || prefix.starts_with(b"BT1\r\n") || prefix == b"BT1" {
            Some(TraceFormat::Branch(BranchFormat::Text))
        } else if prefix.starts_with(b"{") {
            Some(TraceFormat::Instr(InstrFormat::JsonLines))
        } else {
            None
        }
    }
}

/// A trace loaded from disk in whichever format it was stored.
#[derive(Debug, Clone)]
pub enum AnyTrace {
    Branch(BranchTrace),
    Instr(InstrTrace),
}

impl AnyTrace {
    pub fn into_branches(self) -> BranchTrace {
        match self {
            AnyTrace::Branch(t) => t,
            AnyTrace::Instr(t) => project_branches(&t),
        }
    }

    pub fn into_instructions(self) -> Result<InstrTrace, TraceError> {
        match self {
            AnyTrace::Instr(t) => Ok(t),
            AnyTrace::Branch(_) => Err(TraceError::Format(
                "analysis needs an instruction trace (IT1), got a branch-only trace".into(),
            )),
        }
    }
}

pub fn read_any(bytes: &[u8]) -> Result<AnyTrace, TraceError> {
    match TraceFormat::sniff(&bytes[..bytes.len().min(8)]) {
        Some(TraceFormat::Branch(f)) => read_branch_trace(bytes, f).map(AnyTrace::Branch),
        Some(TraceFormat::Instr(f)) => read_instr_trace(bytes, f).map(AnyTrace::Instr),
        None => Err(TraceError::Format("unrecognized trace format".into())),
    }
}

pub fn load_trace(path: &Path) -> Result<AnyTrace, TraceError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_any(&bytes)
}
