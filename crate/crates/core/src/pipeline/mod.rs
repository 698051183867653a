//! Analytic IPC model: `cycles = N / (W * s) + M * D`.
//!
//! IPC opportunity is the relative gain of removing every misprediction,
//! `M * D * W * s / N`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charax::{per_ip_totals, PerIp};
use crate::predictors::{build, simulate, ConfigError, PredictorConfig, TageScLConfig, KB};
use crate::trace::BranchTrace;

pub const SCALES: [u32; 6] = [1, 2, 4, 8, 16, 32];
pub const STORAGE_BUDGETS_KB: [u64; 8] = [8, 16, 32, 64, 128, 256, 512, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineModelConfig {
    /// Instructions per cycle at scale 1.
    pub width: f64,
    /// Flush penalty in cycles.
    pub penalty: f64,
    pub scale: u32,
    /// Use `D * (1 + log2 s)` instead of a fixed penalty.
    pub scale_penalty: bool,
}

impl Default for PipelineModelConfig {
    fn default() -> Self {
        PipelineModelConfig { width: 4.0, penalty: 20.0, scale: 1, scale_penalty: false }
    }
}

impl PipelineModelConfig {
    pub fn at_scale(&self, scale: u32) -> Self {
        PipelineModelConfig { scale, ..*self }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.width > 0.0 && self.width.is_finite() && self.penalty > 0.0 && self.penalty.is_finite()) || self.scale == 0 {
            return Err("pipeline width, penalty and scale must be positive".into());
        }
        Ok(())
    }

    pub fn effective_width(&self) -> f64 {
        self.width * f64::from(self.scale)
    }

    pub fn effective_penalty(&self) -> f64 {
        if self.scale_penalty {
            self.penalty * (1.0 + f64::from(self.scale).log2())
        } else {
            self.penalty
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IpcResult {
    pub cycles: f64,
    pub ipc: f64,
    pub mispredictions: u64,
    /// Relative IPC gain available from perfect prediction.
    pub opportunity: f64,
}

pub fn ipc(config: &PipelineModelConfig, instructions: u64, mispredictions: u64) -> IpcResult {
    let n = instructions.max(1) as f64;
    let ws = config.effective_width();
    let stall = mispredictions as f64 * config.effective_penalty();
    let cycles = n / ws + stall;
    let opportunity = stall * ws / n;
    IpcResult { cycles, ipc: ws / (1.0 + opportunity), mispredictions, opportunity }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionOracle {
    AsSimulated,
    PerfectAll,
    PerfectSet(BTreeSet<u64>),
    /// Perfect for every ip executed more than `cutoff` times.
    PerfectMinExecs(u64),
}

impl fmt::Display for PredictionOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionOracle::AsSimulated => f.write_str("as-simulated"),
            PredictionOracle::PerfectAll => f.write_str("perfect-all"),
            PredictionOracle::PerfectSet(s) => write!(f, "perfect-set({})", s.len()),
            PredictionOracle::PerfectMinExecs(c) => write!(f, "perfect-min-execs({c})"),
        }
    }
}

pub fn effective_mispredictions(per_ip: &PerIp, oracle: &PredictionOracle) -> u64 {
    let keep = |ip: &u64, execs: u64| match oracle {
        PredictionOracle::AsSimulated => true,
        PredictionOracle::PerfectAll => false,
        PredictionOracle::PerfectSet(s) => !s.contains(ip),
        PredictionOracle::PerfectMinExecs(c) => execs <= *c,
    };
    per_ip.iter().filter(|(ip, c)| keep(ip, c.executions)).map(|(_, c)| c.mispredictions).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpportunityPoint {
    pub scale: u32,
    pub oracle: String,
    pub ipc: f64,
    /// Remaining relative gain to perfect prediction under this oracle.
    pub opportunity: f64,
    /// Fraction of the as-simulated opportunity this oracle removes.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpportunityCurve {
    pub instructions: u64,
    pub points: Vec<OpportunityPoint>,
}

impl OpportunityCurve {
    pub fn point(&self, scale: u32, oracle: &str) -> Option<&OpportunityPoint> {
        self.points.iter().find(|p| p.scale == scale && p.oracle == oracle)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "scale,oracle,ipc,opportunity,share")?;
        for p in &self.points {
            writeln!(out, "{},{},{:.6},{:.6},{:.6}", p.scale, p.oracle, p.ipc, p.opportunity, p.share)?;
        }
        Ok(())
    }
}

pub fn scaling_sweep(
    base: &PipelineModelConfig,
    scales: &[u32],
    per_ip: &PerIp,
    instructions: u64,
    oracles: &[PredictionOracle],
) -> OpportunityCurve {
    let raw = effective_mispredictions(per_ip, &PredictionOracle::AsSimulated);
    let mut points = Vec::new();
    for &s in scales {
        let cfg = base.at_scale(s);
        let baseline = ipc(&cfg, instructions, raw);
        for o in oracles {
            let r = ipc(&cfg, instructions, effective_mispredictions(per_ip, o));
            let share = if baseline.opportunity > 0.0 { 1.0 - r.opportunity / baseline.opportunity } else { 0.0 };
            points.push(OpportunityPoint { scale: s, oracle: o.to_string(), ipc: r.ipc, opportunity: r.opportunity, share });
        }
    }
    OpportunityCurve { instructions, points }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoragePoint {
    pub budget_bytes: u64,
    pub storage_bytes: u64,
    pub scale: u32,
    pub accuracy: f64,
    pub mispredictions: u64,
    /// Share of the IPC gap between the 8KB class and perfect prediction
    /// closed by this budget; `None` when the 8KB class is already perfect.
    pub captured_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageSweep {
    pub points: Vec<StoragePoint>,
}

impl StorageSweep {
    pub fn accuracy_at(&self, budget_bytes: u64) -> Option<f64> {
        self.points.iter().find(|p| p.budget_bytes == budget_bytes).map(|p| p.accuracy)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "budget_bytes,scale,accuracy,captured_fraction")?;
        for p in &self.points {
            let c = p.captured_fraction.map(|c| format!("{c:.6}")).unwrap_or_default();
            writeln!(out, "{},{},{:.6},{}", p.budget_bytes, p.scale, p.accuracy, c)?;
        }
        Ok(())
    }
}

/// TAGE-SC-L geometry for a byte budget; 8KB and 64KB map to the two preset
/// classes exactly.
pub fn config_for_budget(bytes: u64) -> Result<TageScLConfig, ConfigError> {
    match bytes {
        b if b == 8 * KB => Ok(TageScLConfig::class_8kb()),
        b if b == 64 * KB => Ok(TageScLConfig::class_64kb()),
        b => crate::predictors::resolve_budget(b),
    }
}

pub fn storage_sweep(
    trace: &BranchTrace,
    budgets: &[u64],
    scales: &[u32],
    base: &PipelineModelConfig,
    seed: u64,
) -> Result<StorageSweep, ConfigError> {
    let mut all: Vec<u64> = budgets.to_vec();
    if !all.contains(&(8 * KB)) {
        all.push(8 * KB);
    }
    let configs = all.iter().map(|&b| config_for_budget(b).map(|c| (b, c))).collect::<Result<Vec<_>, _>>()?;
    let runs = configs
        .par_iter()
        .map(|(b, c)| {
            let mut p = build(&PredictorConfig::TageScL(c.clone()), seed)?;
            let stream = simulate(trace, &mut p);
            Ok((*b, c.storage_bytes(), stream.accuracy().unwrap_or(1.0), per_ip_totals(&stream)))
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let n = trace.meta.instructions;
    let m_of = |per_ip: &PerIp| effective_mispredictions(per_ip, &PredictionOracle::AsSimulated);
    let anchor = m_of(&runs.iter().find(|r| r.0 == 8 * KB).expect("8KB anchor is simulated").3);
    let mut points = Vec::new();
    for &b in budgets {
        let (_, storage, acc, per_ip) = runs.iter().find(|r| r.0 == b).expect("budget simulated");
        let m = m_of(per_ip);
        for &s in scales {
            let cfg = base.at_scale(s);
            let lo = ipc(&cfg, n, anchor).ipc;
            let hi = cfg.effective_width();
            let got = ipc(&cfg, n, m).ipc;
            let captured = (hi > lo).then(|| (got - lo) / (hi - lo));
            points.push(StoragePoint { budget_bytes: b, storage_bytes: *storage, scale: s, accuracy: *acc, mispredictions: m, captured_fraction: captured });
        }
    }
    Ok(StorageSweep { points })
}
