mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Trace-driven branch prediction workbench.
#[derive(Debug, Parser)]
#[command(name = "branchlab", version, about)]
pub struct Cli {
    /// Print a JSON summary on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace and its planted-behavior manifest.
    Gen(GenArgs),
    /// Simulate a predictor and write the per-branch outcome stream.
    Sim(SimArgs),
    /// Screen hard-to-predict branches per slice.
    H2p(H2pArgs),
    /// Rank branches by misprediction count.
    Hh(HhArgs),
    /// Accuracy spread of branches binned by execution count.
    Rare(RareArgs),
    /// Recurrence intervals between executions of each branch.
    Recur(RecurArgs),
    /// Dependency branches of hard-to-predict branches (instruction traces).
    Deps(DepsArgs),
    /// Register values seen before each execution of a branch.
    Regvals(RegvalsArgs),
    /// IPC opportunity under perfect-prediction oracles and pipeline scales.
    Limit(LimitArgs),
    /// Accuracy and captured IPC gap across TAGE-SC-L storage budgets.
    Sweep(SweepArgs),
    /// Train helper predictors offline and save them as an HM1 file.
    TrainHelper(TrainHelperArgs),
    /// Evaluate saved helpers on a held-out trace against the baseline.
    EvalHelper(EvalHelperArgs),
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Report directory.
    #[arg(long = "out", env = "BRANCHLAB_OUT", default_value = "branchlab-out")]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictorArgs {
    /// Preset name (e.g. tage-sc-l:8kb, perceptron:28) or config file.
    #[arg(long, default_value = "tage-sc-l:8kb")]
    pub predictor: String,
    /// Seed for predictor-internal randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CriteriaArgs {
    /// Instructions per slice.
    #[arg(long, default_value_t = 30_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub slice_len: u64,
    /// A branch is hard to predict below this accuracy.
    #[arg(long, default_value_t = 0.99)]
    pub max_accuracy: f64,
    /// Minimum executions within a slice.
    #[arg(long, default_value_t = 15_000)]
    pub min_execs: u64,
    /// Minimum mispredictions within a slice.
    #[arg(long, default_value_t = 1_000)]
    pub min_mispreds: u64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Base instructions per cycle.
    #[arg(long, default_value_t = 4.0)]
    pub width: f64,
    /// Misprediction flush penalty in cycles.
    #[arg(long, default_value_t = 20.0)]
    pub penalty: f64,
    /// Pipeline scale factors.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    pub scales: Vec<u32>,
    /// Grow the penalty with scale as D * (1 + log2 s).
    #[arg(long)]
    pub scale_penalty: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Program spec (JSON, or TOML by extension).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instructions to generate.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub len: u64,
    /// Output trace; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// bt1-text, bt1-bin, it1-jsonl or it1-bin; inferred from the extension
    /// (.bt1, .bt1b, .jsonl, .it1) when absent.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct H2pArgs {
    /// Trace per application input; repeat for cross-input persistence.
    #[arg(long, required = true)]
    pub trace: Vec<PathBuf>,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub criteria: CriteriaArgs,
    /// Cross-input threshold: report ips flagged in at least this many
    /// inputs (default: every input).
    #[arg(long)]
    pub cross_k: Option<usize>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct HhArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    /// Rows to keep (0 keeps all).
    #[arg(long, default_value_t = 0)]
    pub top: usize,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct RareArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub bin_width: u64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct RecurArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct DepsArgs {
    /// Instruction trace (IT1).
    #[arg(long)]
    pub trace: PathBuf,
    /// Target branch ips; screened with the predictor when absent.
    #[arg(long = "h2p", value_parser = parse_ip)]
    pub h2p: Vec<u64>,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub criteria: CriteriaArgs,
    /// Instructions before each execution searched for dependencies.
    #[arg(long, default_value_t = 5_000)]
    pub window: usize,
    /// Compare direct read sets instead of full backward slices.
    #[arg(long)]
    pub direct_reads_only: bool,
    /// Track registers only, ignoring memory.
    #[arg(long)]
    pub no_memory: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct RegvalsArgs {
    /// Instruction trace (IT1).
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long = "h2p", value_parser = parse_ip, required = true)]
    pub h2p: Vec<u64>,
    /// Tracked register ids.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17")]
    pub regs: Vec<u8>,
    /// Mask applied to register values.
    #[arg(long, value_parser = parse_ip, default_value = "0xffffffff")]
    pub mask: u64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub criteria: CriteriaArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Execution cutoffs for perfect-min-execs oracles.
    #[arg(long, value_delimiter = ',', default_value = "1000,100")]
    pub cutoffs: Vec<u64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// TAGE-SC-L budgets in KB.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512,1024")]
    pub budgets: Vec<u64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct TrainHelperArgs {
    /// Training traces, one per application input.
    #[arg(long, required = true)]
    pub trace: Vec<PathBuf>,
    /// Target branch ips.
    #[arg(long = "ip", value_parser = parse_ip, required = true)]
    pub ips: Vec<u64>,
    /// pattern-table or perceptron.
    #[arg(long, default_value = "pattern-table")]
    pub kind: String,
    /// History length in branches (1..=64).
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u16).range(1..=64))]
    pub history: u16,
    /// Confidence needed to override the baseline.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output HM1 file (default `<out>/helpers.hm1`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct EvalHelperArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out trace.
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub out: OutDir,
}

/// Decimal or `0x`-prefixed hexadecimal.
fn parse_ip(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16),
        None => s.parse(),
    };
    r.map_err(|e| format!("`{s}`: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
