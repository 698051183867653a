//! Trace-driven branch prediction workbench: predictors, misprediction
//! characterization, dataflow dependency analysis, IPC opportunity modeling
//! and offline-trained helper predictors over seeded synthetic traces.

pub mod charax;
pub mod depgraph;
pub mod helper;
pub mod pipeline;
pub mod predictors;
pub mod trace;

pub use charax::{BranchCounts, H2PCriteria, H2PReport, SliceStats};
pub use depgraph::{DepError, DepOptions, DependencyDistribution, ValueInstance};
pub use helper::{HelperKind, HelperModel, ModelError, TrainingError};
pub use pipeline::{IpcResult, PipelineModelConfig, PredictionOracle};
pub use predictors::{BranchPredictor, ConfigError, MispredictionStream, Prediction, PredictorConfig, Provider};
pub use trace::{
    BranchKind, BranchRecord, BranchTrace, Difficulty, InstrTrace, InstructionRecord, Location, PlantedManifest, SyntheticProgramSpec,
    TraceError,
};
