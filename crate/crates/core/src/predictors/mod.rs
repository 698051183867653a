//! Conditional branch direction predictors.

mod config;
mod counter;
mod ensemble;
mod history;
mod loop_pred;
mod perceptron;
mod sc;
mod simple;
mod simulate;
mod tage;

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::BranchRecord;

pub use config::{
    estimate_storage, resolve_budget, PredictorConfig, TageScLConfig, KB, PRESETS,
};
pub use counter::SaturatingCounter;
pub use ensemble::TageScL;
pub use history::{fold_history, FoldedHistory, GlobalHistory, PATH_ENTRIES};
pub use loop_pred::{LoopConfig, LoopEntry, LoopPredictor};
pub use perceptron::{Perceptron, PerceptronConfig};
pub use sc::{ScConfig, StatisticalCorrector, SC_WINDOWS};
pub use simple::{AlwaysTaken, Bimodal, Gshare};
pub use simulate::{simulate, MispredictionStream, Outcome};
pub use tage::{AllocationTelemetry, IpAllocations, Tage, TageConfig, TageLookup};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown predictor `{0}`")]
    UnknownPreset(String),
    #[error("invalid predictor config: {0}")]
    Invalid(String),
    #[error("no configuration fits a budget of {0} bytes")]
    Budget(u64),
}

/// Component that supplied a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provider {
    Static,
    Bimodal,
    Gshare,
    Perceptron,
    /// TAGE base table.
    Base,
    /// TAGE tagged table by index.
    Tagged(u8),
    Loop,
    Sc,
    Helper,
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provider::Static => f.write_str("static"),
            Provider::Bimodal => f.write_str("bimodal"),
            Provider::Gshare => f.write_str("gshare"),
            Provider::Perceptron => f.write_str("perceptron"),
            Provider::Base => f.write_str("base"),
            Provider::Tagged(i) => write!(f, "t{i}"),
            Provider::Loop => f.write_str("loop"),
            Provider::Sc => f.write_str("sc"),
            Provider::Helper => f.write_str("helper"),
        }
    }
}

impl FromStr for Provider {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "static" => Provider::Static,
            "bimodal" => Provider::Bimodal,
            "gshare" => Provider::Gshare,
            "perceptron" => Provider::Perceptron,
            "base" => Provider::Base,
            "loop" => Provider::Loop,
            "sc" => Provider::Sc,
            "helper" => Provider::Helper,
            t => match t.strip_prefix('t').and_then(|n| n.parse().ok()) {
                Some(i) => Provider::Tagged(i),
                None => return Err(format!("unknown provider `{s}`")),
            },
        })
    }
}

impl Serialize for Provider {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provider {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Prediction {
    pub taken: bool,
    /// 0 = weak or no match, 3 = saturated provider.
    pub confidence: u8,
    pub provider: Provider,
}

impl Prediction {
    pub fn new(taken: bool, confidence: u8, provider: Provider) -> Self {
        Prediction { taken, confidence: confidence.min(3), provider }
    }
}

pub trait BranchPredictor: Send {
    fn name(&self) -> String;

    /// Predicts the direction of the conditional branch at `ip`. Never
    /// mutates state.
    fn predict(&self, ip: u64) -> Prediction;

    /// Trains on one retired branch. Must be called for every branch in
    /// trace order, conditional or not.
    fn update(&mut self, record: &BranchRecord);

    /// Hash of the complete mutable state.
    fn fingerprint(&self) -> u64;

    fn storage_bytes(&self) -> u64;

    fn telemetry(&self) -> Option<&AllocationTelemetry> {
        None
    }

    /// Checks internal bounds (counter ranges, weight widths, telemetry).
    fn check_invariants(&self) -> Result<(), String> {
        Ok(())
    }
}

impl<P: BranchPredictor + ?Sized> BranchPredictor for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn predict(&self, ip: u64) -> Prediction {
        (**self).predict(ip)
    }
    fn update(&mut self, record: &BranchRecord) {
        (**self).update(record)
    }
    fn fingerprint(&self) -> u64 {
        (**self).fingerprint()
    }
    fn storage_bytes(&self) -> u64 {
        (**self).storage_bytes()
    }
    fn telemetry(&self) -> Option<&AllocationTelemetry> {
        (**self).telemetry()
    }
    fn check_invariants(&self) -> Result<(), String> {
        (**self).check_invariants()
    }
}

pub(crate) fn hash_of<T: Hash>(value: &T) -> u64 {
    let mut h = DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

/// Seeded RNG that can take part in state hashing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct StateRng(pub ChaCha8Rng);

impl StateRng {
    pub fn new(seed: u64) -> Self {
        StateRng(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Hash for StateRng {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.get_seed().hash(state);
        self.0.get_word_pos().hash(state);
    }
}

/// Builds a predictor from a config; `seed` drives any internal randomness.
pub fn build(config: &PredictorConfig, seed: u64) -> Result<Box<dyn BranchPredictor>, ConfigError> {
    config.validate()?;
    Ok(match config {
        PredictorConfig::AlwaysTaken => Box::new(AlwaysTaken),
        PredictorConfig::Bimodal { entries } => Box::new(Bimodal::new(*entries)),
        PredictorConfig::Gshare { entries, history } => Box::new(Gshare::new(*entries, *history)),
        PredictorConfig::Perceptron(c) => Box::new(Perceptron::new(c.clone())),
        PredictorConfig::Tage(c) => Box::new(Tage::new(c.clone(), seed)),
        PredictorConfig::TageScL(c) => Box::new(TageScL::new(c.clone(), seed)),
    })
}

/// Shorthand for `build(&PredictorConfig::parse(spec)?, seed)`.
pub fn from_preset(spec: &str, seed: u64) -> Result<Box<dyn BranchPredictor>, ConfigError> {
    build(&PredictorConfig::parse(spec)?, seed)
}
