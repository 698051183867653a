//! Predictor configurations, named presets and storage accounting.
//!
//! A config file is TOML (or JSON) with a `kind` key:
//!
//! ```toml
//! kind = "tage-sc-l"
//! [tage]
//! num_tables = 12
//! min_hist = 4
//! max_hist = 1000
//! log_entries = 8
//! base_log_entries = 12
//! [sc]
//! rows = 16
//! bias_entries = 256
//! [loop]
//! entries = 64
//! ways = 4
//! ```
//!
//! Other kinds: `always-taken`; `bimodal` (`entries`); `gshare` (`entries`,
//! `history`); `perceptron` (`history`, `rows`, `weight_bits`, `threshold`);
//! `tage` (the `[tage]` keys at top level).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loop_pred::LoopConfig;
use super::perceptron::PerceptronConfig;
use super::sc::ScConfig;
use super::tage::TageConfig;
use super::ConfigError;

pub const KB: u64 = 1024;

/// Recognized preset spellings; `tage-sc-l:<N>kb`, `tage:<N>kb`,
/// `gshare:<N>k`, `bimodal:<N>k` and `perceptron:<n>` accept any size.
pub const PRESETS: [&str; 6] = ["tage-sc-l:8kb", "tage-sc-l:64kb", "gshare:16k", "perceptron:28", "bimodal:4k", "always-taken"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TageScLConfig {
    #[serde(default)]
    pub tage: TageConfig,
    #[serde(default)]
    pub sc: ScConfig,
    #[serde(default, rename = "loop")]
    pub loop_: LoopConfig,
}

impl TageScLConfig {
    /// 8KB-class geometry: 12 x 256-entry tagged tables, 4K base entries.
    pub fn class_8kb() -> Self {
        TageScLConfig { tage: TageConfig::default(), sc: ScConfig::default(), loop_: LoopConfig::default() }
    }

    /// 64KB-class geometry: 12 x 2K-entry tagged tables, 32K base entries,
    /// histories up to 3,000.
    pub fn class_64kb() -> Self {
        TageScLConfig {
            tage: TageConfig { max_hist: 3000, log_entries: 11, base_log_entries: 15, ..TageConfig::default() },
            sc: ScConfig { rows: 64, bias_entries: 1024, ..ScConfig::default() },
            loop_: LoopConfig { entries: 256, ..LoopConfig::default() },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tage.validate()?;
        self.sc.validate()?;
        self.loop_.validate()
    }

    pub fn storage_bytes(&self) -> u64 {
        (self.tage.storage_bits() + self.sc.storage_bits() + self.loop_.storage_bits()) / 8
    }

    /// Multiplies every table by `2^k` (negative `k` shrinks).
    fn scaled(&self, k: i32) -> Option<Self> {
        let shift = |v: u32| -> Option<u32> {
            let s = v as i32 + k;
            (s >= 0).then_some(s as u32)
        };
        let scale = |v: usize| -> Option<usize> {
            if k >= 0 {
                v.checked_shl(k as u32)
            } else {
                let s = v >> (-k) as u32;
                (s > 0).then_some(s)
            }
        };
        let mut c = self.clone();
        c.tage.log_entries = shift(c.tage.log_entries)?;
        c.tage.base_log_entries = shift(c.tage.base_log_entries)?;
        c.sc.rows = scale(c.sc.rows)?;
        c.sc.bias_entries = scale(c.sc.bias_entries)?;
        let sets = scale(c.loop_.entries / c.loop_.ways)?;
        c.loop_.entries = sets * c.loop_.ways;
        Some(c)
    }
}

/// Geometry for an arbitrary byte budget: the 8KB-class layout below 64KB,
/// the 64KB-class layout at or above it, scaled by the power of two that
/// best fits the budget without exceeding it by more than 10%.
pub fn resolve_budget(bytes: u64) -> Result<TageScLConfig, ConfigError> {
    if bytes == 0 {
        return Err(ConfigError::Budget(bytes));
    }
    let base = if bytes < 64 * KB { TageScLConfig::class_8kb() } else { TageScLConfig::class_64kb() };
    let nominal = base.storage_bytes() as f64;
    let limit = bytes as f64 * 1.10;
    let mut k = (bytes as f64 / nominal).log2().round() as i32;
    while k > -16 {
        match base.scaled(k) {
            Some(c) if (c.storage_bytes() as f64) <= limit => {
                if c.tage.log_entries < 4 || c.tage.log_entries > 24 || c.validate().is_err() {
                    break;
                }
                return Ok(c);
            }
            _ => k -= 1,
        }
    }
    Err(ConfigError::Budget(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictorConfig {
    AlwaysTaken,
    Bimodal { entries: usize },
    Gshare { entries: usize, history: u32 },
    Perceptron(PerceptronConfig),
    Tage(TageConfig),
    #[serde(rename = "tage-sc-l")]
    TageScL(TageScLConfig),
}

fn parse_size(s: &str, suffix: &str) -> Option<u64> {
    s.strip_suffix(suffix)?.parse().ok()
}

impl PredictorConfig {
    /// Parses a preset name, or loads a config file when `spec` names one.
    pub fn parse(spec: &str) -> Result<Self, ConfigError> {
        if let Some(c) = Self::preset(spec)? {
            return Ok(c);
        }
        let path = Path::new(spec);
        if path.is_file() {
            return Self::load_file(path);
        }
        Err(ConfigError::UnknownPreset(spec.to_string()))
    }

    fn preset(spec: &str) -> Result<Option<Self>, ConfigError> {
        let s = spec.to_ascii_lowercase();
        let bad = || ConfigError::UnknownPreset(spec.to_string());
        let (family, arg) = match s.split_once(':') {
            Some((f, a)) => (f, Some(a)),
            None => (s.as_str(), None),
        };
        let config = match (family, arg) {
            ("always-taken", None) => PredictorConfig::AlwaysTaken,
            ("tage-sc-l", Some("8kb")) => PredictorConfig::TageScL(TageScLConfig::class_8kb()),
            ("tage-sc-l", Some("64kb")) => PredictorConfig::TageScL(TageScLConfig::class_64kb()),
            ("tage-sc-l", Some(a)) => {
                PredictorConfig::TageScL(resolve_budget(parse_size(a, "kb").ok_or_else(bad)? * KB)?)
            }
            ("tage", Some(a)) => {
                let kb = parse_size(a, "kb").ok_or_else(bad)?;
                let full = match kb {
                    8 => TageScLConfig::class_8kb(),
                    64 => TageScLConfig::class_64kb(),
                    _ => resolve_budget(kb * KB)?,
                };
                PredictorConfig::Tage(full.tage)
            }
            ("gshare", Some(a)) => {
                let entries = parse_size(a, "k").ok_or_else(bad)? as usize * 1024;
                PredictorConfig::Gshare { entries, history: entries.trailing_zeros() }
            }
            ("bimodal", Some(a)) => PredictorConfig::Bimodal { entries: parse_size(a, "k").ok_or_else(bad)? as usize * 1024 },
            ("perceptron", Some(a)) => PredictorConfig::Perceptron(PerceptronConfig::new(a.parse().map_err(|_| bad())?)),
            _ => return Ok(None),
        };
        config.validate()?;
        Ok(Some(config))
    }

    pub fn load_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        let config: PredictorConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            PredictorConfig::AlwaysTaken => Ok(()),
            PredictorConfig::Bimodal { entries } | PredictorConfig::Gshare { entries, .. } => {
                if entries.is_power_of_two() {
                    Ok(())
                } else {
                    Err(ConfigError::Invalid(format!("{entries} entries is not a power of two")))
                }
            }
            PredictorConfig::Perceptron(c) => c.validate(),
            PredictorConfig::Tage(c) => c.validate(),
            PredictorConfig::TageScL(c) => c.validate(),
        }
    }
}

/// Estimated hardware storage of a configuration in bytes.
pub fn estimate_storage(config: &PredictorConfig) -> u64 {
    match config {
        PredictorConfig::AlwaysTaken => 0,
        PredictorConfig::Bimodal { entries } | PredictorConfig::Gshare { entries, .. } => *entries as u64 * 2 / 8,
        PredictorConfig::Perceptron(c) => c.storage_bytes(),
        PredictorConfig::Tage(c) => c.storage_bytes(),
        PredictorConfig::TageScL(c) => c.storage_bytes(),
    }
}
