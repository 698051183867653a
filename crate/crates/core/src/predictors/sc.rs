use serde::{Deserialize, Serialize};

use super::counter::clamp_add;
use super::history::GlobalHistory;
use super::ConfigError;

/// Global-history window lengths feeding the corrector.
pub const SC_WINDOWS: [usize; 3] = [8, 16, 32];
const ROW_WEIGHTS: usize = 1 + 8 + 16 + 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScConfig {
    #[serde(default = "d_rows")]
    pub rows: usize,
    #[serde(default = "d_bias")]
    pub bias_entries: usize,
    #[serde(default = "d_bits")]
    pub weight_bits: u8,
    #[serde(default = "d_theta")]
    pub initial_threshold: i32,
    #[serde(default = "d_theta_min")]
    pub min_threshold: i32,
    #[serde(default = "d_theta_max")]
    pub max_threshold: i32,
}

fn d_rows() -> usize {
    16
}
fn d_bias() -> usize {
    256
}
fn d_bits() -> u8 {
    6
}
fn d_theta() -> i32 {
    24
}
fn d_theta_min() -> i32 {
    8
}
fn d_theta_max() -> i32 {
    96
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig {
            rows: d_rows(),
            bias_entries: d_bias(),
            weight_bits: d_bits(),
            initial_threshold: d_theta(),
            min_threshold: d_theta_min(),
            max_threshold: d_theta_max(),
        }
    }
}

impl ScConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.rows.is_power_of_two() || !self.bias_entries.is_power_of_two() {
            return Err(ConfigError::Invalid("SC table sizes must be powers of two".into()));
        }
        if !(2..=15).contains(&self.weight_bits) {
            return Err(ConfigError::Invalid("SC weight width out of range".into()));
        }
        if !(0 < self.min_threshold
            && self.min_threshold <= self.initial_threshold
            && self.initial_threshold <= self.max_threshold)
        {
            return Err(ConfigError::Invalid("SC thresholds must satisfy 0 < min <= initial <= max".into()));
        }
        Ok(())
    }

    pub fn storage_bits(&self) -> u64 {
        let w = u64::from(self.weight_bits);
        (self.rows * ROW_WEIGHTS + self.bias_entries) as u64 * w
    }
}

/// What the corrector made of one TAGE prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScOutput {
    pub sum: i32,
    pub tage_taken: bool,
    pub overrides: bool,
    pub taken: bool,
    pub confidence: u8,
}

/// Perceptron-style corrector over the TAGE output, a per-ip bias and three
/// global-history windows.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StatisticalCorrector {
    config: ScConfig,
    weights: Vec<i16>,
    bias: Vec<i16>,
    threshold: i32,
}

impl StatisticalCorrector {
    pub fn new(config: ScConfig) -> Self {
        StatisticalCorrector {
            weights: vec![0; config.rows * ROW_WEIGHTS],
            bias: vec![0; config.bias_entries],
            threshold: config.initial_threshold,
            config,
        }
    }

    pub fn threshold(&self) -> i32 {
        self.threshold
    }

    fn row(&self, ip: u64) -> usize {
        (((ip >> 2) ^ (ip >> 9)) as usize & (self.config.rows - 1)) * ROW_WEIGHTS
    }

    fn bias_index(&self, ip: u64, tage_taken: bool) -> usize {
        ((((ip >> 2) << 1) | u64::from(tage_taken)) as usize) & (self.config.bias_entries - 1)
    }

    fn provider_input(tage_taken: bool, confidence: u8) -> i32 {
        let s = if tage_taken { 1 } else { -1 };
        s * 4 * (i32::from(confidence.min(3)) + 1)
    }

    pub fn sum(&self, tage_taken: bool, confidence: u8, ip: u64, hist: &GlobalHistory) -> i32 {
        let r = self.row(ip);
        let w = &self.weights[r..r + ROW_WEIGHTS];
        let mut sum = i32::from(w[0]) * Self::provider_input(tage_taken, confidence);
        sum += i32::from(self.bias[self.bias_index(ip, tage_taken)]);
        let h = hist.recent();
        let mut k = 1;
        for len in SC_WINDOWS {
            for j in 0..len {
                let x = if (h >> j) & 1 == 1 { 1 } else { -1 };
                sum += i32::from(w[k]) * x;
                k += 1;
            }
        }
        sum
    }

    pub fn adjust(&self, tage_taken: bool, confidence: u8, ip: u64, hist: &GlobalHistory) -> ScOutput {
        let sum = self.sum(tage_taken, confidence, ip, hist);
        let sc_taken = sum >= 0;
        let overrides = sc_taken != tage_taken && sum.abs() > self.threshold;
        let (taken, confidence) = if overrides {
            (sc_taken, if sum.abs() > 2 * self.threshold { 2 } else { 1 })
        } else {
            (tage_taken, confidence)
        };
        ScOutput { sum, tage_taken, overrides, taken, confidence }
    }

    pub fn train(&mut self, out: &ScOutput, ip: u64, hist: &GlobalHistory, taken: bool) {
        let sc_taken = out.sum >= 0;
        if sc_taken != out.tage_taken {
            if sc_taken == taken {
                self.threshold -= 1;
            } else {
                self.threshold += 1;
            }
            self.threshold = self.threshold.clamp(self.config.min_threshold, self.config.max_threshold);
        }
        if sc_taken == taken && out.sum.abs() > self.threshold {
            return;
        }
        let t: i16 = if taken { 1 } else { -1 };
        let bits = self.config.weight_bits;
        let r = self.row(ip);
        let p: i16 = if out.tage_taken { 1 } else { -1 };
        self.weights[r] = clamp_add(self.weights[r], t * p, bits);
        let b = self.bias_index(ip, out.tage_taken);
        self.bias[b] = clamp_add(self.bias[b], t, bits);
        let h = hist.recent();
        let mut k = r + 1;
        for len in SC_WINDOWS {
            for j in 0..len {
                let x: i16 = if (h >> j) & 1 == 1 { 1 } else { -1 };
                self.weights[k] = clamp_add(self.weights[k], t * x, bits);
                k += 1;
            }
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let b = self.config.weight_bits;
        let (lo, hi) = (-(1i16 << (b - 1)), (1i16 << (b - 1)) - 1);
        if self.weights.iter().chain(&self.bias).any(|w| !(lo..=hi).contains(w)) {
            return Err("SC weight out of range".into());
        }
        if !(self.config.min_threshold..=self.config.max_threshold).contains(&self.threshold) {
            return Err("SC threshold out of range".into());
        }
        Ok(())
    }
}
