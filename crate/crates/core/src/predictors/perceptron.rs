use serde::{Deserialize, Serialize};

use super::counter::clamp_add;
use super::{hash_of, BranchPredictor, ConfigError, Prediction, Provider};
use crate::trace::BranchRecord;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptronConfig {
    pub history: usize,
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u8,
    /// Training threshold; defaults to `floor(1.93 * history + 14)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<i32>,
}

fn default_rows() -> usize {
    256
}

fn default_weight_bits() -> u8 {
    8
}

impl PerceptronConfig {
    pub fn new(history: usize) -> Self {
        PerceptronConfig { history, rows: default_rows(), weight_bits: default_weight_bits(), threshold: None }
    }

    pub fn theta(&self) -> i32 {
        self.threshold.unwrap_or_else(|| (1.93 * self.history as f64 + 14.0).floor() as i32)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.rows.is_power_of_two() {
            return Err(ConfigError::Invalid(format!("perceptron rows {} not a power of two", self.rows)));
        }
        if !(2..=15).contains(&self.weight_bits) {
            return Err(ConfigError::Invalid(format!("weight width {} out of range", self.weight_bits)));
        }
        if self.history == 0 || self.history > 1024 {
            return Err(ConfigError::Invalid(format!("perceptron history {} out of range", self.history)));
        }
        if self.theta() <= 0 {
            return Err(ConfigError::Invalid("perceptron threshold must be > 0".into()));
        }
        Ok(())
    }

    pub fn storage_bytes(&self) -> u64 {
        self.rows as u64 * (self.history as u64 + 1) * u64::from(self.weight_bits) / 8
    }
}

/// Hashed perceptron table over global direction history.
#[derive(Debug, Clone, Hash)]
pub struct Perceptron {
    config: PerceptronConfig,
    theta: i32,
    /// Row-major; column 0 is the bias weight.
    weights: Vec<i16>,
    /// Most recent first, as +1/-1.
    history: std::collections::VecDeque<i8>,
}

impl Perceptron {
    pub fn new(config: PerceptronConfig) -> Self {
        let n = config.history;
        let theta = config.theta();
        Perceptron {
            weights: vec![0; config.rows * (n + 1)],
            history: std::iter::repeat_n(-1, n).collect(),
            theta,
            config,
        }
    }

    pub fn theta(&self) -> i32 {
        self.theta
    }

    fn row(&self, ip: u64) -> usize {
        (((ip >> 2) ^ (ip >> 12)) as usize & (self.config.rows - 1)) * (self.config.history + 1)
    }

    pub fn weights(&self, ip: u64) -> &[i16] {
        let r = self.row(ip);
        &self.weights[r..r + self.config.history + 1]
    }

    /// Overrides the stored history (most recent first, `true` = taken).
    pub fn set_history(&mut self, bits: &[bool]) {
        for (slot, &b) in self.history.iter_mut().zip(bits) {
            *slot = if b { 1 } else { -1 };
        }
    }

    pub fn output(&self, ip: u64) -> i32 {
        let w = self.weights(ip);
        let mut y = i32::from(w[0]);
        for (wi, &x) in w[1..].iter().zip(&self.history) {
            y += i32::from(*wi) * i32::from(x);
        }
        y
    }

    fn confidence(&self, y: i32) -> u8 {
        let m = y.abs();
        if m > self.theta {
            3
        } else if m * 2 > self.theta {
            2
        } else if m > 0 {
            1
        } else {
            0
        }
    }
}

impl BranchPredictor for Perceptron {
    fn name(&self) -> String {
        format!("perceptron:{}", self.config.history)
    }

    fn predict(&self, ip: u64) -> Prediction {
        let y = self.output(ip);
        Prediction::new(y >= 0, self.confidence(y), Provider::Perceptron)
    }

    fn update(&mut self, record: &BranchRecord) {
        if !record.is_cond() {
            return;
        }
        let y = self.output(record.ip);
        let t: i16 = if record.taken { 1 } else { -1 };
        if (y >= 0) != record.taken || y.abs() <= self.theta {
            let r = self.row(record.ip);
            let bits = self.config.weight_bits;
            self.weights[r] = clamp_add(self.weights[r], t, bits);
            for (j, &x) in self.history.iter().enumerate() {
                let w = &mut self.weights[r + 1 + j];
                *w = clamp_add(*w, t * i16::from(x), bits);
            }
        }
        self.history.push_front(t as i8);
        self.history.pop_back();
    }

    fn fingerprint(&self) -> u64 {
        hash_of(self)
    }

    fn storage_bytes(&self) -> u64 {
        self.config.storage_bytes()
    }

    fn check_invariants(&self) -> Result<(), String> {
        let b = self.config.weight_bits;
        let (lo, hi) = (-(1i16 << (b - 1)), (1i16 << (b - 1)) - 1);
        match self.weights.iter().find(|w| !(lo..=hi).contains(*w)) {
            Some(w) => Err(format!("perceptron weight {w} outside [{lo}, {hi}]")),
            None => Ok(()),
        }
    }
}
