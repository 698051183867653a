use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::Serialize;

use super::model::HelperModel;
use crate::predictors::{build, hash_of, simulate, AllocationTelemetry, BranchPredictor, ConfigError, MispredictionStream, Prediction, PredictorConfig, Provider};
use crate::trace::{BranchRecord, BranchTrace};

/// Online statistics for one attached helper; its parameters stay frozen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct HelperStats {
    /// Executions where the helper had a prediction.
    pub predictions: u64,
    pub correct: u64,
    /// Executions where the helper overrode the baseline.
    pub overrides: u64,
}

/// A baseline predictor with per-branch helpers that override it when
/// confident enough.
pub struct HelperComposite<P: BranchPredictor> {
    baseline: P,
    helpers: BTreeMap<u64, HelperModel>,
    stats: BTreeMap<u64, HelperStats>,
    history: u64,
}

pub fn attach_helpers<P: BranchPredictor>(baseline: P, models: Vec<HelperModel>) -> Result<HelperComposite<P>, ConfigError> {
    let mut helpers = BTreeMap::new();
    for m in models {
        m.validate().map_err(ConfigError::Invalid)?;
        let ip = m.ip;
        if helpers.insert(ip, m).is_some() {
            return Err(ConfigError::Invalid(format!("more than one helper for branch {ip:#x}")));
        }
    }
    let stats = helpers.keys().map(|&ip| (ip, HelperStats::default())).collect();
    Ok(HelperComposite { baseline, helpers, stats, history: 0 })
}

impl<P: BranchPredictor> HelperComposite<P> {
    pub fn baseline(&self) -> &P {
        &self.baseline
    }

    pub fn stats(&self) -> &BTreeMap<u64, HelperStats> {
        &self.stats
    }

    /// Hash of the attached helper parameters.
    pub fn model_fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for m in self.helpers.values() {
            m.ip.hash(&mut h);
            m.history.hash(&mut h);
            m.params.hash(&mut h);
            m.tau.to_bits().hash(&mut h);
            m.provenance.hash(&mut h);
        }
        h.finish()
    }

    fn helper_vote(&self, ip: u64) -> Option<(bool, bool)> {
        let m = self.helpers.get(&ip)?;
        let (taken, conf) = m.predict(self.history)?;
        Some((taken, conf >= f64::from(m.tau)))
    }
}

impl<P: BranchPredictor> BranchPredictor for HelperComposite<P> {
    fn name(&self) -> String {
        format!("{}+{}helpers", self.baseline.name(), self.helpers.len())
    }

    fn predict(&self, ip: u64) -> Prediction {
        match self.helper_vote(ip) {
            Some((taken, true)) => Prediction::new(taken, 3, Provider::Helper),
            _ => self.baseline.predict(ip),
        }
    }

    fn update(&mut self, record: &BranchRecord) {
        if record.is_cond() {
            if let Some((taken, overrides)) = self.helper_vote(record.ip) {
                let s = self.stats.get_mut(&record.ip).expect("stats per helper");
                s.predictions += 1;
                s.correct += u64::from(taken == record.taken);
                s.overrides += u64::from(overrides);
            }
        }
        self.baseline.update(record);
        if record.is_cond() {
            self.history = (self.history << 1) | u64::from(record.taken);
        }
    }

    fn fingerprint(&self) -> u64 {
        hash_of(&(self.baseline.fingerprint(), self.model_fingerprint(), &self.stats, self.history))
    }

    fn storage_bytes(&self) -> u64 {
        self.baseline.storage_bytes()
    }

    fn telemetry(&self) -> Option<&AllocationTelemetry> {
        self.baseline.telemetry()
    }

    fn check_invariants(&self) -> Result<(), String> {
        self.baseline.check_invariants()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpDelta {
    pub ip: u64,
    pub executions: u64,
    pub baseline_accuracy: Option<f64>,
    pub composite_accuracy: Option<f64>,
    /// Composite minus baseline; `None` when the ip never executes.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralizationReport {
    pub per_ip: Vec<IpDelta>,
    pub baseline_accuracy: Option<f64>,
    pub composite_accuracy: Option<f64>,
    pub delta: Option<f64>,
}

/// Per-ip and overall accuracy of the two streams; `ips` are reported even
/// when they never execute.
pub fn compare_streams(baseline: &MispredictionStream, composite: &MispredictionStream, ips: &[u64]) -> GeneralizationReport {
    let delta = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| b - a);
    let per_ip = ips
        .iter()
        .map(|&ip| {
            let (b, c) = (baseline.accuracy_of(ip), composite.accuracy_of(ip));
            let executions = baseline.outcomes.iter().filter(|o| o.ip == ip).count() as u64;
            IpDelta { ip, executions, baseline_accuracy: b, composite_accuracy: c, delta: delta(b, c) }
        })
        .collect();
    let (b, c) = (baseline.accuracy(), composite.accuracy());
    GeneralizationReport { per_ip, baseline_accuracy: b, composite_accuracy: c, delta: delta(b, c) }
}

/// Simulates the held-out trace with and without the helpers attached.
pub fn evaluate_generalization(
    models: &[HelperModel],
    trace: &BranchTrace,
    baseline: &PredictorConfig,
    seed: u64,
) -> Result<(GeneralizationReport, MispredictionStream, MispredictionStream), ConfigError> {
    let base_stream = simulate(trace, &mut build(baseline, seed)?);
    let mut composite = attach_helpers(build(baseline, seed)?, models.to_vec())?;
    let comp_stream = simulate(trace, &mut composite);
    let ips: Vec<u64> = models.iter().map(|m| m.ip).collect();
    Ok((compare_streams(&base_stream, &comp_stream, &ips), base_stream, comp_stream))
}
