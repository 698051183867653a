use super::config::TageScLConfig;
use super::loop_pred::LoopPredictor;
use super::sc::{ScOutput, StatisticalCorrector};
use super::tage::{AllocationTelemetry, Tage, TageLookup};
use super::{hash_of, BranchPredictor, Prediction, Provider};
use crate::trace::BranchRecord;

/// TAGE, corrected by the statistical corrector, overridden by the loop
/// predictor when a loop entry is confident.
#[derive(Debug, Clone, Hash)]
pub struct TageScL {
    config: TageScLConfig,
    tage: Tage,
    sc: StatisticalCorrector,
    lp: LoopPredictor,
    /// Signed confidence that confident loop entries beat TAGE+SC; loop
    /// overrides are suppressed while negative.
    loop_use: i8,
    sc_overrides: u64,
    loop_overrides: u64,
}

struct Decision {
    lk: TageLookup,
    sc: ScOutput,
    loop_pred: Option<bool>,
    corrected: Prediction,
    prediction: Prediction,
}

impl TageScL {
    pub fn new(config: TageScLConfig, seed: u64) -> Self {
        TageScL {
            tage: Tage::new(config.tage.clone(), seed),
            sc: StatisticalCorrector::new(config.sc.clone()),
            lp: LoopPredictor::new(config.loop_.clone()),
            config,
            loop_use: 0,
            sc_overrides: 0,
            loop_overrides: 0,
        }
    }

    pub fn tage(&self) -> &Tage {
        &self.tage
    }

    pub fn corrector(&self) -> &StatisticalCorrector {
        &self.sc
    }

    pub fn loop_predictor(&self) -> &LoopPredictor {
        &self.lp
    }

    /// Times the corrector's prediction was used in place of TAGE's.
    pub fn sc_overrides(&self) -> u64 {
        self.sc_overrides
    }

    pub fn loop_overrides(&self) -> u64 {
        self.loop_overrides
    }

    fn decide(&self, ip: u64) -> Decision {
        let lk = self.tage.lookup(ip);
        let sc = self.sc.adjust(lk.taken, lk.confidence(), ip, self.tage.history());
        let loop_pred = self.lp.predict(ip);
        let corrected = if sc.overrides {
            Prediction::new(sc.taken, sc.confidence, Provider::Sc)
        } else {
            lk.prediction()
        };
        let prediction = match loop_pred {
            Some(t) if self.loop_use >= 0 => Prediction::new(t, 3, Provider::Loop),
            _ => corrected,
        };
        Decision { lk, sc, loop_pred, corrected, prediction }
    }
}

impl BranchPredictor for TageScL {
    fn name(&self) -> String {
        format!("tage-sc-l:{}b", self.storage_bytes())
    }

    fn predict(&self, ip: u64) -> Prediction {
        self.decide(ip).prediction
    }

    fn update(&mut self, record: &BranchRecord) {
        if !record.is_cond() {
            self.tage.observe_other(record.ip);
            return;
        }
        let ip = record.ip;
        let taken = record.taken;
        let d = self.decide(ip);
        match d.prediction.provider {
            Provider::Loop => self.loop_overrides += 1,
            Provider::Sc => self.sc_overrides += 1,
            _ => {}
        }
        if let Some(l) = d.loop_pred {
            if l != d.corrected.taken {
                self.loop_use = if l == taken { self.loop_use.saturating_add(1).min(63) } else { self.loop_use.saturating_sub(1).max(-64) };
            }
        }
        self.lp.update(ip, taken, d.prediction.taken != taken);
        self.sc.train(&d.sc, ip, self.tage.history(), taken);
        self.tage.train(ip, taken, &d.lk);
    }

    fn fingerprint(&self) -> u64 {
        hash_of(self)
    }

    fn storage_bytes(&self) -> u64 {
        self.config.storage_bytes()
    }

    fn telemetry(&self) -> Option<&AllocationTelemetry> {
        Some(self.tage.allocation_telemetry())
    }

    fn check_invariants(&self) -> Result<(), String> {
        self.tage.check_tables()?;
        self.sc.check()?;
        self.lp.check()
    }
}
