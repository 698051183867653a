//! Offline-trained per-branch helper predictors, their HM1 file format and
//! the composite that deploys them next to a baseline predictor.

mod composite;
mod format;
mod model;

pub use composite::{attach_helpers, compare_streams, evaluate_generalization, GeneralizationReport, HelperComposite, HelperStats, IpDelta};
pub use format::{load_models, save_models, ModelError, HM1_MAGIC, HM1_VERSION};
pub use model::{
    train_helper, train_helpers, CorpusTrace, HelperKind, HelperModel, HelperParams, Provenance, TrainingCorpus, TrainingError,
    MAX_PATTERN_BITS, MIN_TRAINING_SAMPLES,
};
