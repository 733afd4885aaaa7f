//! Error type shared by all modules.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least 2 samples to fit a gaussian, got {0}")]
    TooFewSamples(usize),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("logit vector must have at least 2 components, got {0}")]
    TooFewClasses(usize),

    #[error("class {class:?} has too few {role} samples ({count}, need at least 2)")]
    ClassTooFewSamples {
        class: String,
        role: &'static str,
        count: usize,
    },

    #[error(
        "class {class:?} is non-discriminative: correct-class mean {correct_mean} \
         does not exceed wrong-class mean {wrong_mean}"
    )]
    NonDiscriminativeClass {
        class: String,
        correct_mean: f64,
        wrong_mean: f64,
    },

    #[error("logit width mismatch: expected {expected} components, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("class manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("uncalibrated model: psi detection requires a calibrated threshold (run calibrate first)")]
    UncalibratedModel,

    #[error("psi threshold must lie strictly in (0,1), got {0}")]
    InvalidThreshold(f64),

    #[error("invalid baseline config: {0}")]
    InvalidBaselineConfig(String),

    #[error("invalid calibration spec: {0}")]
    InvalidCalibrationSpec(String),

    #[error("validation sample {id:?} carries label {label:?}; calibration requires class labels only")]
    ValidationLabelNotClass { id: String, label: String },

    #[error("calibration undefined: the validation set contains no misclassified samples")]
    EmptyMisclassifiedSet,

    #[error(
        "no threshold in the grid reaches coverage {target}: best is {best_threshold} \
         with coverage {best_coverage}"
    )]
    NoThresholdAchievesCoverage {
        target: f64,
        best_threshold: f64,
        best_coverage: f64,
    },

    #[error("empty {0} split: evaluation requires at least one sample of each kind")]
    EmptySplit(&'static str),

    #[error("decision id {id:?} does not match any sample in the truth set")]
    IdMismatch { id: String },

    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },

    #[error("truth sample {id:?} has an unknown label; evaluation needs class or OOD labels")]
    TruthLabelUnknown { id: String },

    #[error("malformed decision for {id:?}: {reason}")]
    MalformedDecision { id: String, reason: String },

    #[error("invalid synth spec: {0}")]
    InvalidSynthSpec(String),

    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("line {line}, column {column:?}: non-numeric logit {value:?}")]
    NonNumericLogit {
        line: u64,
        column: String,
        value: String,
    },

    #[error("line {line}: unknown label {label:?} (expected a class name, \"__OOD__\" or \"?\")")]
    UnknownLabel { line: u64, label: String },

    #[error("line {line}: duplicate id {id:?}")]
    DuplicateIdAt { line: u64, id: String },

    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}
