//! Post-hoc out-of-distribution detection from raw classifier logits.
//!
//! The toolkit consumes the last-layer outputs of an already trained
//! classifier and builds a detector on top of them without retraining:
//!
//! 1. fit per-class correct/wrong gaussian distributions from a labeled
//!    train split ([`fit_model`]);
//! 2. map logits to bounded per-class probability scores
//!    ([`probability_score`], [`ps_vector`]);
//! 3. interpret the score vector through a rule table into green / yellow /
//!    red verdicts ([`interpret`], [`psi_detect`]);
//! 4. calibrate the interpreter threshold on validation misclassifications,
//!    with no OOD examples needed ([`calibrate_psi`]);
//! 5. evaluate against ground truth with an OOD-augmented confusion matrix
//!    and weighted accuracy ([`evaluate`]).
//!
//! Max-softmax and energy baselines share the same decision record and
//! calibration machinery, and a seeded synthetic generator ([`synth`])
//! provides ground-truth problems for end-to-end checks.

pub mod calibrate;
pub mod detect;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod synth;

pub use calibrate::{
    calibrate_baseline, calibrate_psi, default_probability_grid, energy_grid_from_scores,
    misclassified_subset, quantile_threshold, threshold_sweep, BaselineKind, CalibrationResult,
    CalibrationSpec, SweepRow,
};
pub use detect::{
    energy_detect, energy_score, interpret, max_softmax_detect, ps_vector, psi_detect, softmax,
    BaselineConfig, DetectorDecision, PsVector, Verdict, VerdictCode, VerdictSubtype,
};
pub use error::{Error, Result};
pub use eval::{
    distribution_report, evaluate, evaluate_psi, weighted_accuracy, DistributionReport, EvalReport,
};
pub use model::{
    fit_gaussian, fit_model, probability_score, ClassScoreFunction, Dataset, DetectorModel,
    GaussianStats, Label, LabeledSample, LogitVector, OOD_LABEL, SIGMA_FLOOR, UNKNOWN_LABEL,
};
pub use synth::{generate, oracle_labels, SynthDatasets, SynthSpec};
