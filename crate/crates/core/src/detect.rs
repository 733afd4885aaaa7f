//! The probability-score interpreter and the two logit-space baselines.
//!
//! All three detectors reduce a logit vector to a [`DetectorDecision`], the
//! uniform record used for evaluation: max-softmax and energy threshold a
//! scalar confidence, while the interpreter reads the whole per-class score
//! vector through the rule table.

use crate::error::{Error, Result};
use crate::model::{probability_score, DetectorModel, LogitVector};

/// Per-class probability scores for one sample, each in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PsVector {
    scores: Vec<f64>,
}

impl PsVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::TooFewClasses(scores.len()));
        }
        for &s in &scores {
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::SchemaViolation(format!(
                    "probability score {s} outside [-1, 1]"
                )));
            }
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Largest score; ties break to the lowest index.
    pub fn max_score(&self) -> f64 {
        self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One probability score per class, in manifest order.
pub fn ps_vector(model: &DetectorModel, logits: &LogitVector) -> Result<PsVector> {
    if logits.len() != model.class_count() {
        return Err(Error::DimensionMismatch {
            expected: model.class_count(),
            actual: logits.len(),
        });
    }
    let scores = model
        .score_functions()
        .iter()
        .enumerate()
        .map(|(k, sf)| probability_score(sf, logits[k]))
        .collect();
    Ok(PsVector { scores })
}

/// Traffic-light code of a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerdictCode {
    Green,
    Yellow,
    Red,
}

/// The six rule-table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerdictSubtype {
    ClearResult,
    BorderCaseGreen,
    BorderCaseYellow,
    ConfusingEvidence,
    NotEnoughEvidence,
    OodSample,
}

impl VerdictSubtype {
    pub fn code(&self) -> VerdictCode {
        match self {
            VerdictSubtype::ClearResult | VerdictSubtype::BorderCaseGreen => VerdictCode::Green,
            VerdictSubtype::BorderCaseYellow => VerdictCode::Yellow,
            VerdictSubtype::ConfusingEvidence
            | VerdictSubtype::NotEnoughEvidence
            | VerdictSubtype::OodSample => VerdictCode::Red,
        }
    }
}

impl std::fmt::Display for VerdictCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerdictCode::Green => "green",
            VerdictCode::Yellow => "yellow",
            VerdictCode::Red => "red",
        })
    }
}

impl std::str::FromStr for VerdictCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "green" => Ok(VerdictCode::Green),
            "yellow" => Ok(VerdictCode::Yellow),
            "red" => Ok(VerdictCode::Red),
            other => Err(Error::SchemaViolation(format!("unknown verdict code {other:?}"))),
        }
    }
}

impl std::fmt::Display for VerdictSubtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerdictSubtype::ClearResult => "clear_result",
            VerdictSubtype::BorderCaseGreen => "border_case_green",
            VerdictSubtype::BorderCaseYellow => "border_case_yellow",
            VerdictSubtype::ConfusingEvidence => "confusing_evidence",
            VerdictSubtype::NotEnoughEvidence => "not_enough_evidence",
            VerdictSubtype::OodSample => "ood_sample",
        })
    }
}

impl std::str::FromStr for VerdictSubtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clear_result" => Ok(VerdictSubtype::ClearResult),
            "border_case_green" => Ok(VerdictSubtype::BorderCaseGreen),
            "border_case_yellow" => Ok(VerdictSubtype::BorderCaseYellow),
            "confusing_evidence" => Ok(VerdictSubtype::ConfusingEvidence),
            "not_enough_evidence" => Ok(VerdictSubtype::NotEnoughEvidence),
            "ood_sample" => Ok(VerdictSubtype::OodSample),
            other => Err(Error::SchemaViolation(format!(
                "unknown verdict subtype {other:?}"
            ))),
        }
    }
}

/// Interpreter outcome: code, table row and the predicted class for
/// green/yellow verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub code: VerdictCode,
    pub subtype: VerdictSubtype,
    pub predicted_class: Option<usize>,
}

impl Verdict {
    /// The code is derived from the subtype; a predicted class is present
    /// exactly when the code is not red.
    pub fn new(subtype: VerdictSubtype, predicted_class: Option<usize>) -> Result<Self> {
        let code = subtype.code();
        match (code, predicted_class) {
            (VerdictCode::Red, Some(_)) => Err(Error::SchemaViolation(
                "red verdict must not carry a predicted class".into(),
            )),
            (VerdictCode::Red, None) | (_, Some(_)) => Ok(Self {
                code,
                subtype,
                predicted_class,
            }),
            (_, None) => Err(Error::SchemaViolation(
                "green/yellow verdict requires a predicted class".into(),
            )),
        }
    }
}

/// Apply the rule table at threshold `t`.
///
/// Scores split into high positives (>= t), low positives (in (0, t)), low
/// negatives (in (-t, 0]) and high negatives (<= -t); zero carries no
/// positive evidence. One high positive yields a classification whose shade
/// depends on the remaining scores, several high positives or none at all
/// are red.
pub fn interpret(ps: &PsVector, t: f64) -> Verdict {
    assert!(t > 0.0 && t < 1.0, "interpreter threshold must be in (0,1)");
    let mut high_positive = None;
    let mut high_positives = 0usize;
    let mut low_positives = 0usize;
    let mut low_negatives = 0usize;
    for (i, &s) in ps.scores.iter().enumerate() {
        if s >= t {
            high_positives += 1;
            high_positive.get_or_insert(i);
        } else if s > 0.0 {
            low_positives += 1;
        } else if s > -t {
            low_negatives += 1;
        }
    }
    let (subtype, predicted) = match (high_positives, low_positives) {
        (1, 0) if low_negatives == 0 => (VerdictSubtype::ClearResult, high_positive),
        (1, 0) => (VerdictSubtype::BorderCaseGreen, high_positive),
        (1, _) => (VerdictSubtype::BorderCaseYellow, high_positive),
        (h, _) if h >= 2 => (VerdictSubtype::ConfusingEvidence, None),
        (0, l) if l >= 1 => (VerdictSubtype::NotEnoughEvidence, None),
        _ => (VerdictSubtype::OodSample, None),
    };
    Verdict {
        code: subtype.code(),
        subtype,
        predicted_class: predicted,
    }
}

/// Uniform record of one detector's call on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorDecision {
    pub sample_id: String,
    pub is_ood: bool,
    pub predicted_class: Option<usize>,
    pub raw_score: f64,
    pub verdict: Option<Verdict>,
}

impl DetectorDecision {
    /// An OOD decision carries no predicted class; an in-distribution
    /// decision always does.
    pub fn new(
        sample_id: impl Into<String>,
        is_ood: bool,
        predicted_class: Option<usize>,
        raw_score: f64,
        verdict: Option<Verdict>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if is_ood && predicted_class.is_some() {
            return Err(Error::MalformedDecision {
                id: sample_id,
                reason: "OOD decision carries a predicted class".into(),
            });
        }
        if !is_ood && predicted_class.is_none() {
            return Err(Error::MalformedDecision {
                id: sample_id,
                reason: "in-distribution decision lacks a predicted class".into(),
            });
        }
        Ok(Self {
            sample_id,
            is_ood,
            predicted_class,
            raw_score,
            verdict,
        })
    }
}

/// Interpreter-based detection; red verdicts map to OOD.
///
/// The raw score is the largest per-class probability score.
pub fn psi_detect(
    model: &DetectorModel,
    sample_id: &str,
    logits: &LogitVector,
) -> Result<DetectorDecision> {
    let t = model.psi_threshold().ok_or(Error::UncalibratedModel)?;
    let ps = ps_vector(model, logits)?;
    let verdict = interpret(&ps, t);
    Ok(DetectorDecision {
        sample_id: sample_id.to_string(),
        is_ood: verdict.code == VerdictCode::Red,
        predicted_class: verdict.predicted_class,
        raw_score: ps.max_score(),
        verdict: Some(verdict),
    })
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax requires at least one logit");
    assert!(
        logits.iter().all(|v| v.is_finite()),
        "softmax requires finite logits"
    );
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Log-sum-exp of the logits: the negative energy at temperature 1.
/// Low values indicate OOD.
pub fn energy_score(logits: &[f64]) -> f64 {
    assert!(!logits.is_empty(), "energy score requires at least one logit");
    assert!(
        logits.iter().all(|v| v.is_finite()),
        "energy score requires finite logits"
    );
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Threshold configuration for the two baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineConfig {
    /// Flag OOD when the maximum softmax probability falls below the
    /// threshold.
    MaxSoftmax { threshold: f64 },
    /// Flag OOD when the log-sum-exp of the logits falls below the
    /// threshold.
    Energy { threshold: f64 },
}

impl BaselineConfig {
    pub fn max_softmax(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidBaselineConfig(format!(
                "max-softmax threshold must lie in (0,1), got {threshold}"
            )));
        }
        Ok(BaselineConfig::MaxSoftmax { threshold })
    }

    pub fn energy(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidBaselineConfig(format!(
                "energy threshold must be finite, got {threshold}"
            )));
        }
        Ok(BaselineConfig::Energy { threshold })
    }

    /// Score the sample and threshold it. In-distribution decisions predict
    /// the argmax logit class.
    pub fn detect(&self, sample_id: &str, logits: &LogitVector) -> DetectorDecision {
        let (score, is_ood) = match *self {
            BaselineConfig::MaxSoftmax { threshold } => {
                let p = softmax(logits)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                (p, p < threshold)
            }
            BaselineConfig::Energy { threshold } => {
                let s = energy_score(logits);
                (s, s < threshold)
            }
        };
        DetectorDecision {
            sample_id: sample_id.to_string(),
            is_ood,
            predicted_class: (!is_ood).then(|| logits.argmax()),
            raw_score: score,
            verdict: None,
        }
    }
}

/// Detection by thresholding the maximum softmax probability.
pub fn max_softmax_detect(
    config: &BaselineConfig,
    sample_id: &str,
    logits: &LogitVector,
) -> DetectorDecision {
    assert!(
        matches!(config, BaselineConfig::MaxSoftmax { .. }),
        "max_softmax_detect requires a max-softmax config"
    );
    config.detect(sample_id, logits)
}

/// Detection by thresholding the energy score.
pub fn energy_detect(
    config: &BaselineConfig,
    sample_id: &str,
    logits: &LogitVector,
) -> DetectorDecision {
    assert!(
        matches!(config, BaselineConfig::Energy { .. }),
        "energy_detect requires an energy config"
    );
    config.detect(sample_id, logits)
}
