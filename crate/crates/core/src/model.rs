//! Domain types, per-class gaussian fitting and the bounded probability score.
//!
//! Each output neuron of the wrapped classifier gets a pair of gaussians: one
//! fitted on the logit values of its own class ("correct") and one on the
//! values it produces for every other class ("wrong"). The probability score
//! maps a raw logit onto [-1, 1] through the two-class posterior with equal
//! priors, clamped by input value below the wrong mean and above the correct
//! mean.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

/// Smallest standard deviation a fitted gaussian may carry. Constant logit
/// columns would otherwise produce a degenerate density.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Reserved label token marking an out-of-distribution sample.
pub const OOD_LABEL: &str = "__OOD__";

/// Reserved label token for samples without ground truth.
pub const UNKNOWN_LABEL: &str = "?";

const LN_2PI: f64 = 1.8378770664093453;

/// Ground-truth label of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// In-distribution sample of the given class index.
    Class(usize),
    /// Out-of-distribution sample.
    Ood,
    /// No ground truth available (inference input).
    Unknown,
}

impl Label {
    pub fn class_index(&self) -> Option<usize> {
        match self {
            Label::Class(k) => Some(*k),
            _ => None,
        }
    }

    pub fn is_ood(&self) -> bool {
        matches!(self, Label::Ood)
    }
}

/// Raw last-layer outputs for one sample, one value per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    /// Requires at least two components (one per class) and finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewClasses(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("logit vector"));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Index of the largest component; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

impl std::ops::Deref for LogitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// A sample with an opaque id, a label and its logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub label: Label,
    pub logits: LogitVector,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, label: Label, logits: LogitVector) -> Self {
        Self {
            id: id.into(),
            label,
            logits,
        }
    }
}

/// A class manifest plus samples whose logit width matches it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    class_names: Vec<String>,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, samples: Vec<LabeledSample>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if name.is_empty() {
                return Err(Error::InvalidDataset("empty class name".into()));
            }
            if name == OOD_LABEL || name == UNKNOWN_LABEL {
                return Err(Error::InvalidDataset(format!(
                    "class name {name:?} collides with a reserved label token"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate class name {name:?}")));
            }
        }
        let class_count = class_names.len();
        let mut ids = HashSet::new();
        for sample in &samples {
            if sample.logits.len() != class_count {
                return Err(Error::DimensionMismatch {
                    expected: class_count,
                    actual: sample.logits.len(),
                });
            }
            if let Label::Class(k) = sample.label {
                if k >= class_count {
                    return Err(Error::InvalidDataset(format!(
                        "sample {:?} labeled with class index {k}, but there are only {class_count} classes",
                        sample.id
                    )));
                }
            }
            if !ids.insert(sample.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: sample.id.clone(),
                });
            }
        }
        Ok(Self {
            class_names,
            samples,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Mean and standard deviation of one logit population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl GaussianStats {
    /// Validating constructor for stats coming from outside `fit_gaussian`
    /// (e.g. a model file).
    pub fn new(mean: f64, std: f64, count: usize) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::NonFiniteInput("gaussian stats"));
        }
        if std < SIGMA_FLOOR {
            return Err(Error::SchemaViolation(format!(
                "sigma {std} below the floor {SIGMA_FLOOR}"
            )));
        }
        if count < 2 {
            return Err(Error::TooFewSamples(count));
        }
        Ok(Self { mean, std, count })
    }

    fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -self.std.ln() - 0.5 * LN_2PI - 0.5 * z * z
    }
}

/// Fit mean and population standard deviation, flooring sigma at
/// [`SIGMA_FLOOR`].
pub fn fit_gaussian(samples: &[f64]) -> Result<GaussianStats> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("gaussian fit samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = variance.sqrt().max(SIGMA_FLOOR);
    Ok(GaussianStats {
        mean,
        std,
        count: samples.len(),
    })
}

/// The per-class score function: correct vs wrong logit distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScoreFunction {
    pub class_index: usize,
    pub correct: GaussianStats,
    pub wrong: GaussianStats,
}

impl ClassScoreFunction {
    /// Fails unless the correct-class mean strictly exceeds the wrong-class
    /// mean; the construction presumes stronger evidence means higher output.
    pub fn new(class_index: usize, correct: GaussianStats, wrong: GaussianStats) -> Result<Self> {
        if correct.mean <= wrong.mean {
            return Err(Error::NonDiscriminativeClass {
                class: class_index.to_string(),
                correct_mean: correct.mean,
                wrong_mean: wrong.mean,
            });
        }
        Ok(Self {
            class_index,
            correct,
            wrong,
        })
    }
}

/// Bounded probability score for one class.
///
/// Clamps by input value: below the wrong-class mean the score is -1, above
/// the correct-class mean it is +1. In between it equals the equal-prior
/// two-class posterior difference, computed in log space as tanh(llr / 2).
pub fn probability_score(sf: &ClassScoreFunction, x: f64) -> f64 {
    assert!(x.is_finite(), "probability_score requires a finite input");
    if x < sf.wrong.mean {
        return -1.0;
    }
    if x > sf.correct.mean {
        return 1.0;
    }
    let llr = sf.correct.log_density(x) - sf.wrong.log_density(x);
    (llr / 2.0).tanh()
}

/// A fitted detector: class manifest, one score function per class and an
/// optional calibrated interpreter threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    class_names: Vec<String>,
    score_functions: Vec<ClassScoreFunction>,
    psi_threshold: Option<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl DetectorModel {
    pub fn new(
        class_names: Vec<String>,
        score_functions: Vec<ClassScoreFunction>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if score_functions.len() != class_names.len() {
            return Err(Error::ManifestMismatch(format!(
                "{} classes but {} score functions",
                class_names.len(),
                score_functions.len()
            )));
        }
        for (i, sf) in score_functions.iter().enumerate() {
            if sf.class_index != i {
                return Err(Error::ManifestMismatch(format!(
                    "score function at position {i} carries class index {}",
                    sf.class_index
                )));
            }
        }
        Ok(Self {
            class_names,
            score_functions,
            psi_threshold: None,
            metadata,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn score_functions(&self) -> &[ClassScoreFunction] {
        &self.score_functions
    }

    pub fn psi_threshold(&self) -> Option<f64> {
        self.psi_threshold
    }

    /// Copy of the model carrying the given interpreter threshold.
    pub fn with_psi_threshold(&self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidThreshold(threshold));
        }
        let mut model = self.clone();
        model.psi_threshold = Some(threshold);
        Ok(model)
    }
}

/// Fit one score function per class from a labeled train split.
///
/// The wrong-class population of class k is the k-th logit component of every
/// sample labeled with some other class. When `negative_source` is given (a
/// debris-style refit), its samples replace the wrong-class population for
/// every class; only its logit width has to match. Samples labeled OOD or
/// unknown contribute to neither population.
pub fn fit_model(train: &Dataset, negative_source: Option<&Dataset>) -> Result<DetectorModel> {
    let class_count = train.class_count();
    if let Some(neg) = negative_source {
        if neg.class_count() != class_count {
            return Err(Error::DimensionMismatch {
                expected: class_count,
                actual: neg.class_count(),
            });
        }
    }

    // name the deficient class before any wrong-class pool can run dry
    for k in 0..class_count {
        let count = train
            .samples()
            .iter()
            .filter(|s| s.label == Label::Class(k))
            .count();
        if count < 2 {
            return Err(Error::ClassTooFewSamples {
                class: train.class_names()[k].clone(),
                role: "labeled",
                count,
            });
        }
    }

    let mut score_functions = Vec::with_capacity(class_count);
    for k in 0..class_count {
        let name = &train.class_names()[k];
        let correct_values: Vec<f64> = train
            .samples()
            .iter()
            .filter(|s| s.label == Label::Class(k))
            .map(|s| s.logits[k])
            .collect();
        let wrong_values: Vec<f64> = match negative_source {
            Some(neg) => neg.samples().iter().map(|s| s.logits[k]).collect(),
            None => train
                .samples()
                .iter()
                .filter(|s| matches!(s.label, Label::Class(j) if j != k))
                .map(|s| s.logits[k])
                .collect(),
        };
        if wrong_values.len() < 2 {
            return Err(Error::ClassTooFewSamples {
                class: name.clone(),
                role: "wrong-class",
                count: wrong_values.len(),
            });
        }
        let correct = fit_gaussian(&correct_values)?;
        let wrong = fit_gaussian(&wrong_values)?;
        if correct.mean <= wrong.mean {
            return Err(Error::NonDiscriminativeClass {
                class: name.clone(),
                correct_mean: correct.mean,
                wrong_mean: wrong.mean,
            });
        }
        score_functions.push(ClassScoreFunction::new(k, correct, wrong)?);
    }

    DetectorModel::new(
        train.class_names().to_vec(),
        score_functions,
        BTreeMap::new(),
    )
}
