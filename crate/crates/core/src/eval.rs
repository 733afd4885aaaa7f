//! Metrics, the OOD-augmented confusion matrix and plot-data reports.

use std::collections::HashMap;

use serde::Serialize;

use crate::detect::{ps_vector, DetectorDecision};
use crate::error::{Error, Result};
use crate::model::{Dataset, DetectorModel, Label};

/// Arithmetic mean of classification accuracy and OOD detection rate.
pub fn weighted_accuracy(
    correct_test: u64,
    total_test: u64,
    detected_ood: u64,
    total_ood: u64,
) -> Result<f64> {
    if total_test == 0 {
        return Err(Error::EmptySplit("test"));
    }
    if total_ood == 0 {
        return Err(Error::EmptySplit("OOD"));
    }
    Ok((correct_test as f64 / total_test as f64 + detected_ood as f64 / total_ood as f64) / 2.0)
}

/// Round half away from zero to three decimals, the presentation used for
/// every reported rate.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Three-decimal display string for a rate.
pub fn display_rate(x: f64) -> String {
    format!("{:.3}", round3(x))
}

/// Detection scores tallied against ground truth. The confusion matrix is
/// (C+1) x (C+1) with OOD as the extra final row/column.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub correct_test: u64,
    pub total_test: u64,
    pub detected_ood: u64,
    pub total_ood: u64,
    pub classification_accuracy: f64,
    pub ood_detection_rate: f64,
    pub weighted_accuracy: f64,
}

impl EvalReport {
    /// Internal consistency: matrix totals reproduce the counts and the
    /// weighted accuracy reproduces its defining mean, bit for bit.
    pub fn validate(&self) -> Result<()> {
        let c = self.class_names.len();
        let total: u64 = self.confusion.iter().flatten().sum();
        if total != self.total_test + self.total_ood {
            return Err(Error::SchemaViolation(format!(
                "confusion total {total} != {} + {}",
                self.total_test, self.total_ood
            )));
        }
        let diagonal: u64 = (0..c).map(|k| self.confusion[k][k]).sum();
        if diagonal != self.correct_test {
            return Err(Error::SchemaViolation(format!(
                "diagonal {diagonal} != correct test count {}",
                self.correct_test
            )));
        }
        if self.confusion[c][c] != self.detected_ood {
            return Err(Error::SchemaViolation(format!(
                "OOD/OOD cell {} != detected OOD count {}",
                self.confusion[c][c], self.detected_ood
            )));
        }
        let wa = weighted_accuracy(
            self.correct_test,
            self.total_test,
            self.detected_ood,
            self.total_ood,
        )?;
        if wa != self.weighted_accuracy {
            return Err(Error::SchemaViolation(
                "weighted accuracy does not reconstruct from the counts".into(),
            ));
        }
        Ok(())
    }

    /// Per-true-class row sums (classes first, OOD last).
    pub fn row_totals(&self) -> Vec<u64> {
        self.confusion.iter().map(|row| row.iter().sum()).collect()
    }

    /// Per-predicted-class column sums (classes first, OOD last).
    pub fn column_totals(&self) -> Vec<u64> {
        let n = self.class_names.len() + 1;
        (0..n)
            .map(|j| self.confusion.iter().map(|row| row[j]).sum())
            .collect()
    }
}

/// Tally decisions against ground truth.
///
/// Every decision id must refer to a unique truth sample; truth labels must
/// be class indices or OOD markers. A correctly classified test sample is
/// one the detector kept in-distribution and assigned its true class; ID
/// samples flagged OOD land in the OOD column and count as errors.
pub fn evaluate(decisions: &[DetectorDecision], truth: &Dataset) -> Result<EvalReport> {
    let class_count = truth.class_count();
    let labels: HashMap<&str, Label> = truth
        .samples()
        .iter()
        .map(|s| (s.id.as_str(), s.label))
        .collect();

    let mut confusion = vec![vec![0u64; class_count + 1]; class_count + 1];
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(decisions.len());
    let mut correct_test = 0u64;
    let mut total_test = 0u64;
    let mut detected_ood = 0u64;
    let mut total_ood = 0u64;

    for decision in decisions {
        let id = decision.sample_id.as_str();
        if seen.insert(id, ()).is_some() {
            return Err(Error::DuplicateId { id: id.to_string() });
        }
        let label = labels.get(id).ok_or_else(|| Error::IdMismatch {
            id: id.to_string(),
        })?;
        let row = match label {
            Label::Class(k) => {
                total_test += 1;
                *k
            }
            Label::Ood => {
                total_ood += 1;
                class_count
            }
            Label::Unknown => {
                return Err(Error::TruthLabelUnknown {
                    id: id.to_string(),
                })
            }
        };
        let column = if decision.is_ood {
            class_count
        } else {
            match decision.predicted_class {
                Some(k) if k < class_count => k,
                Some(k) => {
                    return Err(Error::MalformedDecision {
                        id: id.to_string(),
                        reason: format!("predicted class {k} out of range"),
                    })
                }
                None => {
                    return Err(Error::MalformedDecision {
                        id: id.to_string(),
                        reason: "in-distribution decision lacks a predicted class".into(),
                    })
                }
            }
        };
        confusion[row][column] += 1;
        if row < class_count && row == column {
            correct_test += 1;
        }
        if row == class_count && column == class_count {
            detected_ood += 1;
        }
    }

    let wa = weighted_accuracy(correct_test, total_test, detected_ood, total_ood)?;
    Ok(EvalReport {
        class_names: truth.class_names().to_vec(),
        confusion,
        correct_test,
        total_test,
        detected_ood,
        total_ood,
        classification_accuracy: correct_test as f64 / total_test as f64,
        ood_detection_rate: detected_ood as f64 / total_ood as f64,
        weighted_accuracy: wa,
    })
}

/// Shared-edge histogram: `edges` has one more entry than `counts`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn quartiles(sorted: &[f64]) -> (f64, f64) {
    // linear interpolation between order statistics
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    };
    (q(0.25), q(0.75))
}

/// Freedman-Diaconis bin count over the pooled values, floored at 10 bins
/// and capped to keep degenerate IQRs from exploding the report.
fn fd_bin_count(pool: &[f64], min: f64, max: f64) -> usize {
    const MIN_BINS: usize = 10;
    const MAX_BINS: usize = 4096;
    if pool.len() < 2 || max <= min {
        return MIN_BINS;
    }
    let mut sorted = pool.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite logits"));
    let (q1, q3) = quartiles(&sorted);
    let width = 2.0 * (q3 - q1) / (pool.len() as f64).cbrt();
    if width <= 0.0 {
        return MIN_BINS;
    }
    (((max - min) / width).ceil() as usize).clamp(MIN_BINS, MAX_BINS)
}

fn build_histogram(values: &[f64], min: f64, max: f64, bins: usize) -> Histogram {
    let (min, max) = if max > min { (min, max) } else { (min - 0.5, max + 0.5) };
    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| min + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Histogram { edges, counts }
}

/// Histogram series of one split for one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSeries {
    pub split: String,
    pub correct: Histogram,
    pub wrong: Histogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood: Option<Histogram>,
}

/// Sampled probability-score curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsCurve {
    pub x: Vec<f64>,
    pub ps: Vec<f64>,
}

/// Per-class distribution data: histograms per split plus the score curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDistribution {
    pub class_index: usize,
    pub class_name: String,
    pub ps_curve: PsCurve,
    pub splits: Vec<SplitSeries>,
}

/// Plot data for the logit-distribution figures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub class_names: Vec<String>,
    pub classes: Vec<ClassDistribution>,
}

const PS_CURVE_POINTS: usize = 200;

/// Histograms of each class's logit component split by correct / wrong / OOD
/// membership, per named split, plus the fitted score curve sampled on
/// [mu_w - 4 sigma_w, mu_c + 4 sigma_c].
///
/// The three series of one (class, split) pair share Freedman-Diaconis edges
/// computed over the pooled values. Unknown-labeled samples contribute
/// nowhere; an OOD series appears only when the split has OOD samples.
pub fn distribution_report(
    model: &DetectorModel,
    splits: &[(String, &Dataset)],
) -> Result<DistributionReport> {
    for (name, dataset) in splits {
        if dataset.class_names() != model.class_names() {
            return Err(Error::ManifestMismatch(format!(
                "split {name:?} classes do not match the model manifest"
            )));
        }
    }
    let class_count = model.class_count();
    let mut classes = Vec::with_capacity(class_count);
    for (k, sf) in model.score_functions().iter().enumerate() {
        let mut series = Vec::with_capacity(splits.len());
        for (name, dataset) in splits {
            let mut correct = Vec::new();
            let mut wrong = Vec::new();
            let mut ood = Vec::new();
            for sample in dataset.samples() {
                let value = sample.logits[k];
                match sample.label {
                    Label::Class(j) if j == k => correct.push(value),
                    Label::Class(_) => wrong.push(value),
                    Label::Ood => ood.push(value),
                    Label::Unknown => {}
                }
            }
            let pool: Vec<f64> = correct
                .iter()
                .chain(&wrong)
                .chain(&ood)
                .copied()
                .collect();
            let (min, max) = pool.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            let (min, max) = if pool.is_empty() { (0.0, 1.0) } else { (min, max) };
            let bins = fd_bin_count(&pool, min, max);
            series.push(SplitSeries {
                split: name.clone(),
                correct: build_histogram(&correct, min, max, bins),
                wrong: build_histogram(&wrong, min, max, bins),
                ood: (!ood.is_empty()).then(|| build_histogram(&ood, min, max, bins)),
            });
        }
        let lo = sf.wrong.mean - 4.0 * sf.wrong.std;
        let hi = sf.correct.mean + 4.0 * sf.correct.std;
        let x: Vec<f64> = (0..PS_CURVE_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (PS_CURVE_POINTS - 1) as f64)
            .collect();
        let ps: Vec<f64> = x
            .iter()
            .map(|&v| crate::model::probability_score(sf, v))
            .collect();
        classes.push(ClassDistribution {
            class_index: k,
            class_name: model.class_names()[k].clone(),
            ps_curve: PsCurve { x, ps },
            splits: series,
        });
    }
    Ok(DistributionReport {
        class_names: model.class_names().to_vec(),
        classes,
    })
}

/// Convenience wrapper: evaluate a model's interpreter on test + OOD splits.
pub fn evaluate_psi(model: &DetectorModel, test: &Dataset, ood: &Dataset) -> Result<EvalReport> {
    let t = model.psi_threshold().ok_or(Error::UncalibratedModel)?;
    let truth = Dataset::new(
        test.class_names().to_vec(),
        test.samples()
            .iter()
            .chain(ood.samples())
            .cloned()
            .collect(),
    )?;
    let decisions: Vec<DetectorDecision> = truth
        .samples()
        .iter()
        .map(|sample| {
            let ps = ps_vector(model, &sample.logits)?;
            let verdict = crate::detect::interpret(&ps, t);
            Ok(DetectorDecision {
                sample_id: sample.id.clone(),
                is_ood: verdict.code == crate::detect::VerdictCode::Red,
                predicted_class: verdict.predicted_class,
                raw_score: ps.max_score(),
                verdict: Some(verdict),
            })
        })
        .collect::<Result<_>>()?;
    evaluate(&decisions, &truth)
}
