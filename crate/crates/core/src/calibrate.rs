//! Threshold selection from validation misclassifications, without OOD
//! examples.
//!
//! The rule is the same for every detector: scan a threshold grid from the
//! bottom and keep the first value that flags at least the requested
//! fraction of misclassified validation samples as OOD. For the interpreter
//! the flagged fraction need not be monotone in the threshold, so the scan
//! never assumes it is.

use crate::detect::{energy_score, interpret, ps_vector, softmax, VerdictCode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{Dataset, DetectorModel, Label, LabeledSample, LogitVector};

/// Coverage target and candidate thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSpec {
    coverage_target: f64,
    grid: Vec<f64>,
}

impl CalibrationSpec {
    /// `coverage_target` must lie in (0, 1]; the grid must be non-empty,
    /// finite and strictly increasing.
    pub fn new(coverage_target: f64, grid: Vec<f64>) -> Result<Self> {
        if !(coverage_target > 0.0 && coverage_target <= 1.0) {
            return Err(Error::InvalidCalibrationSpec(format!(
                "coverage target must lie in (0,1], got {coverage_target}"
            )));
        }
        if grid.is_empty() {
            return Err(Error::InvalidCalibrationSpec("empty threshold grid".into()));
        }
        for pair in grid.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::InvalidCalibrationSpec(format!(
                    "grid must be strictly increasing ({} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        if grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidCalibrationSpec("non-finite grid value".into()));
        }
        Ok(Self {
            coverage_target,
            grid,
        })
    }

    pub fn coverage_target(&self) -> f64 {
        self.coverage_target
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn require_probability_grid(&self) -> Result<()> {
        match self.grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            Some(t) => Err(Error::InvalidCalibrationSpec(format!(
                "probability threshold {t} outside (0,1)"
            ))),
            None => Ok(()),
        }
    }
}

/// Outcome of a calibration scan.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub chosen_threshold: f64,
    pub achieved_coverage: f64,
    pub misclassified_count: usize,
    pub flagged_count: usize,
}

/// Default interpreter/max-softmax grid: 1 - 10^-x for x in 0.1..=13.0
/// stepped by 0.1. Integer exponents land exactly on 1 - 10^-k.
pub fn default_probability_grid() -> Vec<f64> {
    (1..=130)
        .map(|i| {
            let tenth = i % 10 == 0;
            let p = if tenth {
                10f64.powi(-(i as i32) / 10)
            } else {
                10f64.powf(-(i as f64) / 10.0)
            };
            1.0 - p
        })
        .collect()
}

/// Default energy grid: the sorted distinct scores themselves, making the
/// scan an exact order-statistic search.
pub fn energy_grid_from_scores(scores: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = scores.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    grid.dedup();
    grid
}

/// Samples whose argmax logit disagrees with their label, in input order.
///
/// This is the underlying classifier's error set, independent of any
/// interpreter threshold. Labels must all be class indices.
pub fn misclassified_subset<'a>(
    model: &DetectorModel,
    validation: &'a Dataset,
) -> Result<Vec<&'a LabeledSample>> {
    if validation.class_names() != model.class_names() {
        return Err(Error::ManifestMismatch(format!(
            "validation classes {:?} do not match the model's {:?}",
            validation.class_names(),
            model.class_names()
        )));
    }
    let mut out = Vec::new();
    for sample in validation.samples() {
        let truth = match sample.label {
            Label::Class(k) => k,
            other => {
                return Err(Error::ValidationLabelNotClass {
                    id: sample.id.clone(),
                    label: match other {
                        Label::Ood => crate::model::OOD_LABEL.to_string(),
                        _ => crate::model::UNKNOWN_LABEL.to_string(),
                    },
                })
            }
        };
        if sample.logits.argmax() != truth {
            out.push(sample);
        }
    }
    Ok(out)
}

fn scan_grid(
    spec: &CalibrationSpec,
    total: usize,
    mut flagged_at: impl FnMut(f64) -> usize,
) -> Result<CalibrationResult> {
    let mut best: Option<(f64, usize)> = None;
    for &t in spec.grid() {
        let flagged = flagged_at(t);
        let coverage = flagged as f64 / total as f64;
        if coverage >= spec.coverage_target() {
            return Ok(CalibrationResult {
                chosen_threshold: t,
                achieved_coverage: coverage,
                misclassified_count: total,
                flagged_count: flagged,
            });
        }
        if best.map_or(true, |(_, f)| flagged > f) {
            best = Some((t, flagged));
        }
    }
    let (best_threshold, best_flagged) = best.expect("non-empty grid");
    Err(Error::NoThresholdAchievesCoverage {
        target: spec.coverage_target(),
        best_threshold,
        best_coverage: best_flagged as f64 / total as f64,
    })
}

/// Pick the smallest grid threshold whose red-verdict coverage of the
/// misclassified validation samples reaches the target, and return a model
/// copy carrying it.
pub fn calibrate_psi(
    model: &DetectorModel,
    validation: &Dataset,
    spec: &CalibrationSpec,
) -> Result<(DetectorModel, CalibrationResult)> {
    spec.require_probability_grid()?;
    let misclassified = misclassified_subset(model, validation)?;
    if misclassified.is_empty() {
        return Err(Error::EmptyMisclassifiedSet);
    }
    let ps: Vec<_> = misclassified
        .iter()
        .map(|s| ps_vector(model, &s.logits))
        .collect::<Result<_>>()?;
    let result = scan_grid(spec, ps.len(), |t| {
        ps.iter()
            .filter(|v| interpret(v, t).code == VerdictCode::Red)
            .count()
    })?;
    let calibrated = model.with_psi_threshold(result.chosen_threshold)?;
    Ok((calibrated, result))
}

/// Baseline flavor being calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    MaxSoftmax,
    Energy,
}

/// Per-sample confidence score the baseline thresholds.
pub fn baseline_score(kind: BaselineKind, logits: &LogitVector) -> f64 {
    match kind {
        BaselineKind::MaxSoftmax => softmax(logits)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max),
        BaselineKind::Energy => energy_score(logits),
    }
}

/// Pick the smallest grid threshold flagging (score < threshold) at least
/// the target fraction of the misclassified samples.
pub fn calibrate_baseline(
    kind: BaselineKind,
    misclassified_logits: &[&LogitVector],
    spec: &CalibrationSpec,
) -> Result<CalibrationResult> {
    if kind == BaselineKind::MaxSoftmax {
        spec.require_probability_grid()?;
    }
    if misclassified_logits.is_empty() {
        return Err(Error::EmptyMisclassifiedSet);
    }
    let scores: Vec<f64> = misclassified_logits
        .iter()
        .map(|l| baseline_score(kind, l))
        .collect();
    scan_grid(spec, scores.len(), |t| {
        scores.iter().filter(|s| **s < t).count()
    })
}

/// Order-statistic formulation of the baseline scan: the smallest grid value
/// strictly above the k-th smallest score, where k is the least count whose
/// fraction reaches the target. Must agree with [`calibrate_baseline`] on
/// every input.
pub fn quantile_threshold(scores: &[f64], spec: &CalibrationSpec) -> Option<f64> {
    let m = scores.len();
    if m == 0 {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let k = (1..=m).find(|k| *k as f64 / m as f64 >= spec.coverage_target())?;
    let kth = sorted[k - 1];
    spec.grid().iter().copied().find(|t| *t > kth)
}

/// One sweep row: interpreter metrics at a single threshold.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub classification_accuracy: f64,
    pub ood_detection_rate: f64,
    pub weighted_accuracy: f64,
}

/// Evaluate the interpreter on test + OOD splits at every grid threshold.
pub fn threshold_sweep(
    model: &DetectorModel,
    test: &Dataset,
    ood: &Dataset,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    let spec = CalibrationSpec::new(1.0, grid.to_vec())?;
    spec.require_probability_grid()?;
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    if ood.is_empty() {
        return Err(Error::EmptySplit("OOD"));
    }
    let truth = Dataset::new(
        test.class_names().to_vec(),
        test.samples()
            .iter()
            .chain(ood.samples())
            .cloned()
            .collect(),
    )?;
    let ps: Vec<_> = truth
        .samples()
        .iter()
        .map(|s| ps_vector(model, &s.logits))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(grid.len());
    for &t in spec.grid() {
        let decisions: Vec<_> = truth
            .samples()
            .iter()
            .zip(&ps)
            .map(|(sample, v)| {
                let verdict = interpret(v, t);
                crate::detect::DetectorDecision {
                    sample_id: sample.id.clone(),
                    is_ood: verdict.code == VerdictCode::Red,
                    predicted_class: verdict.predicted_class,
                    raw_score: v.max_score(),
                    verdict: Some(verdict),
                }
            })
            .collect();
        let report: EvalReport = evaluate(&decisions, &truth)?;
        rows.push(SweepRow {
            threshold: t,
            classification_accuracy: report.classification_accuracy,
            ood_detection_rate: report.ood_detection_rate,
            weighted_accuracy: report.weighted_accuracy,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit_model, GaussianStats, ClassScoreFunction};

    fn logit(values: &[f64]) -> LogitVector {
        LogitVector::new(values.to_vec()).unwrap()
    }

    fn two_class_model() -> DetectorModel {
        let sf = |k: usize| {
            ClassScoreFunction::new(
                k,
                GaussianStats::new(10.0, 2.0, 2).unwrap(),
                GaussianStats::new(0.0, 2.0, 2).unwrap(),
            )
            .unwrap()
        };
        DetectorModel::new(
            vec!["a".into(), "b".into()],
            vec![sf(0), sf(1)],
            Default::default(),
        )
        .unwrap()
    }

    fn validation_set(samples: Vec<LabeledSample>) -> Dataset {
        Dataset::new(vec!["a".into(), "b".into()], samples).unwrap()
    }

    #[test]
    fn misclassified_subset_is_empty_for_perfect_classifier() {
        let model = two_class_model();
        let v = validation_set(vec![
            LabeledSample::new("1", Label::Class(0), logit(&[9.0, 1.0])),
            LabeledSample::new("2", Label::Class(1), logit(&[0.0, 11.0])),
        ]);
        assert!(misclassified_subset(&model, &v).unwrap().is_empty());
    }

    #[test]
    fn misclassified_subset_matches_argmax_oracle_and_order() {
        let model = two_class_model();
        let mut samples = Vec::new();
        for i in 0..10 {
            // samples 2, 4, 6, 8 are wrong
            let wrong = i % 2 == 0 && i > 0;
            let (a, b) = if wrong { (1.0, 5.0) } else { (5.0, 1.0) };
            samples.push(LabeledSample::new(
                format!("s{i}"),
                Label::Class(0),
                logit(&[a, b]),
            ));
        }
        let v = validation_set(samples);
        let got = misclassified_subset(&model, &v).unwrap();
        let ids: Vec<&str> = got.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["s2", "s4", "s6", "s8"]);
    }

    #[test]
    fn misclassified_subset_rejects_ood_labels() {
        let model = two_class_model();
        let v = validation_set(vec![LabeledSample::new(
            "x",
            Label::Ood,
            logit(&[1.0, 2.0]),
        )]);
        assert!(matches!(
            misclassified_subset(&model, &v),
            Err(Error::ValidationLabelNotClass { .. })
        ));
    }

    #[test]
    fn default_probability_grid_shape() {
        let grid = default_probability_grid();
        assert_eq!(grid.len(), 130);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        // integer exponents land exactly
        assert_eq!(grid[9], 1.0 - 0.1);
        assert_eq!(grid[29], 1.0 - 0.001);
        assert_eq!(grid[129], 1.0 - 1e-13);
        assert!(grid.iter().all(|t| *t > 0.0 && *t < 1.0));
    }

    /// Craft 4 misclassified PS-vector shapes through logits: at t = 0.9
    /// three of four turn red, while every smaller grid value flags at most
    /// two.
    #[test]
    fn calibrate_psi_picks_minimal_covering_threshold() {
        let model = two_class_model();
        // ps = tanh((llr)/2) with llr = 2.5 (x - 5) for sigma 2, means 0/10;
        // choose component values by the score they should produce.
        let x_for = |ps: f64| 5.0 + 2.0 * f64::atanh(ps) / 2.5;
        // misclassified samples (label a, argmax b) with max PS:
        //   0.95, 0.85, 0.5, 0.3  -> red iff t > max ps (all-but-one negative)
        let mk = |id: &str, ps_b: f64| {
            LabeledSample::new(id, Label::Class(0), logit(&[-1.0, x_for(ps_b)]))
        };
        let v = validation_set(vec![
            mk("m1", 0.95),
            mk("m2", 0.85),
            mk("m3", 0.5),
            mk("m4", 0.3),
        ]);
        let grid = vec![0.1, 0.2, 0.4, 0.6, 0.9, 0.99];
        let spec = CalibrationSpec::new(0.75, grid.clone()).unwrap();
        let (calibrated, result) = calibrate_psi(&model, &v, &spec).unwrap();
        assert_eq!(result.chosen_threshold, 0.9);
        assert_eq!(result.flagged_count, 3);
        assert_eq!(result.misclassified_count, 4);
        assert!((result.achieved_coverage - 0.75).abs() < 1e-12);
        assert_eq!(calibrated.psi_threshold(), Some(0.9));
        // minimality: every smaller grid value flags fewer than 3
        for &t in grid.iter().filter(|t| **t < 0.9) {
            let flagged = v
                .samples()
                .iter()
                .filter(|s| {
                    interpret(&ps_vector(&model, &s.logits).unwrap(), t).code == VerdictCode::Red
                })
                .count();
            assert!(flagged < 3, "t={t} flagged {flagged}");
        }
    }

    #[test]
    fn calibrate_psi_all_negative_sample_is_red_at_any_threshold() {
        let model = two_class_model();
        let v = validation_set(vec![LabeledSample::new(
            "m",
            Label::Class(0),
            logit(&[-1.0, -0.5]), // argmax is component 1: misclassified, all PS = -1
        )]);
        let spec = CalibrationSpec::new(1.0, default_probability_grid()).unwrap();
        let (_, result) = calibrate_psi(&model, &v, &spec).unwrap();
        assert_eq!(result.chosen_threshold, default_probability_grid()[0]);
        assert_eq!(result.achieved_coverage, 1.0);
    }

    #[test]
    fn calibrate_psi_reports_best_achievable_on_failure() {
        let model = two_class_model();
        // green at any threshold: component 0 clamps to +1, component 1 to -1,
        // and the sample is misclassified (argmax 0, label b)
        let v = validation_set(vec![LabeledSample::new(
            "m",
            Label::Class(1),
            logit(&[11.0, -1.0]),
        )]);
        let spec = CalibrationSpec::new(0.75, vec![0.5, 0.9]).unwrap();
        match calibrate_psi(&model, &v, &spec) {
            Err(Error::NoThresholdAchievesCoverage { best_coverage, .. }) => {
                assert_eq!(best_coverage, 0.0)
            }
            other => panic!("expected coverage failure, got {other:?}"),
        }
    }

    #[test]
    fn calibrate_psi_requires_misclassifications() {
        let model = two_class_model();
        let v = validation_set(vec![LabeledSample::new(
            "ok",
            Label::Class(0),
            logit(&[9.0, 0.0]),
        )]);
        let spec = CalibrationSpec::new(0.75, vec![0.5]).unwrap();
        assert!(matches!(
            calibrate_psi(&model, &v, &spec),
            Err(Error::EmptyMisclassifiedSet)
        ));
    }

    #[test]
    fn calibrate_baseline_max_softmax_order_statistic_example() {
        // scores {0.99, 0.999, 0.9999, 0.99999}, q = 0.75, grid 1 - 10^-x:
        // 1 - 1e-4 flags two, the next grid value flags three
        let raw = [0.99f64, 0.999, 0.9999, 0.99999];
        let logit_vecs: Vec<LogitVector> = raw
            .iter()
            .map(|p| {
                let x = (1.0 / p - 1.0).recip().ln();
                logit(&[x, 0.0])
            })
            .collect();
        let refs: Vec<&LogitVector> = logit_vecs.iter().collect();
        let grid: Vec<f64> = (1..=8).map(|x| 1.0 - 10f64.powi(-x)).collect();
        let spec = CalibrationSpec::new(0.75, grid).unwrap();
        let result = calibrate_baseline(BaselineKind::MaxSoftmax, &refs, &spec).unwrap();
        assert_eq!(result.chosen_threshold, 1.0 - 1e-5);
        assert_eq!(result.flagged_count, 3);

        let scores: Vec<f64> = refs
            .iter()
            .map(|l| baseline_score(BaselineKind::MaxSoftmax, l))
            .collect();
        assert_eq!(
            quantile_threshold(&scores, &spec),
            Some(result.chosen_threshold)
        );
    }

    #[test]
    fn calibrate_baseline_energy_unit_grid_example() {
        // energy scores 10, 20, 30, 40; q = 0.5; unit grid: 21 is the first
        // value flagging two of four
        let logit_vecs: Vec<LogitVector> = [10.0f64, 20.0, 30.0, 40.0]
            .iter()
            .map(|s| logit(&[*s, -1000.0]))
            .collect();
        let refs: Vec<&LogitVector> = logit_vecs.iter().collect();
        let grid: Vec<f64> = (0..=50).map(|i| i as f64).collect();
        let spec = CalibrationSpec::new(0.5, grid).unwrap();
        let result = calibrate_baseline(BaselineKind::Energy, &refs, &spec).unwrap();
        assert_eq!(result.chosen_threshold, 21.0);
        assert_eq!(result.flagged_count, 2);
    }

    #[test]
    fn coverage_target_zero_is_rejected() {
        assert!(CalibrationSpec::new(0.0, vec![0.5]).is_err());
        assert!(CalibrationSpec::new(-0.1, vec![0.5]).is_err());
        assert!(CalibrationSpec::new(1.1, vec![0.5]).is_err());
        assert!(CalibrationSpec::new(1.0, vec![0.5]).is_ok());
    }

    #[test]
    fn grid_must_be_strictly_increasing() {
        assert!(CalibrationSpec::new(0.5, vec![0.2, 0.2]).is_err());
        assert!(CalibrationSpec::new(0.5, vec![0.3, 0.2]).is_err());
        assert!(CalibrationSpec::new(0.5, vec![]).is_err());
    }

    fn synth_problem(seed: u64) -> (DetectorModel, Dataset, Dataset) {
        use crate::synth::{generate, ClassProfile, GaussianParams, SplitCounts, SynthSpec};
        let spec = SynthSpec {
            classes: (0..3)
                .map(|_| ClassProfile {
                    name: None,
                    own: GaussianParams { mean: 25.0, std: 5.0 },
                    cross: GaussianParams { mean: 0.0, std: 5.0 },
                })
                .collect(),
            ood_profile: GaussianParams { mean: 0.0, std: 5.0 },
            counts: SplitCounts { train: 300, validation: 0, test: 200, ood: 300 },
            seed,
        };
        let d = generate(&spec).unwrap();
        let model = fit_model(&d.train, None).unwrap();
        (model, d.test, d.ood)
    }

    #[test]
    fn sweep_has_one_row_per_grid_value() {
        let (model, test, ood) = synth_problem(17);
        let grid = [0.5];
        let rows = threshold_sweep(&model, &test, &ood, &grid).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].threshold, 0.5);
        assert!((rows[0].weighted_accuracy
            - (rows[0].classification_accuracy + rows[0].ood_detection_rate) / 2.0)
            .abs()
            < 1e-15);
    }

    #[test]
    fn sweep_interior_beats_extremes_on_separated_data() {
        let (model, test, ood) = synth_problem(23);
        let grid = default_probability_grid();
        let rows = threshold_sweep(&model, &test, &ood, &grid).unwrap();
        assert_eq!(rows.len(), grid.len());
        let max = rows
            .iter()
            .map(|r| r.weighted_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(rows.first().unwrap().weighted_accuracy < max);
        assert!(rows.last().unwrap().weighted_accuracy < max);
    }

    #[test]
    fn sweep_ood_rate_non_decreasing_above_optimum() {
        let (model, test, ood) = synth_problem(29);
        let grid = default_probability_grid();
        let rows = threshold_sweep(&model, &test, &ood, &grid).unwrap();
        let optimum = rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.weighted_accuracy.partial_cmp(&b.1.weighted_accuracy).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        for pair in rows[optimum..].windows(2) {
            assert!(
                pair[1].ood_detection_rate >= pair[0].ood_detection_rate - 1e-12,
                "ood rate dropped from {} to {} past the optimum",
                pair[0].ood_detection_rate,
                pair[1].ood_detection_rate
            );
        }
    }

    #[test]
    fn sweep_rejects_empty_splits() {
        let (model, test, ood) = synth_problem(31);
        let empty = Dataset::new(test.class_names().to_vec(), vec![]).unwrap();
        assert!(matches!(
            threshold_sweep(&model, &empty, &ood, &[0.5]),
            Err(Error::EmptySplit("test"))
        ));
        assert!(matches!(
            threshold_sweep(&model, &test, &empty, &[0.5]),
            Err(Error::EmptySplit("OOD"))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn spec_and_scores() -> impl Strategy<Value = (Vec<f64>, f64, Vec<f64>)> {
            (
                proptest::collection::vec(-100.0..100.0f64, 1..60),
                0.05..1.0f64,
                proptest::collection::btree_set(-120i64..120, 1..40),
            )
                .prop_map(|(scores, q, grid)| {
                    let grid: Vec<f64> = grid.into_iter().map(|g| g as f64).collect();
                    (scores, q, grid)
                })
        }

        proptest! {
            #[test]
            fn grid_scan_equals_quantile_formulation((scores, q, grid) in spec_and_scores()) {
                let spec = CalibrationSpec::new(q, grid).unwrap();
                let logit_vecs: Vec<LogitVector> = scores
                    .iter()
                    .map(|s| LogitVector::new(vec![*s, -1000.0]).unwrap())
                    .collect();
                let refs: Vec<&LogitVector> = logit_vecs.iter().collect();
                let scan = calibrate_baseline(BaselineKind::Energy, &refs, &spec);
                let energies: Vec<f64> = refs
                    .iter()
                    .map(|l| baseline_score(BaselineKind::Energy, l))
                    .collect();
                let quantile = quantile_threshold(&energies, &spec);
                match (scan, quantile) {
                    (Ok(result), Some(t)) => prop_assert_eq!(result.chosen_threshold, t),
                    (Err(Error::NoThresholdAchievesCoverage { .. }), None) => {}
                    (scan, quantile) => {
                        return Err(TestCaseError::fail(format!(
                            "scan {scan:?} vs quantile {quantile:?}"
                        )))
                    }
                }
            }

            #[test]
            fn chosen_threshold_is_minimal((scores, q, grid) in spec_and_scores()) {
                let spec = CalibrationSpec::new(q, grid).unwrap();
                let logit_vecs: Vec<LogitVector> = scores
                    .iter()
                    .map(|s| LogitVector::new(vec![*s, -1000.0]).unwrap())
                    .collect();
                let refs: Vec<&LogitVector> = logit_vecs.iter().collect();
                if let Ok(result) = calibrate_baseline(BaselineKind::Energy, &refs, &spec) {
                    prop_assert!(result.achieved_coverage >= q);
                    let energies: Vec<f64> = refs
                        .iter()
                        .map(|l| baseline_score(BaselineKind::Energy, l))
                        .collect();
                    for &t in spec.grid().iter().filter(|t| **t < result.chosen_threshold) {
                        let flagged = energies.iter().filter(|s| **s < t).count();
                        prop_assert!((flagged as f64 / energies.len() as f64) < q);
                    }
                }
            }

            #[test]
            fn baseline_flagged_fraction_is_monotone(
                scores in proptest::collection::vec(-50.0..50.0f64, 1..50),
            ) {
                let mut prev = 0usize;
                for i in -60..=60 {
                    let t = i as f64;
                    let flagged = scores.iter().filter(|s| **s < t).count();
                    prop_assert!(flagged >= prev);
                    prev = flagged;
                }
            }
        }
    }
}
