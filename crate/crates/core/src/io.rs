//! File formats: CSV for logits and decisions, JSON documents for models,
//! calibration results and reports.
//!
//! Floats in JSON documents are written with 17 significant digits, enough
//! to reconstruct the exact 64-bit value on read; CSV floats use the
//! shortest round-trip form. Reads reject anything that violates a domain
//! invariant and point at the offending line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::calibrate::{CalibrationResult, SweepRow};
use crate::detect::{DetectorDecision, Verdict, VerdictSubtype};
use crate::error::{Error, Result};
use crate::eval::{display_rate, DistributionReport, EvalReport};
use crate::model::{
    ClassScoreFunction, Dataset, DetectorModel, GaussianStats, Label, LabeledSample, LogitVector,
    OOD_LABEL, UNKNOWN_LABEL,
};
use crate::synth::SynthSpec;

/// Format version written to and accepted from JSON documents.
pub const FORMAT_VERSION: u32 = 1;

const LOGIT_PREFIX: &str = "logit_";

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map_or(0, |p| p.line())
}

fn from_csv_error(err: csv::Error) -> Error {
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("is_io_error guarded"),
        }
    } else {
        Error::MalformedRow {
            line: csv_line(&err),
            reason: err.to_string(),
        }
    }
}

/// Read a logits CSV: header `id,label,logit_<class>...`, one sample per
/// row. The header's class order defines class indices everywhere
/// downstream.
pub fn read_logits(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(file));

    let headers = reader.headers().map_err(from_csv_error)?.clone();
    let fields: Vec<&str> = headers.iter().collect();
    if fields.len() < 4 {
        return Err(Error::HeaderMismatch(format!(
            "expected `id,label` plus at least 2 logit columns, got {} columns",
            fields.len()
        )));
    }
    if fields[0] != "id" || fields[1] != "label" {
        return Err(Error::HeaderMismatch(format!(
            "header must start with `id,label`, got `{},{}`",
            fields[0], fields[1]
        )));
    }
    let mut class_names = Vec::with_capacity(fields.len() - 2);
    for field in &fields[2..] {
        let name = field.strip_prefix(LOGIT_PREFIX).ok_or_else(|| {
            Error::HeaderMismatch(format!("column {field:?} lacks the `{LOGIT_PREFIX}` prefix"))
        })?;
        if name.is_empty() || name == OOD_LABEL || name == UNKNOWN_LABEL {
            return Err(Error::HeaderMismatch(format!("invalid class name {name:?}")));
        }
        if class_names.iter().any(|n: &String| n == name) {
            return Err(Error::HeaderMismatch(format!("duplicate class name {name:?}")));
        }
        class_names.push(name.to_string());
    }

    let mut samples = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for record in reader.records() {
        let record = record.map_err(from_csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(0).unwrap_or_default().to_string();
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateIdAt { line, id });
        }
        let label_field = record.get(1).unwrap_or_default();
        let label = match label_field {
            OOD_LABEL => Label::Ood,
            UNKNOWN_LABEL => Label::Unknown,
            name => match class_names.iter().position(|n| n == name) {
                Some(k) => Label::Class(k),
                None => {
                    return Err(Error::UnknownLabel {
                        line,
                        label: name.to_string(),
                    })
                }
            },
        };
        let mut values = Vec::with_capacity(class_names.len());
        for (k, raw) in record.iter().skip(2).enumerate() {
            let value: f64 = raw.parse().map_err(|_| Error::NonNumericLogit {
                line,
                column: format!("{LOGIT_PREFIX}{}", class_names[k]),
                value: raw.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonNumericLogit {
                    line,
                    column: format!("{LOGIT_PREFIX}{}", class_names[k]),
                    value: raw.to_string(),
                });
            }
            values.push(value);
        }
        samples.push(LabeledSample::new(id, label, LogitVector::new(values)?));
    }
    Dataset::new(class_names, samples)
}

/// Write a logits CSV in the format `read_logits` accepts. Floats use the
/// shortest round-trip decimal form, so write-read-write is byte stable.
pub fn write_logits(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(
        dataset
            .class_names()
            .iter()
            .map(|n| format!("{LOGIT_PREFIX}{n}")),
    );
    writer.write_record(&header).map_err(from_csv_error)?;
    for sample in dataset.samples() {
        let mut record = Vec::with_capacity(2 + dataset.class_count());
        record.push(sample.id.clone());
        record.push(match sample.label {
            Label::Class(k) => dataset.class_names()[k].clone(),
            Label::Ood => OOD_LABEL.to_string(),
            Label::Unknown => UNKNOWN_LABEL.to_string(),
        });
        record.extend(sample.logits.iter().map(|v| v.to_string()));
        writer.write_record(&record).map_err(from_csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Pretty JSON formatter that prints every f64 with 17 significant digits.
struct Float17Formatter<'a> {
    pretty: PrettyFormatter<'a>,
}

impl Float17Formatter<'_> {
    fn new() -> Self {
        Self {
            pretty: PrettyFormatter::new(),
        }
    }
}

impl Formatter for Float17Formatter<'_> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.pretty.end_object_value(writer)
    }
}

fn write_json_doc<T: Serialize>(path: impl AsRef<Path>, doc: &T) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    let mut serializer = serde_json::Serializer::with_formatter(&mut writer, Float17Formatter::new());
    doc.serialize(&mut serializer)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassDocument {
    mu_correct: f64,
    sigma_correct: f64,
    count_correct: u64,
    mu_wrong: f64,
    sigma_wrong: f64,
    count_wrong: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format_version: u32,
    class_names: Vec<String>,
    classes: Vec<ClassDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psi_threshold: Option<f64>,
    metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn write_model(path: impl AsRef<Path>, model: &DetectorModel) -> Result<()> {
    let doc = ModelDocument {
        format_version: FORMAT_VERSION,
        class_names: model.class_names().to_vec(),
        classes: model
            .score_functions()
            .iter()
            .map(|sf| ClassDocument {
                mu_correct: sf.correct.mean,
                sigma_correct: sf.correct.std,
                count_correct: sf.correct.count as u64,
                mu_wrong: sf.wrong.mean,
                sigma_wrong: sf.wrong.std,
                count_wrong: sf.wrong.count as u64,
            })
            .collect(),
        psi_threshold: model.psi_threshold(),
        metadata: model.metadata.clone(),
    };
    write_json_doc(path, &doc)
}

fn schema_err(context: &str, err: Error) -> Error {
    match err {
        Error::SchemaViolation(msg) => Error::SchemaViolation(format!("{context}: {msg}")),
        other => Error::SchemaViolation(format!("{context}: {other}")),
    }
}

pub fn read_model(path: impl AsRef<Path>) -> Result<DetectorModel> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let probe: VersionProbe = serde_json::from_str(&text)
        .map_err(|e| Error::SchemaViolation(format!("not a model document: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: probe.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let doc: ModelDocument =
        serde_json::from_str(&text).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    if doc.classes.len() != doc.class_names.len() {
        return Err(Error::SchemaViolation(format!(
            "{} classes listed but {} score functions",
            doc.class_names.len(),
            doc.classes.len()
        )));
    }
    let mut score_functions = Vec::with_capacity(doc.classes.len());
    for (k, class) in doc.classes.iter().enumerate() {
        let name = &doc.class_names[k];
        let correct = GaussianStats::new(
            class.mu_correct,
            class.sigma_correct,
            class.count_correct as usize,
        )
        .map_err(|e| schema_err(&format!("class {name:?} correct stats"), e))?;
        let wrong = GaussianStats::new(
            class.mu_wrong,
            class.sigma_wrong,
            class.count_wrong as usize,
        )
        .map_err(|e| schema_err(&format!("class {name:?} wrong stats"), e))?;
        score_functions.push(
            ClassScoreFunction::new(k, correct, wrong)
                .map_err(|e| schema_err(&format!("class {name:?}"), e))?,
        );
    }
    let model = DetectorModel::new(doc.class_names, score_functions, doc.metadata)
        .map_err(|e| schema_err("model", e))?;
    match doc.psi_threshold {
        Some(t) => model
            .with_psi_threshold(t)
            .map_err(|e| schema_err("psi_threshold", e)),
        None => Ok(model),
    }
}

const DECISION_HEADER: [&str; 6] = ["id", "is_ood", "code", "subtype", "predicted_class", "raw_score"];

/// Write per-sample decisions: verdict code and subtype are empty for
/// baseline detectors, the predicted class is a manifest name.
pub fn write_decisions(
    path: impl AsRef<Path>,
    decisions: &[DetectorDecision],
    class_names: &[String],
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record(DECISION_HEADER).map_err(from_csv_error)?;
    for d in decisions {
        let (code, subtype) = match &d.verdict {
            Some(v) => (v.code.to_string(), v.subtype.to_string()),
            None => (String::new(), String::new()),
        };
        let predicted = match d.predicted_class {
            Some(k) => class_names
                .get(k)
                .cloned()
                .ok_or_else(|| Error::MalformedDecision {
                    id: d.sample_id.clone(),
                    reason: format!("predicted class {k} out of range"),
                })?,
            None => String::new(),
        };
        writer
            .write_record([
                d.sample_id.as_str(),
                if d.is_ood { "true" } else { "false" },
                &code,
                &subtype,
                &predicted,
                &d.raw_score.to_string(),
            ])
            .map_err(from_csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_decisions(
    path: impl AsRef<Path>,
    class_names: &[String],
) -> Result<Vec<DetectorDecision>> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(file));
    let headers = reader.headers().map_err(from_csv_error)?;
    if headers.iter().ne(DECISION_HEADER) {
        return Err(Error::HeaderMismatch(format!(
            "decisions header must be `{}`",
            DECISION_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(from_csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| Error::MalformedRow { line, reason };
        let id = record.get(0).unwrap_or_default().to_string();
        let is_ood = match record.get(1).unwrap_or_default() {
            "true" => true,
            "false" => false,
            other => return Err(malformed(format!("is_ood must be true/false, got {other:?}"))),
        };
        let predicted_class = match record.get(4).unwrap_or_default() {
            "" => None,
            name => Some(
                class_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::UnknownLabel {
                        line,
                        label: name.to_string(),
                    })?,
            ),
        };
        let raw_score: f64 = record
            .get(5)
            .unwrap_or_default()
            .parse()
            .map_err(|_| malformed("raw_score is not a number".into()))?;
        let verdict = match (record.get(2).unwrap_or_default(), record.get(3).unwrap_or_default()) {
            ("", "") => None,
            ("", _) | (_, "") => {
                return Err(malformed("verdict code and subtype must appear together".into()))
            }
            (code, subtype) => {
                let subtype: VerdictSubtype = subtype.parse().map_err(|e| malformed(format!("{e}")))?;
                let verdict = Verdict::new(subtype, predicted_class)
                    .map_err(|e| malformed(format!("{e}")))?;
                if verdict.code.to_string() != code {
                    return Err(malformed(format!(
                        "code {code:?} does not match subtype {subtype}"
                    )));
                }
                Some(verdict)
            }
        };
        out.push(
            DetectorDecision::new(id, is_ood, predicted_class, raw_score, verdict)
                .map_err(|e| malformed(format!("{e}")))?,
        );
    }
    Ok(out)
}

pub fn read_synth_spec(path: impl AsRef<Path>) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct EvalReportDoc<'a> {
    kind: &'static str,
    format_version: u32,
    class_names: &'a [String],
    correct_test: u64,
    total_test: u64,
    detected_ood: u64,
    total_ood: u64,
    classification_accuracy: f64,
    classification_accuracy_display: String,
    ood_detection_rate: f64,
    ood_detection_rate_display: String,
    weighted_accuracy: f64,
    weighted_accuracy_display: String,
    confusion: &'a [Vec<u64>],
}

pub fn write_eval_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    report.validate()?;
    write_json_doc(
        path,
        &EvalReportDoc {
            kind: "eval_report",
            format_version: FORMAT_VERSION,
            class_names: &report.class_names,
            correct_test: report.correct_test,
            total_test: report.total_test,
            detected_ood: report.detected_ood,
            total_ood: report.total_ood,
            classification_accuracy: report.classification_accuracy,
            classification_accuracy_display: display_rate(report.classification_accuracy),
            ood_detection_rate: report.ood_detection_rate,
            ood_detection_rate_display: display_rate(report.ood_detection_rate),
            weighted_accuracy: report.weighted_accuracy,
            weighted_accuracy_display: display_rate(report.weighted_accuracy),
            confusion: &report.confusion,
        },
    )
}

#[derive(Serialize)]
struct SweepRowDoc {
    threshold: f64,
    classification_accuracy: f64,
    classification_accuracy_display: String,
    ood_detection_rate: f64,
    ood_detection_rate_display: String,
    weighted_accuracy: f64,
    weighted_accuracy_display: String,
}

#[derive(Serialize)]
struct SweepDoc {
    kind: &'static str,
    format_version: u32,
    rows: Vec<SweepRowDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best: Option<BestRowDoc>,
}

#[derive(Serialize)]
struct BestRowDoc {
    metric: String,
    threshold: f64,
    value: f64,
}

/// Selected-best marker for a sweep document.
pub struct SweepBest {
    pub metric: String,
    pub threshold: f64,
    pub value: f64,
}

pub fn write_sweep_report(
    path: impl AsRef<Path>,
    rows: &[SweepRow],
    best: Option<SweepBest>,
) -> Result<()> {
    write_json_doc(
        path,
        &SweepDoc {
            kind: "threshold_sweep",
            format_version: FORMAT_VERSION,
            rows: rows
                .iter()
                .map(|r| SweepRowDoc {
                    threshold: r.threshold,
                    classification_accuracy: r.classification_accuracy,
                    classification_accuracy_display: display_rate(r.classification_accuracy),
                    ood_detection_rate: r.ood_detection_rate,
                    ood_detection_rate_display: display_rate(r.ood_detection_rate),
                    weighted_accuracy: r.weighted_accuracy,
                    weighted_accuracy_display: display_rate(r.weighted_accuracy),
                })
                .collect(),
            best: best.map(|b| BestRowDoc {
                metric: b.metric,
                threshold: b.threshold,
                value: b.value,
            }),
        },
    )
}

#[derive(Serialize)]
struct DistributionDoc<'a> {
    kind: &'static str,
    format_version: u32,
    #[serde(flatten)]
    report: &'a DistributionReport,
}

pub fn write_distribution_report(path: impl AsRef<Path>, report: &DistributionReport) -> Result<()> {
    write_json_doc(
        path,
        &DistributionDoc {
            kind: "distribution_report",
            format_version: FORMAT_VERSION,
            report,
        },
    )
}

#[derive(Serialize)]
struct CalibrationDoc<'a> {
    kind: &'static str,
    format_version: u32,
    detector: &'a str,
    coverage_target: f64,
    chosen_threshold: f64,
    achieved_coverage: f64,
    achieved_coverage_display: String,
    misclassified_count: u64,
    flagged_count: u64,
}

pub fn write_calibration_report(
    path: impl AsRef<Path>,
    result: &CalibrationResult,
    detector: &str,
    coverage_target: f64,
) -> Result<()> {
    write_json_doc(
        path,
        &CalibrationDoc {
            kind: "calibration_result",
            format_version: FORMAT_VERSION,
            detector,
            coverage_target,
            chosen_threshold: result.chosen_threshold,
            achieved_coverage: result.achieved_coverage,
            achieved_coverage_display: display_rate(result.achieved_coverage),
            misclassified_count: result.misclassified_count as u64,
            flagged_count: result.flagged_count as u64,
        },
    )
}
