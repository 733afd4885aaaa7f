//! Command-line workflow: fit a detector from train logits, calibrate its
//! threshold on validation misclassifications, score new samples, and
//! evaluate or sweep against labeled test/OOD splits.
//!
//! Exit codes: 0 success, 1 domain error (diagnostic on stderr), 2 usage
//! error.

mod grid;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use grid::GridSpec;
use oodkit::{
    calibrate_baseline, calibrate_psi, default_probability_grid, energy_grid_from_scores,
    misclassified_subset, threshold_sweep, BaselineConfig, BaselineKind, CalibrationSpec, Dataset,
    DetectorDecision, DetectorModel, SweepRow,
};

#[derive(Parser)]
#[command(
    name = "oodkit",
    version,
    about = "Out-of-distribution detection on raw classifier logits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorKind {
    /// Probability-score interpreter
    Psi,
    /// Max-softmax thresholding
    Msp,
    /// Energy (log-sum-exp) thresholding
    Energy,
}

impl DetectorKind {
    fn name(&self) -> &'static str {
        match self {
            DetectorKind::Psi => "psi",
            DetectorKind::Msp => "msp",
            DetectorKind::Energy => "energy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    #[value(name = "weighted_accuracy")]
    WeightedAccuracy,
    #[value(name = "classification_accuracy")]
    ClassificationAccuracy,
    #[value(name = "ood_detection_rate")]
    OodDetectionRate,
}

impl Metric {
    fn name(&self) -> &'static str {
        match self {
            Metric::WeightedAccuracy => "weighted_accuracy",
            Metric::ClassificationAccuracy => "classification_accuracy",
            Metric::OodDetectionRate => "ood_detection_rate",
        }
    }

    fn of(&self, row: &SweepRow) -> f64 {
        match self {
            Metric::WeightedAccuracy => row.weighted_accuracy,
            Metric::ClassificationAccuracy => row.classification_accuracy,
            Metric::OodDetectionRate => row.ood_detection_rate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-class score functions from a train logits file
    Fit {
        /// Train split logits CSV
        #[arg(long)]
        train: PathBuf,
        /// Logits CSV whose samples replace every wrong-class population
        #[arg(long)]
        negative_set: Option<PathBuf>,
        /// Output model file (JSON)
        #[arg(long)]
        out: PathBuf,
    },
    /// Select a detector threshold from validation misclassifications
    Calibrate {
        /// Model file; for psi the chosen threshold is written back into it
        #[arg(long)]
        model: PathBuf,
        /// Validation split logits CSV (class labels only)
        #[arg(long)]
        validation: PathBuf,
        #[arg(long, value_enum, default_value_t = DetectorKind::Psi)]
        detector: DetectorKind,
        /// Fraction of misclassified samples the threshold must flag as OOD
        #[arg(long, default_value_t = 0.75)]
        coverage: f64,
        /// Threshold grid (logx:<s>:<e>:<step> | linear:<s>:<e>:<step> | list:v,v,..)
        #[arg(long)]
        grid: Option<GridSpec>,
        /// Calibration result file (JSON)
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a logits file into per-sample decisions
    Detect {
        /// Model file (required for psi)
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DetectorKind::Psi)]
        detector: DetectorKind,
        /// Input logits CSV (labels may be "?")
        #[arg(long)]
        test: PathBuf,
        /// Baseline threshold (required for msp/energy)
        #[arg(long)]
        threshold: Option<f64>,
        /// Output decisions CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Tally a decisions file against labeled test/OOD logits
    Eval {
        /// Decisions CSV produced by `detect`
        #[arg(long)]
        decisions: PathBuf,
        /// Labeled test logits CSV (may also contain __OOD__ rows)
        #[arg(long)]
        test: PathBuf,
        /// OOD logits CSV merged into the truth set
        #[arg(long)]
        ood: Option<PathBuf>,
        /// Output evaluation report (JSON)
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the interpreter across a threshold grid
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        /// Threshold grid (defaults to logx:0.1:13:0.1)
        #[arg(long)]
        grid: Option<GridSpec>,
        /// Also report the grid point maximizing this metric
        #[arg(long, value_enum)]
        select_best: Option<Metric>,
        /// Output sweep table (JSON)
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic train/validation/test/ood splits
    Synth {
        /// Synth spec (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the four CSV files
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit per-class logit distributions and score curves as plot data
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        ood: Option<PathBuf>,
        /// Output distribution report (JSON)
        #[arg(long)]
        out: PathBuf,
    },
}

fn usage_error(message: &str) -> ! {
    Cli::command()
        .error(ErrorKind::MissingRequiredArgument, message)
        .exit()
}

/// Status lines must survive a closed stdout (e.g. piping into `head`).
macro_rules! status {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn read_logits(path: &Path) -> anyhow::Result<Dataset> {
    oodkit::io::read_logits(path).with_context(|| format!("reading {}", path.display()))
}

fn read_model(path: &Path) -> anyhow::Result<DetectorModel> {
    oodkit::io::read_model(path).with_context(|| format!("reading {}", path.display()))
}

fn check_manifest(dataset: &Dataset, model: &DetectorModel, what: &str) -> anyhow::Result<()> {
    if dataset.class_names() != model.class_names() {
        anyhow::bail!(
            "{what}: class manifest does not match the model ({:?} vs {:?})",
            dataset.class_names(),
            model.class_names()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit {
            train,
            negative_set,
            out,
        } => {
            let train_set = read_logits(&train)?;
            let negative = negative_set
                .as_deref()
                .map(read_logits)
                .transpose()?;
            let mut model = oodkit::fit_model(&train_set, negative.as_ref())?;
            model
                .metadata
                .insert("train".into(), train.display().to_string());
            model.metadata.insert(
                "train_samples".into(),
                train_set.len().to_string(),
            );
            if let Some(path) = &negative_set {
                model
                    .metadata
                    .insert("negative_set".into(), path.display().to_string());
            }
            oodkit::io::write_model(&out, &model)
                .with_context(|| format!("writing {}", out.display()))?;
            status!(
                "fitted {} classes from {} samples -> {}",
                model.class_count(),
                train_set.len(),
                out.display()
            );
        }
        Command::Calibrate {
            model: model_path,
            validation,
            detector,
            coverage,
            grid,
            out,
        } => {
            let model = read_model(&model_path)?;
            let validation_set = read_logits(&validation)?;
            let result = match detector {
                DetectorKind::Psi => {
                    let grid = grid.map(|g| g.0).unwrap_or_else(default_probability_grid);
                    let spec = CalibrationSpec::new(coverage, grid)?;
                    let (mut calibrated, result) = calibrate_psi(&model, &validation_set, &spec)?;
                    calibrated
                        .metadata
                        .insert("calibration_validation".into(), validation.display().to_string());
                    calibrated
                        .metadata
                        .insert("calibration_coverage".into(), coverage.to_string());
                    oodkit::io::write_model(&model_path, &calibrated)
                        .with_context(|| format!("writing {}", model_path.display()))?;
                    result
                }
                DetectorKind::Msp | DetectorKind::Energy => {
                    let kind = match detector {
                        DetectorKind::Msp => BaselineKind::MaxSoftmax,
                        _ => BaselineKind::Energy,
                    };
                    let misclassified = misclassified_subset(&model, &validation_set)?;
                    let logits: Vec<_> = misclassified.iter().map(|s| &s.logits).collect();
                    let grid = match (grid, kind) {
                        (Some(g), _) => g.0,
                        (None, BaselineKind::MaxSoftmax) => default_probability_grid(),
                        (None, BaselineKind::Energy) => {
                            if logits.is_empty() {
                                return Err(oodkit::Error::EmptyMisclassifiedSet.into());
                            }
                            let scores: Vec<f64> = logits
                                .iter()
                                .map(|l| oodkit::calibrate::baseline_score(kind, l))
                                .collect();
                            energy_grid_from_scores(&scores)
                        }
                    };
                    let spec = CalibrationSpec::new(coverage, grid)?;
                    calibrate_baseline(kind, &logits, &spec)?
                }
            };
            oodkit::io::write_calibration_report(&out, &result, detector.name(), coverage)
                .with_context(|| format!("writing {}", out.display()))?;
            status!(
                "{}: threshold {} covers {} of {} misclassified ({:.3})",
                detector.name(),
                result.chosen_threshold,
                result.flagged_count,
                result.misclassified_count,
                result.achieved_coverage
            );
        }
        Command::Detect {
            model: model_path,
            detector,
            test,
            threshold,
            out,
        } => {
            let input = read_logits(&test)?;
            let decisions: Vec<DetectorDecision> = match detector {
                DetectorKind::Psi => {
                    if threshold.is_some() {
                        usage_error("--threshold applies to msp/energy only; psi reads the calibrated model");
                    }
                    let Some(model_path) = model_path else {
                        usage_error("--model is required for --detector psi");
                    };
                    let model = read_model(&model_path)?;
                    check_manifest(&input, &model, "detect input")?;
                    input
                        .samples()
                        .iter()
                        .map(|s| oodkit::psi_detect(&model, &s.id, &s.logits))
                        .collect::<oodkit::Result<_>>()?
                }
                DetectorKind::Msp | DetectorKind::Energy => {
                    let Some(threshold) = threshold else {
                        usage_error("--threshold is required for msp/energy detection");
                    };
                    let config = match detector {
                        DetectorKind::Msp => BaselineConfig::max_softmax(threshold)?,
                        _ => BaselineConfig::energy(threshold)?,
                    };
                    input
                        .samples()
                        .iter()
                        .map(|s| config.detect(&s.id, &s.logits))
                        .collect()
                }
            };
            oodkit::io::write_decisions(&out, &decisions, input.class_names())
                .with_context(|| format!("writing {}", out.display()))?;
            let flagged = decisions.iter().filter(|d| d.is_ood).count();
            status!(
                "{}: {} of {} samples flagged OOD -> {}",
                detector.name(),
                flagged,
                decisions.len(),
                out.display()
            );
        }
        Command::Eval {
            decisions,
            test,
            ood,
            out,
        } => {
            let test_set = read_logits(&test)?;
            let truth = match ood {
                Some(ood_path) => {
                    let ood_set = read_logits(&ood_path)?;
                    if ood_set.class_names() != test_set.class_names() {
                        anyhow::bail!(
                            "{}: class manifest does not match {}",
                            ood_path.display(),
                            test.display()
                        );
                    }
                    Dataset::new(
                        test_set.class_names().to_vec(),
                        test_set
                            .samples()
                            .iter()
                            .chain(ood_set.samples())
                            .cloned()
                            .collect(),
                    )?
                }
                None => test_set,
            };
            let decision_list = oodkit::io::read_decisions(&decisions, truth.class_names())
                .with_context(|| format!("reading {}", decisions.display()))?;
            let report = oodkit::evaluate(&decision_list, &truth)?;
            oodkit::io::write_eval_report(&out, &report)
                .with_context(|| format!("writing {}", out.display()))?;
            status!(
                "classification accuracy {:.3}  ood detection rate {:.3}  weighted accuracy {:.3}",
                report.classification_accuracy, report.ood_detection_rate, report.weighted_accuracy
            );
        }
        Command::Sweep {
            model,
            test,
            ood,
            grid,
            select_best,
            out,
        } => {
            let model = read_model(&model)?;
            let test_set = read_logits(&test)?;
            let ood_set = read_logits(&ood)?;
            check_manifest(&test_set, &model, "test split")?;
            check_manifest(&ood_set, &model, "OOD split")?;
            let grid = grid.map(|g| g.0).unwrap_or_else(default_probability_grid);
            let rows = threshold_sweep(&model, &test_set, &ood_set, &grid)?;
            let best = select_best.map(|metric| {
                let row = rows
                    .iter()
                    .max_by(|a, b| metric.of(a).partial_cmp(&metric.of(b)).expect("finite metrics"))
                    .expect("non-empty grid");
                oodkit::io::SweepBest {
                    metric: metric.name().to_string(),
                    threshold: row.threshold,
                    value: metric.of(row),
                }
            });
            if let Some(b) = &best {
                status!("best {} = {:.6} at threshold {}", b.metric, b.value, b.threshold);
            }
            oodkit::io::write_sweep_report(&out, &rows, best)
                .with_context(|| format!("writing {}", out.display()))?;
            status!("{} grid points -> {}", rows.len(), out.display());
        }
        Command::Synth { config, out, seed } => {
            let mut spec = oodkit::io::read_synth_spec(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let datasets = oodkit::generate(&spec)?;
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            for (name, dataset) in [
                ("train", &datasets.train),
                ("validation", &datasets.validation),
                ("test", &datasets.test),
                ("ood", &datasets.ood),
            ] {
                let path = out.join(format!("{name}.csv"));
                oodkit::io::write_logits(&path, dataset)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            status!(
                "seed {}: {} train / {} validation / {} test / {} ood -> {}",
                spec.seed,
                datasets.train.len(),
                datasets.validation.len(),
                datasets.test.len(),
                datasets.ood.len(),
                out.display()
            );
        }
        Command::Report {
            model,
            train,
            validation,
            test,
            ood,
            out,
        } => {
            let model = read_model(&model)?;
            let mut splits: Vec<(String, Dataset)> = Vec::new();
            for (name, path) in [
                ("train", train),
                ("validation", validation),
                ("test", test),
                ("ood", ood),
            ] {
                if let Some(path) = path {
                    splits.push((name.to_string(), read_logits(&path)?));
                }
            }
            if splits.is_empty() {
                usage_error("report needs at least one of --train/--validation/--test/--ood");
            }
            let borrowed: Vec<(String, &Dataset)> =
                splits.iter().map(|(n, d)| (n.clone(), d)).collect();
            let report = oodkit::distribution_report(&model, &borrowed)?;
            oodkit::io::write_distribution_report(&out, &report)
                .with_context(|| format!("writing {}", out.display()))?;
            status!(
                "{} classes x {} splits -> {}",
                report.classes.len(),
                splits.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
