//! CSV and JSON result writers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files
//! from identical configs are byte-identical. Wall-clock data never reaches
//! these files; it lives only in the run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::Dataset;
use crate::engine::{
    AddOneReport, BinMode, BinReport, ExperimentConfig, ExperimentResult, UnboundedRun,
};
use crate::error::{Error, Result};
use crate::influence::SolveDiagnostics;
use crate::strategies::{AssignedLabel, Strategy};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path.display().to_string(), io),
        other => Error::invalid("csv", format!("{other:?}")),
    })
}

fn write_record<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    path: &Path,
    fields: &[String],
) -> Result<()> {
    w.write_record(fields).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path.display().to_string(), io),
        other => Error::invalid("csv", format!("{other:?}")),
    })
}

fn fnum(v: f64) -> String {
    format!("{v}")
}

/// rounds.csv: one row per (strategy, seed, round).
pub fn write_rounds_csv(
    dir: &Path,
    run_id: &str,
    results: &[ExperimentResult],
) -> Result<PathBuf> {
    let path = dir.join("rounds.csv");
    let mut w = writer(&path)?;
    write_record(
        &mut w,
        &path,
        &[
            "run_id",
            "seed",
            "strategy",
            "round",
            "labeled_size",
            "pool_size",
            "val_accuracy",
            "test_accuracy",
            "disagreements_round",
        ]
        .map(String::from),
    )?;
    for result in results {
        for run in &result.runs {
            for rec in &run.records {
                write_record(
                    &mut w,
                    &path,
                    &[
                        run_id.to_string(),
                        run.seed.to_string(),
                        result.strategy.identifier().to_string(),
                        rec.round.to_string(),
                        rec.labeled_size.to_string(),
                        rec.pool_size.to_string(),
                        fnum(rec.validation_accuracy),
                        fnum(rec.test_accuracy),
                        rec.disagreements.to_string(),
                    ],
                )?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

/// queries.csv: one row per queried point. The strategy column is included
/// so multi-strategy runs stay unambiguous.
pub fn write_queries_csv(
    dir: &Path,
    run_id: &str,
    results: &[ExperimentResult],
    ds: &Dataset,
) -> Result<PathBuf> {
    let path = dir.join("queries.csv");
    let mut w = writer(&path)?;
    write_record(
        &mut w,
        &path,
        &[
            "run_id",
            "seed",
            "strategy",
            "round",
            "rank",
            "sample_id",
            "assigned_label",
            "ground_truth_label",
            "score",
        ]
        .map(String::from),
    )?;
    for result in results {
        for run in &result.runs {
            for rec in &run.records {
                let Some(batch) = &rec.queried else { continue };
                for entry in &batch.entries {
                    let ground_truth = ds.label(entry.index);
                    let assigned = match entry.assigned {
                        AssignedLabel::GroundTruth => ground_truth,
                        AssignedLabel::Salutary(label) => label,
                    };
                    write_record(
                        &mut w,
                        &path,
                        &[
                            run_id.to_string(),
                            run.seed.to_string(),
                            result.strategy.identifier().to_string(),
                            rec.round.to_string(),
                            entry.rank.to_string(),
                            entry.sample_id.to_string(),
                            assigned.to_string(),
                            ground_truth.to_string(),
                            fnum(entry.score),
                        ],
                    )?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

/// bins.csv: per-bin arm rows plus one baseline row (bin_index -1, empty
/// mean influence).
pub fn write_bins_csv(dir: &Path, report: &BinReport) -> Result<PathBuf> {
    let path = dir.join("bins.csv");
    let mut w = writer(&path)?;
    write_record(
        &mut w,
        &path,
        &["mode", "bin_index", "arm", "test_accuracy", "bin_mean_influence"].map(String::from),
    )?;
    write_record(
        &mut w,
        &path,
        &[
            report.mode.identifier().to_string(),
            "-1".to_string(),
            "baseline".to_string(),
            fnum(report.baseline_accuracy),
            String::new(),
        ],
    )?;
    for row in &report.rows {
        write_record(
            &mut w,
            &path,
            &[
                report.mode.identifier().to_string(),
                row.bin_index.to_string(),
                row.arm.identifier().to_string(),
                fnum(row.test_accuracy),
                fnum(row.mean_influence),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

/// addone.csv: per-candidate predicted and actual validation-loss decrease.
pub fn write_addone_csv(dir: &Path, report: &AddOneReport) -> Result<PathBuf> {
    let path = dir.join("addone.csv");
    let mut w = writer(&path)?;
    write_record(
        &mut w,
        &path,
        &["sample_id", "label", "predicted_decrease", "actual_decrease"].map(String::from),
    )?;
    for rec in &report.records {
        write_record(
            &mut w,
            &path,
            &[
                rec.sample_id.to_string(),
                rec.label.to_string(),
                fnum(rec.predicted_decrease),
                fnum(rec.actual_decrease),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_final_test_accuracy: f64,
    pub std_final_test_accuracy: f64,
    pub total_disagreements: usize,
    pub per_seed_final_test_accuracy: Vec<Option<f64>>,
    pub failures: Vec<Option<String>>,
}

impl StrategySummary {
    pub fn of(result: &ExperimentResult) -> StrategySummary {
        StrategySummary {
            strategy: result.strategy,
            mean_final_test_accuracy: result.mean_final_test_accuracy,
            std_final_test_accuracy: result.std_final_test_accuracy,
            total_disagreements: result.total_disagreements,
            per_seed_final_test_accuracy: result
                .runs
                .iter()
                .map(|r| r.final_test_accuracy())
                .collect(),
            failures: result.runs.iter().map(|r| r.failure.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnboundedSummary {
    pub seed: u64,
    pub rounds_run: usize,
    pub best_round: usize,
    pub best_validation_accuracy: f64,
    pub best_test_accuracy: f64,
    pub fully_supervised_test_accuracy: f64,
}

impl UnboundedSummary {
    pub fn of(run: &UnboundedRun) -> UnboundedSummary {
        UnboundedSummary {
            seed: run.seed,
            rounds_run: run.records.len().saturating_sub(1),
            best_round: run.best_round,
            best_validation_accuracy: run.best_validation_accuracy,
            best_test_accuracy: run.best_test_accuracy,
            fully_supervised_test_accuracy: run.fully_supervised_test_accuracy,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BinsSummary {
    pub mode: BinMode,
    pub n_bins: usize,
    pub baseline_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl ErrorInfo {
    pub fn of(err: &Error) -> ErrorInfo {
        ErrorInfo {
            kind: err.kind(),
            message: err.to_string(),
            exit_code: err.exit_code(),
        }
    }
}

/// summary.json: config snapshot, per-strategy statistics, study outputs,
/// and machine-readable error diagnostics. Deterministic for a fixed config.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub command: String,
    pub config: ExperimentConfig,
    /// Original label value per contiguous class index.
    pub label_mapping: Vec<i64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<StrategySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_agreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub addone_candidates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub addone_clamped: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_diagnostics: Option<SolveDiagnostics>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub unbounded: Vec<UnboundedSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<BinsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl RunSummary {
    pub fn new(run_id: &str, command: &str, config: &ExperimentConfig, ds: &Dataset) -> RunSummary {
        RunSummary {
            run_id: run_id.to_string(),
            command: command.to_string(),
            config: config.clone(),
            label_mapping: ds.label_values().to_vec(),
            strategies: Vec::new(),
            spearman: None,
            sign_agreement: None,
            addone_candidates: None,
            addone_clamped: None,
            solve_diagnostics: None,
            unbounded: Vec::new(),
            bins: None,
            error: None,
        }
    }
}

pub fn write_summary_json(dir: &Path, summary: &RunSummary) -> Result<PathBuf> {
    let path = dir.join("summary.json");
    let body = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{self, DatasetSpec};
    use crate::strategies::Strategy;

    #[test]
    fn csv_bodies_are_byte_identical_across_reruns() {
        let mut cfg = engine::ExperimentConfig::for_dataset(DatasetSpec::Synthetic {
            n_per_class: 50,
            classes: 2,
            dims: 2,
            separation: 2.0,
            seed: 3,
            label_noise: 0.0,
        });
        cfg.al.n_init = 30;
        cfg.al.rounds = 2;
        cfg.al.budget = 4;
        cfg.al.seeds = vec![0, 1];
        cfg.al.strategies = vec![Strategy::Salutary, Strategy::Random];
        let ds = engine::load_dataset(&cfg.dataset).unwrap();

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        for dir in [&dir_a, &dir_b] {
            let results = engine::run_experiment(&ds, &cfg).unwrap();
            write_rounds_csv(dir.path(), "testrun", &results).unwrap();
            write_queries_csv(dir.path(), "testrun", &results, &ds).unwrap();
        }
        for name in ["rounds.csv", "queries.csv"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs across reruns");
        }
        let rounds = std::fs::read_to_string(dir_a.path().join("rounds.csv")).unwrap();
        // Header + 2 strategies * 2 seeds * 3 records.
        assert_eq!(rounds.lines().count(), 1 + 12);
        assert!(rounds.starts_with("run_id,seed,strategy,round"));
    }

    #[test]
    fn bins_csv_row_count_is_arms_times_bins_plus_baseline() {
        let mut cfg = engine::ExperimentConfig::for_dataset(DatasetSpec::Synthetic {
            n_per_class: 60,
            classes: 2,
            dims: 2,
            separation: 2.0,
            seed: 4,
            label_noise: 0.0,
        });
        cfg.al.n_init = 30;
        let ds = engine::load_dataset(&cfg.dataset).unwrap();
        let report = engine::bin_analysis(&ds, &cfg, engine::BinMode::PoolAdd, 4, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_bins_csv(dir.path(), &report).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        // header + baseline + 4 bins * 2 arms
        assert_eq!(text.lines().count(), 1 + 1 + 8);
        assert!(text.lines().nth(1).unwrap().starts_with("pool-add,-1,baseline,"));
    }
}
