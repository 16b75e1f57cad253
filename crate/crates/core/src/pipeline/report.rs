use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::experiment::{BackgroundPolicy, ExperimentReport, SelectedTest};
use crate::dataset::BuildId;
use crate::csvout;
use crate::error::{Error, Result};
use crate::explain::ContrastiveDiff;
use crate::gbdt::EvalPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    /// Everything in one `summary.json`.
    #[default]
    Json,
    /// `ranking.csv`, `importance.csv`, `similarity.csv`, `diffs.csv`,
    /// `explanations/*.json` and a `summary.json` with the scalars.
    Csv,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidConfig(format!("unknown format {s:?}, expected json or csv"))),
        }
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csvout::writer();
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(csvout::finish(w)?.into_bytes())
}

/// File-name-safe form of a test id.
fn file_stem(test_id: &str) -> String {
    test_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    target_build: BuildId,
    config_digest: &'a str,
    config: &'a str,
    schema_digest: &'a str,
    train_builds: &'a [BuildId],
    validation_builds: &'a [BuildId],
    tests: usize,
    failed_count: usize,
    validation_history: &'a [EvalPoint],
    best_iteration: usize,
    best_validation_ndcg: Option<f64>,
    test_ndcg: f64,
    median_rank_error: f64,
    all_failed_top: bool,
    explanation_method: &'a str,
    background: &'a BackgroundPolicy,
    normalization: &'a str,
    selected: &'a [SelectedTest],
    explanation_files: Vec<String>,
    diffs: &'a [ContrastiveDiff],
}

/// Writes `report` under `dir` and returns the paths written, in write order.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    match format {
        ReportFormat::Json => put("summary.json", json_bytes(report)?)?,
        ReportFormat::Csv => {
            let ranking = report.ranking.entries.iter().zip(&report.outcomes).map(|(e, o)| {
                vec![
                    e.position.to_string(),
                    e.test_id.clone(),
                    e.score.to_string(),
                    o.verdict.as_str().to_string(),
                    o.true_position.to_string(),
                ]
            });
            put(
                "ranking.csv",
                csv_text(&["position", "test_id", "score", "verdict", "true_position"], ranking)?,
            )?;
            let importance = report.importance.entries.iter().map(|e| {
                vec![e.feature.clone(), e.index.to_string(), e.count.to_string(), e.share.to_string()]
            });
            put("importance.csv", csv_text(&["feature", "index", "count", "share"], importance)?)?;
            put("similarity.csv", report.similarity.to_csv()?.into_bytes())?;
            let diffs = report.diffs.iter().flat_map(|d| {
                d.entries.iter().map(|e| {
                    vec![
                        d.test_a.clone(),
                        d.test_b.clone(),
                        e.feature.clone(),
                        e.contribution_a.to_string(),
                        e.contribution_b.to_string(),
                        e.delta.to_string(),
                    ]
                })
            });
            put(
                "diffs.csv",
                csv_text(&["test_a", "test_b", "feature", "contribution_a", "contribution_b", "delta"], diffs)?,
            )?;
            let mut files = Vec::new();
            for (s, e) in report.selected.iter().zip(&report.explanations) {
                let name = format!("explanations/{:03}_{}.json", s.position, file_stem(&s.test_id));
                put(&name, json_bytes(e)?)?;
                files.push(name);
            }
            let summary = Summary {
                target_build: report.target_build,
                config_digest: &report.config_digest,
                config: &report.config,
                schema_digest: &report.schema_digest,
                train_builds: &report.train_builds,
                validation_builds: &report.validation_builds,
                tests: report.ranking.len(),
                failed_count: report.failed_count,
                validation_history: &report.validation_history,
                best_iteration: report.best_iteration,
                best_validation_ndcg: report.best_validation_ndcg,
                test_ndcg: report.test_ndcg,
                median_rank_error: report.median_rank_error,
                all_failed_top: report.all_failed_top,
                explanation_method: &report.explanation_method,
                background: &report.background,
                normalization: &report.similarity.normalization,
                selected: &report.selected,
                explanation_files: files,
                diffs: &report.diffs,
            };
            put("summary.json", json_bytes(&summary)?)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use crate::gbdt::TrainingConfig;
    use crate::pipeline::{run_experiment, ExperimentConfig, Selection};

    fn report() -> ExperimentReport {
        let ds = generate_synthetic(&SyntheticConfig::new(10, 8, 3), 1).unwrap();
        let cfg = ExperimentConfig {
            training: TrainingConfig {
                num_iterations: 10,
                min_data_in_leaf: 5,
                ..TrainingConfig::default()
            },
            ..ExperimentConfig::default()
        };
        run_experiment(&ds, 10, &cfg, &Selection::Default).unwrap()
    }

    fn read_all(paths: &[PathBuf]) -> Vec<Vec<u8>> {
        paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
    }

    #[test]
    fn bundles_are_stable() {
        let r = report();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = emit_report(&r, ReportFormat::Csv, a.path()).unwrap();
        let pb = emit_report(&r, ReportFormat::Csv, b.path()).unwrap();
        assert_eq!(read_all(&pa), read_all(&pb));
        for name in ["ranking.csv", "importance.csv", "similarity.csv", "diffs.csv", "summary.json"] {
            assert!(a.path().join(name).is_file(), "{name}");
        }
        let explained = std::fs::read_dir(a.path().join("explanations")).unwrap().count();
        assert_eq!(explained, r.selected.len());
        let again = emit_report(&r, ReportFormat::Csv, a.path()).unwrap();
        assert_eq!(read_all(&again), read_all(&pb));
    }

    #[test]
    fn json_is_single_file() {
        let r = report();
        let d = tempfile::tempdir().unwrap();
        let paths = emit_report(&r, ReportFormat::Json, d.path()).unwrap();
        assert_eq!(paths, vec![d.path().join("summary.json")]);
        let back: ExperimentReport = serde_json::from_slice(&std::fs::read(&paths[0]).unwrap()).unwrap();
        assert_eq!(back.ranking, r.ranking);
        assert_eq!(back.explanations.len(), r.explanations.len());
    }

    #[test]
    fn io_errors_carry_path() {
        let d = tempfile::tempdir().unwrap();
        let blocker = d.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = write_atomic(&blocker.join("out.json"), b"{}").unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }

    #[test]
    fn stems() {
        assert_eq!(file_stem("pkg/Test#1"), "pkg_Test_1");
    }
}
