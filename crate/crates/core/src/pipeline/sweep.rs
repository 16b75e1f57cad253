use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::experiment::run_experiment_with;
use super::{ineligibility, ExperimentConfig, Selection};
use crate::dataset::{BuildId, Dataset};
use crate::csvout;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub build_id: BuildId,
    pub tests: usize,
    pub failed: usize,
    pub best_validation_ndcg: Option<f64>,
    pub test_ndcg: f64,
    pub median_rank_error: f64,
    pub all_failed_top: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedBuild {
    pub build_id: BuildId,
    pub reason: String,
}

/// One row per eligible failed build, best validation NDCG first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub config_digest: String,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedBuild>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csvout::writer();
        w.write_record([
            "build_id",
            "tests",
            "failed",
            "best_validation_ndcg",
            "test_ndcg",
            "median_rank_error",
            "all_failed_top",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.build_id.to_string(),
                r.tests.to_string(),
                r.failed.to_string(),
                r.best_validation_ndcg.map_or_else(String::new, |v| v.to_string()),
                r.test_ndcg.to_string(),
                r.median_rank_error.to_string(),
                r.all_failed_top.to_string(),
            ])?;
        }
        csvout::finish(w)
    }
}

fn by_validation(a: &SweepRow, b: &SweepRow) -> Ordering {
    match (a.best_validation_ndcg, b.best_validation_ndcg) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then(a.build_id.cmp(&b.build_id))
}

/// Runs an experiment for every failed build with enough history.
pub fn sweep_builds(ds: &Dataset, cfg: &ExperimentConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    for (i, b) in ds.builds.iter().enumerate() {
        if !b.has_failures() {
            continue;
        }
        match ineligibility(i, cfg) {
            Some(reason) => {
                log::info!("sweep: skipping build {}: {reason}", b.build_id);
                skipped.push(SkippedBuild { build_id: b.build_id, reason });
            }
            None => targets.push(b.build_id),
        }
    }
    if targets.is_empty() {
        log::warn!("sweep: no failed build has {} predecessors", cfg.min_history);
    }
    // one experiment per worker; each runs sequentially inside
    let inner = Parallelism::Sequential;
    let selection = Selection::Tests(Vec::new());
    let mut rows = exec::try_map(cfg.parallelism, &targets, |&t| {
        let r = run_experiment_with(ds, t, cfg, &selection, inner)?;
        Ok::<_, Error>(SweepRow {
            build_id: t,
            tests: r.ranking.len(),
            failed: r.failed_count,
            best_validation_ndcg: r.best_validation_ndcg,
            test_ndcg: r.test_ndcg,
            median_rank_error: r.median_rank_error,
            all_failed_top: r.all_failed_top,
        })
    })?;
    rows.sort_by(by_validation);
    Ok(SweepTable {
        config_digest: cfg.digest(),
        rows,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::rec;
    use crate::dataset::{generate_synthetic, FeatureSchema, SyntheticConfig, Verdict};
    use crate::gbdt::TrainingConfig;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            training: TrainingConfig {
                num_iterations: 10,
                min_data_in_leaf: 5,
                ..TrainingConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn row_count_matches_failed_builds() {
        let ds = generate_synthetic(&SyntheticConfig::new(16, 8, 3), 4).unwrap();
        let t = sweep_builds(&ds, &cfg()).unwrap();
        let expected = ds.builds[5..].iter().filter(|b| b.has_failures()).count();
        let early = ds.builds[..5].iter().filter(|b| b.has_failures()).count();
        assert_eq!(t.rows.len(), expected);
        assert_eq!(t.skipped.len(), early);
        for w in t.rows.windows(2) {
            assert!(by_validation(&w[0], &w[1]) != Ordering::Greater);
        }
        assert!(t.to_csv().unwrap().lines().count() == expected + 1);
    }

    #[test]
    fn no_failures_gives_empty_table() {
        let recs = (1..=8).map(|b| rec(b, "t", Verdict::Passed, 1.0, &[0.0])).collect();
        let ds = Dataset::from_records(FeatureSchema::numbered(1).unwrap(), recs).unwrap();
        let t = sweep_builds(&ds, &cfg()).unwrap();
        assert!(t.rows.is_empty() && t.skipped.is_empty());
    }
}
