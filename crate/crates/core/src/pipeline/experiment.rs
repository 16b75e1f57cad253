use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{train_for_build, ExperimentConfig};
use crate::dataset::{assign_rank_labels, grade_relevance, BuildId, Dataset, Verdict};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::explain::{contrastive_diff, explain_many, ContrastiveDiff, Explanation, BREAK_DOWN_METHOD};
use crate::gbdt::{
    global_importance, median_rank_error, ndcg, rank_build, EvalPoint, GlobalImportance, Ranking, Truncation,
};
use crate::similarity::{pairwise_similarity_with, SimilarityMatrix};

/// Which tests of the target build get local explanations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Selection {
    /// Positions 1, 2, 3, the first position after the actual failure count,
    /// and the last position.
    #[default]
    Default,
    Tests(Vec<String>),
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedTest {
    pub test_id: String,
    pub position: u32,
    /// `top`, `first_non_failed`, `last` or `requested`.
    pub reasons: Vec<String>,
}

/// Ground truth for one ranked test, in ranking order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub test_id: String,
    pub verdict: Verdict,
    pub true_position: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundPolicy {
    pub source: String,
    pub first_build: BuildId,
    pub last_build: BuildId,
    pub population: usize,
    pub rows: usize,
    pub max_rows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub target_build: BuildId,
    pub config_digest: String,
    pub config: String,
    pub schema_digest: String,
    pub train_builds: Vec<BuildId>,
    pub validation_builds: Vec<BuildId>,
    pub ranking: Ranking,
    pub outcomes: Vec<Outcome>,
    pub failed_count: usize,
    pub validation_history: Vec<EvalPoint>,
    pub best_iteration: usize,
    pub best_validation_ndcg: Option<f64>,
    pub test_ndcg: f64,
    pub median_rank_error: f64,
    /// Every actually failed test sits above every passed one.
    pub all_failed_top: bool,
    pub importance: GlobalImportance,
    pub explanation_method: String,
    pub background: BackgroundPolicy,
    pub selected: Vec<SelectedTest>,
    /// Same order as `selected`.
    pub explanations: Vec<Explanation>,
    pub similarity: SimilarityMatrix,
    pub diffs: Vec<ContrastiveDiff>,
}

impl ExperimentReport {
    pub fn explanation(&self, test_id: &str) -> Option<&Explanation> {
        self.explanations.iter().find(|e| e.test_id == test_id)
    }
}

fn select(ranking: &Ranking, failed: usize, selection: &Selection) -> Result<Vec<SelectedTest>> {
    let n = ranking.len() as u32;
    let mut picks: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    let mut add = |pos: u32, reason: &str| picks.entry(pos).or_default().push(reason.to_string());
    match selection {
        Selection::Default => {
            for pos in 1..=n.min(3) {
                add(pos, "top");
            }
            if failed < ranking.len() {
                add(failed as u32 + 1, "first_non_failed");
            }
            add(n, "last");
        }
        Selection::Tests(ids) => {
            for id in ids {
                let pos = ranking.position_of(id).ok_or_else(|| Error::UnknownTest(id.clone()))?;
                add(pos, "requested");
            }
        }
        Selection::All => {
            for pos in 1..=n {
                add(pos, "requested");
            }
        }
    }
    Ok(picks
        .into_iter()
        .map(|(position, reasons)| SelectedTest {
            test_id: ranking.entries[position as usize - 1].test_id.clone(),
            position,
            reasons,
        })
        .collect())
}

/// Trains on the history of `target`, ranks and explains it.
pub fn run_experiment(
    ds: &Dataset,
    target: BuildId,
    cfg: &ExperimentConfig,
    selection: &Selection,
) -> Result<ExperimentReport> {
    run_experiment_with(ds, target, cfg, selection, cfg.parallelism)
}

pub(crate) fn run_experiment_with(
    ds: &Dataset,
    target: BuildId,
    cfg: &ExperimentConfig,
    selection: &Selection,
    par: Parallelism,
) -> Result<ExperimentReport> {
    let trained = train_for_build(ds, target, cfg, par)?;
    let (split, model) = (&trained.split, &trained.model);
    let test = grade_relevance(&assign_rank_labels(&split.test)?, cfg.grading)?;
    let ranking = rank_build(model, &test)?;
    let truth = test.true_positions()?;
    let grade_of: BTreeMap<&str, u32> = test
        .records
        .iter()
        .zip(test.relevance_grades.as_ref().expect("graded"))
        .map(|(r, &g)| (r.test_id.as_str(), g))
        .collect();
    let ordered_grades: Vec<u32> = ranking.test_ids().map(|id| grade_of[id]).collect();
    let test_ndcg = ndcg(&ordered_grades, Truncation::Full)?;
    let outcomes: Vec<Outcome> = ranking
        .test_ids()
        .map(|id| Outcome {
            test_id: id.to_string(),
            verdict: test.record(id).expect("ranked test exists").verdict,
            true_position: truth[id],
        })
        .collect();
    let failed_count = test.failed_count();
    let all_failed_top = outcomes[..failed_count].iter().all(|o| o.verdict.is_failed());

    let selected = select(&ranking, failed_count, selection)?;
    let bg = trained.background(cfg)?;
    let records: Vec<_> = selected
        .iter()
        .map(|s| test.record(&s.test_id).expect("selected test exists"))
        .collect();
    let explanations = explain_many(model, &bg, &records, par)?;
    let ids: Vec<String> = selected.iter().map(|s| s.test_id.clone()).collect();
    let similarity = pairwise_similarity_with(&explanations, &ranking, Some(&ids), par)?;

    let mut diffs = Vec::new();
    if *selection == Selection::Default && !explanations.is_empty() {
        let top = &explanations[0];
        let mut others: Vec<&Explanation> = Vec::new();
        if failed_count < ranking.len() {
            let id = &ranking.entries[failed_count].test_id;
            others.extend(explanations.iter().find(|e| &e.test_id == id));
        }
        others.extend(explanations.last());
        others.dedup_by(|a, b| a.test_id == b.test_id);
        for other in others.into_iter().filter(|e| e.test_id != top.test_id) {
            diffs.push(contrastive_diff(top, other)?);
        }
    }

    let (first_build, last_build) = bg.builds.expect("background built from builds");
    let background = BackgroundPolicy {
        source: "training_partition".into(),
        first_build,
        last_build,
        population: bg.subsample.as_ref().map_or(bg.len(), |s| s.population),
        rows: bg.len(),
        max_rows: cfg.background_max_rows,
        seed: cfg.seed(),
    };

    Ok(ExperimentReport {
        target_build: target,
        config_digest: cfg.digest(),
        config: cfg.to_kv_text(),
        schema_digest: ds.schema.digest(),
        train_builds: split.train.iter().map(|b| b.build_id).collect(),
        validation_builds: split.validation.iter().map(|b| b.build_id).collect(),
        median_rank_error: median_rank_error(&ranking, &truth)?,
        ranking,
        outcomes,
        failed_count,
        validation_history: model.history.clone(),
        best_iteration: model.best_iteration,
        best_validation_ndcg: model
            .history
            .iter()
            .find(|e| e.iteration == model.best_iteration)
            .map(|e| e.ndcg),
        test_ndcg,
        all_failed_top,
        importance: global_importance(model),
        explanation_method: BREAK_DOWN_METHOD.to_string(),
        background,
        selected,
        explanations,
        similarity,
        diffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use crate::gbdt::TrainingConfig;

    fn quick_cfg() -> ExperimentConfig {
        ExperimentConfig {
            training: TrainingConfig {
                num_iterations: 20,
                min_data_in_leaf: 5,
                ..TrainingConfig::default()
            },
            background_max_rows: 60,
            ..ExperimentConfig::default()
        }
    }

    fn failed_build(ds: &Dataset, after: usize) -> BuildId {
        ds.builds[after..].iter().find(|b| b.has_failures()).expect("a failed build").build_id
    }

    #[test]
    fn default_report_shape() {
        let ds = generate_synthetic(&SyntheticConfig::new(20, 15, 4), 2).unwrap();
        let target = failed_build(&ds, 8);
        let r = run_experiment(&ds, target, &quick_cfg(), &Selection::Default).unwrap();
        assert_eq!(r.ranking.len(), 15);
        let positions: Vec<u32> = r.selected.iter().map(|s| s.position).collect();
        let mut expected = vec![1, 2, 3, r.failed_count as u32 + 1, 15];
        expected.sort_unstable();
        expected.dedup();
        assert_eq!(positions, expected);
        assert_eq!(r.explanations.len(), r.selected.len());
        assert_eq!(r.similarity.len(), r.selected.len());
        let build = ds.build(target).unwrap();
        for e in &r.explanations {
            assert!(build.record(&e.test_id).is_some());
            assert!(e.additivity_gap() <= 1e-9);
        }
        assert!((0.0..=1.0).contains(&r.test_ndcg));
        assert!(!r.diffs.is_empty());
        assert!(r.diffs.iter().all(|d| d.test_a == r.ranking.entries[0].test_id));
        assert_eq!(r.background.rows, 60);
    }

    #[test]
    fn requested_and_unknown_tests() {
        let ds = generate_synthetic(&SyntheticConfig::new(12, 8, 3), 5).unwrap();
        let sel = Selection::Tests(vec!["tc003".into(), "tc001".into()]);
        let r = run_experiment(&ds, 12, &quick_cfg(), &sel).unwrap();
        assert_eq!(r.selected.len(), 2);
        assert!(r.diffs.is_empty());
        let bad = Selection::Tests(vec!["nope".into()]);
        assert!(matches!(run_experiment(&ds, 12, &quick_cfg(), &bad), Err(Error::UnknownTest(_))));
        assert!(matches!(
            run_experiment(&ds, 3, &quick_cfg(), &Selection::Default),
            Err(Error::InsufficientTraining(_))
        ));
    }

    #[test]
    fn modes_identical() {
        let ds = generate_synthetic(&SyntheticConfig::new(12, 10, 3), 9).unwrap();
        let a = run_experiment_with(&ds, 12, &quick_cfg(), &Selection::All, Parallelism::Sequential).unwrap();
        let b = run_experiment_with(&ds, 12, &quick_cfg(), &Selection::All, Parallelism::Parallel).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
