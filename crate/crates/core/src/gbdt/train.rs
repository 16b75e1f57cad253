//! LambdaMART boosting loop.

use super::lambda::accumulate_lambdas;
use super::ndcg::ndcg_unchecked;
use super::rank::order_by_score;
use super::tree::fit_tree_with;
use super::{EvalPoint, LtrModel, TrainingConfig};
use crate::dataset::{assign_rank_labels, grade_relevance, BuildGroup, ExperimentSplit, FeatureSchema, GradingMode};
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::matrix::FeatureMatrix;

/// Records of several builds stacked into one matrix, with query boundaries.
struct QuerySet {
    x: FeatureMatrix,
    bounds: Vec<(usize, usize)>,
    grades: Vec<u32>,
}

impl QuerySet {
    fn new(groups: &[BuildGroup], p: usize) -> Result<Self> {
        let mut rows: Vec<&[f64]> = Vec::new();
        let mut bounds = Vec::with_capacity(groups.len());
        let mut grades = Vec::new();
        for g in groups {
            let start = rows.len();
            for r in &g.records {
                if r.features.len() != p {
                    return Err(Error::SchemaMismatch(format!(
                        "build {} test {:?} has {} features, schema has {p}",
                        g.build_id,
                        r.test_id,
                        r.features.len()
                    )));
                }
                rows.push(&r.features);
            }
            grades.extend(g.relevance_grades.as_ref().expect("graded"));
            bounds.push((start, rows.len()));
        }
        Ok(Self {
            x: FeatureMatrix::from_rows(p, &rows)?,
            bounds,
            grades,
        })
    }

    fn n(&self) -> usize {
        self.x.n_rows()
    }
}

fn prepare(groups: &[BuildGroup], mode: GradingMode) -> Result<Vec<BuildGroup>> {
    groups
        .iter()
        .map(|g| grade_relevance(&assign_rank_labels(g)?, mode))
        .collect()
}

/// Mean NDCG over validation builds, ranking each with the production tie-break.
fn validation_ndcg(groups: &[BuildGroup], set: &QuerySet, scores: &[f64], cfg: &TrainingConfig) -> f64 {
    let total: f64 = groups
        .iter()
        .zip(&set.bounds)
        .map(|(g, &(s, e))| {
            let order = order_by_score(g, &scores[s..e]);
            let grades: Vec<u32> = order.iter().map(|&i| set.grades[s + i]).collect();
            ndcg_unchecked(&grades, cfg.ndcg_truncation)
        })
        .sum();
    total / groups.len() as f64
}

pub fn train(split: &ExperimentSplit, grading: GradingMode, cfg: &TrainingConfig) -> Result<LtrModel> {
    train_with(split, grading, cfg, Parallelism::default())
}

/// Same result as [`train`] for every `par`; only wall time differs.
pub fn train_with(
    split: &ExperimentSplit,
    grading: GradingMode,
    cfg: &TrainingConfig,
    par: Parallelism,
) -> Result<LtrModel> {
    let p = split.schema.len();
    for r in &split.test.records {
        if r.features.len() != p {
            return Err(Error::SchemaMismatch(format!("test build {} width differs", split.test.build_id)));
        }
    }
    train_partitions(&split.schema, &split.train, &split.validation, grading, cfg, par)
}

/// Trains on explicit train and validation partitions, with no test build.
pub fn train_partitions(
    schema: &FeatureSchema,
    train: &[BuildGroup],
    validation: &[BuildGroup],
    grading: GradingMode,
    cfg: &TrainingConfig,
    par: Parallelism,
) -> Result<LtrModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientTraining("empty training partition".into()));
    }
    let schema = schema.clone();
    let p = schema.len();
    let train_groups = prepare(train, grading)?;
    let val_groups = prepare(validation, grading)?;
    let train_set = QuerySet::new(&train_groups, p)?;
    let val_set = QuerySet::new(&val_groups, p)?;

    let mut scores = vec![0.0; train_set.n()];
    let mut val_scores = vec![0.0; val_set.n()];
    let mut trees = Vec::with_capacity(cfg.num_iterations);
    let mut history = Vec::new();

    for iteration in 1..=cfg.num_iterations {
        let per_query = exec::map(par, &train_set.bounds, |&(s, e)| {
            let mut g = vec![0.0; e - s];
            let mut h = vec![0.0; e - s];
            accumulate_lambdas(&scores[s..e], &train_set.grades[s..e], cfg.sigma, cfg.ndcg_truncation, &mut g, &mut h);
            (g, h)
        });
        let mut gradients = Vec::with_capacity(train_set.n());
        let mut hessians = Vec::with_capacity(train_set.n());
        for (g, h) in per_query {
            gradients.extend(g);
            hessians.extend(h);
        }

        let tree = fit_tree_with(&train_set.x, &gradients, &hessians, cfg, par)?;
        let step = |x: &FeatureMatrix| exec::map_range(par, x.n_rows(), |i| cfg.learning_rate * tree.predict(x.row(i)));
        for (s, d) in scores.iter_mut().zip(step(&train_set.x)) {
            *s += d;
        }
        for (s, d) in val_scores.iter_mut().zip(step(&val_set.x)) {
            *s += d;
        }
        trees.push(tree);

        if iteration % cfg.eval_every == 0 && !val_groups.is_empty() {
            history.push(EvalPoint {
                iteration,
                ndcg: validation_ndcg(&val_groups, &val_set, &val_scores, cfg),
            });
        }
    }

    let best_iteration = history
        .iter()
        .fold(None, |best: Option<EvalPoint>, e| match best {
            Some(b) if b.ndcg >= e.ndcg => Some(b),
            _ => Some(*e),
        })
        .map_or(cfg.num_iterations, |e| e.iteration);

    Ok(LtrModel {
        schema,
        config: cfg.clone(),
        learning_rate: cfg.learning_rate,
        trees,
        history,
        best_iteration,
    })
}
