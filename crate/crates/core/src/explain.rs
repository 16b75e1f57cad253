//! Break Down local attributions and contrastive diffs.
//!
//! Break Down starts from the mean prediction over a background set and adds
//! features to a fixed set one at a time. At each step it fixes the feature
//! whose inclusion moves the expected prediction the most (largest absolute
//! change, lowest index on ties). The recorded changes telescope, so the
//! baseline plus all contributions equals the prediction for the instance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BuildGroup, BuildId, FeatureSchema, TestCaseRecord};
use crate::csvout;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::gbdt::LtrModel;
use crate::matrix::FeatureMatrix;

/// Name of the greedy variant, written into every explanation.
pub const BREAK_DOWN_METHOD: &str = "break_down/greedy_max_abs";

/// Additivity tolerance enforced on every explanation.
pub const ADDITIVITY_TOL: f64 = 1e-9;

/// Anything that maps a feature vector to a relevance score.
pub trait Predictor: Sync {
    fn schema(&self) -> &FeatureSchema;

    /// `x` always has `schema().len()` entries.
    fn predict_row(&self, x: &[f64]) -> f64;
}

impl Predictor for LtrModel {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_unchecked(x)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsample {
    pub seed: u64,
    pub size: usize,
    pub population: usize,
}

/// Reference rows that Break Down averages over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSet {
    pub rows: FeatureMatrix,
    /// First and last build the rows were drawn from, if known.
    pub builds: Option<(BuildId, BuildId)>,
    pub subsample: Option<Subsample>,
}

impl BackgroundSet {
    pub fn new(rows: FeatureMatrix) -> Result<Self> {
        if rows.n_rows() == 0 {
            return Err(Error::InvalidInput("empty background set".into()));
        }
        Ok(Self {
            rows,
            builds: None,
            subsample: None,
        })
    }

    /// All records of `builds`, subsampled uniformly without replacement to
    /// `max_rows` (keeping original order) when there are more.
    pub fn from_builds(builds: &[BuildGroup], p: usize, max_rows: usize, seed: u64) -> Result<Self> {
        let rows: Vec<&[f64]> = builds
            .iter()
            .flat_map(|b| b.records.iter().map(|r| r.features.as_slice()))
            .collect();
        let all = FeatureMatrix::from_rows(p, &rows)?;
        let population = all.n_rows();
        let (rows, subsample) = if max_rows > 0 && population > max_rows {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, population, max_rows).into_vec();
            idx.sort_unstable();
            (
                all.select_rows(&idx),
                Some(Subsample {
                    seed,
                    size: max_rows,
                    population,
                }),
            )
        } else {
            (all, None)
        };
        let mut bg = Self::new(rows)?;
        bg.builds = builds.first().zip(builds.last()).map(|(a, b)| (a.build_id, b.build_id));
        bg.subsample = subsample;
        Ok(bg)
    }

    pub fn len(&self) -> usize {
        self.rows.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.n_rows() == 0
    }
}

fn check_width(p: usize, got: usize) -> Result<()> {
    if p != got {
        return Err(Error::LengthMismatch { expected: p, actual: got });
    }
    Ok(())
}

fn mean_with_fixed<P: Predictor>(model: &P, bg: &BackgroundSet, instance: &[f64], fixed: &[usize]) -> f64 {
    let mut row = vec![0.0; instance.len()];
    let mut total = 0.0;
    for bg_row in bg.rows.rows() {
        row.copy_from_slice(bg_row);
        for &f in fixed {
            row[f] = instance[f];
        }
        total += model.predict_row(&row);
    }
    total / bg.len() as f64
}

/// Mean prediction over background rows with the `fixed` coordinates
/// overwritten by the instance's values.
pub fn expected_prediction<P: Predictor>(
    model: &P,
    bg: &BackgroundSet,
    instance: &[f64],
    fixed: &[usize],
) -> Result<f64> {
    if bg.is_empty() {
        return Err(Error::InvalidInput("empty background set".into()));
    }
    let p = model.schema().len();
    check_width(p, instance.len())?;
    check_width(p, bg.rows.n_cols())?;
    if let Some(&f) = fixed.iter().find(|&&f| f >= p) {
        return Err(Error::InvalidInput(format!("feature index {f} out of range")));
    }
    Ok(mean_with_fixed(model, bg, instance, fixed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub feature: String,
    /// Position of the feature in the schema.
    pub index: usize,
    pub value: f64,
    pub contribution: f64,
}

/// Break Down output. Steps are in greedy selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub test_id: String,
    pub build_id: BuildId,
    pub method: String,
    pub baseline: f64,
    pub prediction: f64,
    pub steps: Vec<Step>,
}

impl Explanation {
    /// Contributions reordered into schema order.
    pub fn contributions(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        for s in &self.steps {
            out[s.index] = s.contribution;
        }
        out
    }

    pub fn contribution_of(&self, feature: &str) -> Option<f64> {
        self.steps.iter().find(|s| s.feature == feature).map(|s| s.contribution)
    }

    /// |baseline + Σ contributions − prediction|.
    pub fn additivity_gap(&self) -> f64 {
        let sum: f64 = self.steps.iter().map(|s| s.contribution).sum();
        (self.baseline + sum - self.prediction).abs()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per feature: `step,feature,value,contribution`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csvout::writer();
        w.write_record(["step", "feature", "value", "contribution"])?;
        self.write_rows(&mut w, None)?;
        csvout::finish(w)
    }

    fn write_rows(&self, w: &mut csv::Writer<Vec<u8>>, prefix: Option<&str>) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            let row = [(i + 1).to_string(), s.feature.clone(), s.value.to_string(), s.contribution.to_string()];
            match prefix {
                Some(p) => w.write_record(std::iter::once(p.to_string()).chain(row))?,
                None => w.write_record(row)?,
            }
        }
        Ok(())
    }
}

/// Several explanations in one table: `test_id,step,feature,value,contribution`.
pub fn explanations_to_csv(explanations: &[Explanation]) -> Result<String> {
    let mut w = csvout::writer();
    w.write_record(["test_id", "step", "feature", "value", "contribution"])?;
    for e in explanations {
        e.write_rows(&mut w, Some(&e.test_id))?;
    }
    csvout::finish(w)
}

pub fn break_down<P: Predictor>(model: &P, bg: &BackgroundSet, instance: &[f64]) -> Result<Explanation> {
    break_down_with(model, bg, instance, Parallelism::default())
}

/// Break Down with candidate evaluation spread according to `par`.
pub fn break_down_with<P: Predictor>(
    model: &P,
    bg: &BackgroundSet,
    instance: &[f64],
    par: Parallelism,
) -> Result<Explanation> {
    let schema = model.schema();
    let p = schema.len();
    let baseline = expected_prediction(model, bg, instance, &[])?;
    let mut fixed: Vec<usize> = Vec::with_capacity(p);
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut current = baseline;
    let mut steps = Vec::with_capacity(p);
    while !remaining.is_empty() {
        let deltas = exec::map(par, &remaining, |&j| {
            let mut with_j = fixed.clone();
            with_j.push(j);
            mean_with_fixed(model, bg, instance, &with_j) - current
        });
        let mut pick = 0;
        for (k, d) in deltas.iter().enumerate() {
            if d.abs() > deltas[pick].abs() {
                pick = k;
            }
        }
        let j = remaining.remove(pick);
        let d = deltas[pick];
        fixed.push(j);
        current += d;
        steps.push(Step {
            feature: schema.name(j).to_string(),
            index: j,
            value: instance[j],
            contribution: d,
        });
    }
    let e = Explanation {
        test_id: String::new(),
        build_id: 0,
        method: BREAK_DOWN_METHOD.to_string(),
        baseline,
        prediction: model.predict_row(instance),
        steps,
    };
    let gap = e.additivity_gap();
    if !(gap <= ADDITIVITY_TOL) {
        return Err(Error::Invariant(format!("break down additivity gap {gap:e}")));
    }
    Ok(e)
}

/// Break Down for one record, carrying its test and build ids.
pub fn explain_record<P: Predictor>(model: &P, bg: &BackgroundSet, record: &TestCaseRecord) -> Result<Explanation> {
    explain_record_with(model, bg, record, Parallelism::default())
}

pub fn explain_record_with<P: Predictor>(
    model: &P,
    bg: &BackgroundSet,
    record: &TestCaseRecord,
    par: Parallelism,
) -> Result<Explanation> {
    let mut e = break_down_with(model, bg, &record.features, par)?;
    e.test_id = record.test_id.clone();
    e.build_id = record.build_id;
    Ok(e)
}

/// Explains several records; output order follows input order.
pub fn explain_many<P: Predictor>(
    model: &P,
    bg: &BackgroundSet,
    records: &[&TestCaseRecord],
    par: Parallelism,
) -> Result<Vec<Explanation>> {
    // parallelism across instances; each explanation runs sequentially inside
    exec::try_map(par, records, |r| explain_record_with(model, bg, r, Parallelism::Sequential))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub feature: String,
    pub contribution_a: f64,
    pub contribution_b: f64,
    /// `contribution_a − contribution_b`.
    pub delta: f64,
}

/// Per-feature difference between two explanations, largest |delta| first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveDiff {
    pub test_a: String,
    pub test_b: String,
    pub entries: Vec<DiffEntry>,
}

pub fn contrastive_diff(a: &Explanation, b: &Explanation) -> Result<ContrastiveDiff> {
    if a.steps.len() != b.steps.len() {
        return Err(Error::SchemaMismatch(format!(
            "explanations have {} and {} features",
            a.steps.len(),
            b.steps.len()
        )));
    }
    let mut by_index: Vec<&Step> = a.steps.iter().collect();
    by_index.sort_by_key(|s| s.index);
    let mut entries = Vec::with_capacity(by_index.len());
    for s in by_index {
        let cb = b
            .contribution_of(&s.feature)
            .ok_or_else(|| Error::SchemaMismatch(format!("feature {:?} missing from second explanation", s.feature)))?;
        entries.push(DiffEntry {
            feature: s.feature.clone(),
            contribution_a: s.contribution,
            contribution_b: cb,
            delta: s.contribution - cb,
        });
    }
    // stable: ties keep schema order
    entries.sort_by(|x, y| y.delta.abs().total_cmp(&x.delta.abs()));
    Ok(ContrastiveDiff {
        test_a: a.test_id.clone(),
        test_b: b.test_id.clone(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::{Node, RegressionTree};

    /// f(x) = x0 + x1 on {0, 1} inputs, built from two stumps.
    fn additive_model() -> LtrModel {
        let stump = |f| RegressionTree {
            nodes: vec![
                Node::Split { feature: f, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { value: 0.0 },
                Node::Leaf { value: 1.0 },
            ],
        };
        LtrModel::from_trees(FeatureSchema::numbered(2).unwrap(), 1.0, vec![stump(0), stump(1)])
    }

    fn background() -> BackgroundSet {
        BackgroundSet::new(FeatureMatrix::from_rows(2, &[[0.0, 0.0], [1.0, 1.0]]).unwrap()).unwrap()
    }

    #[test]
    fn expected_prediction_cases() {
        let m = additive_model();
        let bg = background();
        let x = [1.0, 1.0];
        assert_eq!(expected_prediction(&m, &bg, &x, &[]).unwrap(), 1.0);
        assert_eq!(expected_prediction(&m, &bg, &x, &[0, 1]).unwrap(), 2.0);
        // mean of f(1,0) = 1 and f(1,1) = 2
        assert_eq!(expected_prediction(&m, &bg, &x, &[0]).unwrap(), 1.5);
        assert!(expected_prediction(&m, &bg, &x, &[5]).is_err());
        assert!(expected_prediction(&m, &bg, &[1.0], &[]).is_err());
        assert!(BackgroundSet::new(FeatureMatrix::from_rows(2, &[] as &[[f64; 2]]).unwrap()).is_err());
    }

    #[test]
    fn additive_break_down() {
        let e = break_down(&additive_model(), &background(), &[1.0, 1.0]).unwrap();
        assert_eq!(e.baseline, 1.0);
        assert_eq!(e.prediction, 2.0);
        assert_eq!(e.contributions(), vec![0.5, 0.5]);
        // equal |d|: lowest index first
        assert_eq!(e.steps[0].feature, "f0");
        assert_eq!(e.method, BREAK_DOWN_METHOD);
    }

    #[test]
    fn constant_model() {
        let m = LtrModel::from_trees(FeatureSchema::numbered(2).unwrap(), 0.5, vec![RegressionTree::leaf(3.0)]);
        let e = break_down(&m, &background(), &[0.3, 0.7]).unwrap();
        assert_eq!(e.baseline, 1.5);
        assert!(e.steps.iter().all(|s| s.contribution == 0.0));
    }

    #[test]
    fn modes_agree() {
        let m = additive_model();
        let a = break_down_with(&m, &background(), &[1.0, 0.0], Parallelism::Sequential).unwrap();
        let b = break_down_with(&m, &background(), &[1.0, 0.0], Parallelism::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsampled_background() {
        let recs: Vec<TestCaseRecord> = (0..30)
            .map(|i| crate::dataset::testutil::rec(1, &format!("t{i}"), crate::dataset::Verdict::Passed, 1.0, &[i as f64]))
            .collect();
        let b = BuildGroup::new(1, recs);
        let bg = BackgroundSet::from_builds(std::slice::from_ref(&b), 1, 10, 4).unwrap();
        assert_eq!(bg.len(), 10);
        assert_eq!(bg.subsample.as_ref().unwrap().population, 30);
        let again = BackgroundSet::from_builds(std::slice::from_ref(&b), 1, 10, 4).unwrap();
        assert_eq!(bg, again);
        let col: Vec<f64> = bg.rows.rows().map(|r| r[0]).collect();
        assert!(col.windows(2).all(|w| w[0] < w[1]));
        let full = BackgroundSet::from_builds(std::slice::from_ref(&b), 1, 500, 4).unwrap();
        assert_eq!((full.len(), full.subsample.is_none(), full.builds), (30, true, Some((1, 1))));
    }

    fn explanation(id: &str, contribs: &[(&str, usize, f64)]) -> Explanation {
        Explanation {
            test_id: id.into(),
            build_id: 1,
            method: BREAK_DOWN_METHOD.into(),
            baseline: 0.0,
            prediction: contribs.iter().map(|c| c.2).sum(),
            steps: contribs
                .iter()
                .map(|&(f, i, c)| Step { feature: f.into(), index: i, value: 0.0, contribution: c })
                .collect(),
        }
    }

    #[test]
    fn contrastive() {
        let a = explanation("a", &[("f1", 0, 0.5), ("f2", 1, 0.1)]);
        let b = explanation("b", &[("f2", 1, 0.3), ("f1", 0, -0.25)]);
        let d = contrastive_diff(&a, &b).unwrap();
        assert_eq!(d.entries[0].feature, "f1");
        assert_eq!(d.entries[0].delta, 0.75);
        let back = contrastive_diff(&b, &a).unwrap();
        for (x, y) in d.entries.iter().zip(&back.entries) {
            assert_eq!(x.feature, y.feature);
            assert_eq!(x.delta, -y.delta);
        }
        let same = contrastive_diff(&a, &a).unwrap();
        assert!(same.entries.iter().all(|e| e.delta == 0.0));
        let other = explanation("c", &[("f1", 0, 0.5), ("f9", 1, 0.1)]);
        assert!(contrastive_diff(&a, &other).is_err());
    }

    #[test]
    fn csv_export() {
        let e = explanation("a", &[("f1", 0, 0.5)]);
        assert_eq!(e.to_csv().unwrap(), "step,feature,value,contribution\n1,f1,0,0.5\n");
        let both = explanations_to_csv(&[e.clone(), explanation("b,c", &[("f1", 0, 1.0)])]).unwrap();
        assert_eq!(both, "test_id,step,feature,value,contribution\na,1,f1,0,0.5\n\"b,c\",1,f1,0,1\n");
    }
}
