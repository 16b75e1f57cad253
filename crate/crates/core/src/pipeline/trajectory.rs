use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ineligibility, train_for_build, ExperimentConfig};
use crate::dataset::{BuildId, Dataset};
use crate::csvout;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::gbdt::rank_build;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Positions from the rank labels of each build.
    TrueLabels,
    /// Positions predicted by a model trained for each build.
    Models,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::TrueLabels => "labels",
            LabelSource::Models => "models",
        })
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labels" | "true_labels" | "true" => Ok(LabelSource::TrueLabels),
            "models" | "model" => Ok(LabelSource::Models),
            _ => Err(Error::InvalidConfig(format!("unknown label source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCell {
    pub position: u32,
    pub length: usize,
    /// `position / length`, in (0, 1].
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub test_id: String,
    /// Number of builds in the whole dataset that executed the test.
    pub executions: usize,
    /// One cell per column of [`TrajectoryTable::builds`]; `None` = not executed.
    pub cells: Vec<Option<TrajectoryCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTable {
    pub source: LabelSource,
    pub builds: Vec<BuildId>,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    /// Long format: one line per (test, build).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csvout::writer();
        w.write_record(["test_id", "build_id", "position", "length", "relative_position"])?;
        for row in &self.rows {
            for (b, cell) in self.builds.iter().zip(&row.cells) {
                let rest = match cell {
                    Some(c) => [c.position.to_string(), c.length.to_string(), c.relative.to_string()],
                    None => [String::new(), String::new(), "not executed".to_string()],
                };
                let [p, l, r] = rest;
                w.write_record([row.test_id.clone(), b.to_string(), p, l, r])?;
            }
        }
        csvout::finish(w)
    }
}

/// Relative positions of the `top_n` most frequently executed tests
/// (ties by test id) across builds.
///
/// With [`LabelSource::Models`] only builds with enough history for a model
/// appear as columns.
pub fn rank_trajectory(ds: &Dataset, source: LabelSource, top_n: usize, cfg: &ExperimentConfig) -> Result<TrajectoryTable> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &ds.builds {
        for r in &b.records {
            *freq.entry(r.test_id.as_str()).or_default() += 1;
        }
    }
    let mut tests: Vec<(&str, usize)> = freq.into_iter().collect();
    tests.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if top_n > tests.len() {
        log::warn!("trajectory: {top_n} tests requested, only {} distinct", tests.len());
    }
    tests.truncate(top_n);

    let columns: Vec<BuildId> = match source {
        LabelSource::TrueLabels => ds.builds.iter().map(|b| b.build_id).collect(),
        LabelSource::Models => {
            cfg.validate()?;
            ds.builds
                .iter()
                .enumerate()
                .filter(|(i, _)| ineligibility(*i, cfg).is_none())
                .map(|(_, b)| b.build_id)
                .collect()
        }
    };
    let positions: Vec<BTreeMap<String, u32>> = match source {
        LabelSource::TrueLabels => ds.builds.iter().map(|b| b.true_positions()).collect::<Result<_>>()?,
        LabelSource::Models => exec::try_map(cfg.parallelism, &columns, |&id| {
            let t = train_for_build(ds, id, cfg, Parallelism::Sequential)?;
            let ranking = rank_build(&t.model, &t.split.test)?;
            Ok::<_, Error>(ranking.entries.into_iter().map(|e| (e.test_id, e.position)).collect())
        })?,
    };
    let lengths: Vec<usize> = positions.iter().map(BTreeMap::len).collect();

    let rows = tests
        .into_iter()
        .map(|(id, executions)| TrajectoryRow {
            test_id: id.to_string(),
            executions,
            cells: positions
                .iter()
                .zip(&lengths)
                .map(|(pos, &length)| {
                    pos.get(id).map(|&position| TrajectoryCell {
                        position,
                        length,
                        relative: position as f64 / length as f64,
                    })
                })
                .collect(),
        })
        .collect();
    Ok(TrajectoryTable {
        source,
        builds: columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::rec;
    use crate::dataset::{generate_synthetic, FeatureSchema, SyntheticConfig, Verdict};

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::default()
    }

    #[test]
    fn always_first_and_absent() {
        let mut recs = Vec::new();
        for b in 1..=4u64 {
            recs.push(rec(b, "a", Verdict::Failed, 5.0, &[0.0]));
            recs.push(rec(b, "b", Verdict::Passed, 1.0, &[0.0]));
            if b % 2 == 0 {
                recs.push(rec(b, "c", Verdict::Passed, 2.0, &[0.0]));
            }
        }
        let ds = Dataset::from_records(FeatureSchema::numbered(1).unwrap(), recs).unwrap();
        let t = rank_trajectory(&ds, LabelSource::TrueLabels, 10, &cfg()).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.test_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        let a = &t.rows[0];
        for (cell, b) in a.cells.iter().zip(&ds.builds) {
            assert_eq!(cell.unwrap().relative, 1.0 / b.len() as f64);
        }
        assert!(t.rows[2].cells[0].is_none());
        assert_eq!(t.rows[2].cells[1].unwrap().position, 3);
        let csv = t.to_csv().unwrap();
        assert!(csv.contains("c,1,,,not executed"));
        let one = rank_trajectory(&ds, LabelSource::TrueLabels, 1, &cfg()).unwrap();
        assert_eq!(one.rows.len(), 1);
    }

    #[test]
    fn executed_cells_sum_to_length() {
        let ds = generate_synthetic(&SyntheticConfig { exec_prob: 0.7, ..SyntheticConfig::new(9, 12, 2) }, 3).unwrap();
        let mut c = cfg();
        c.training.num_iterations = 5;
        c.training.min_data_in_leaf = 5;
        for source in [LabelSource::TrueLabels, LabelSource::Models] {
            let t = rank_trajectory(&ds, source, 100, &c).unwrap();
            for (j, b) in t.builds.iter().enumerate() {
                let executed: Vec<_> = t.rows.iter().filter_map(|r| r.cells[j]).collect();
                assert_eq!(executed.len(), ds.build(*b).unwrap().len());
                assert!(executed.iter().all(|c| c.relative > 0.0 && c.relative <= 1.0));
            }
        }
        let models = rank_trajectory(&ds, LabelSource::Models, 3, &c).unwrap();
        assert_eq!(models.builds, vec![6, 7, 8, 9]);
    }
}
