use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LtrModel;
use crate::dataset::{BuildGroup, BuildId};
use crate::csvout;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub test_id: String,
    pub score: f64,
    /// 1-based.
    pub position: u32,
}

/// Predicted order of one build's test cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub build_id: BuildId,
    pub entries: Vec<RankEntry>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position_of(&self, test_id: &str) -> Option<u32> {
        self.entries.iter().find(|e| e.test_id == test_id).map(|e| e.position)
    }

    pub fn test_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.test_id.as_str())
    }

    /// `position,test_id,score`, one row per test.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csvout::writer();
        w.write_record(["position", "test_id", "score"])?;
        for e in &self.entries {
            w.write_record([e.position.to_string(), e.test_id.clone(), e.score.to_string()])?;
        }
        csvout::finish(w)
    }
}

/// Record indices sorted by descending score, ascending execution time, then test id.
pub(crate) fn order_by_score(group: &BuildGroup, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..group.records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&group.records[a], &group.records[b]);
        scores[b]
            .total_cmp(&scores[a])
            .then(ra.execution_time.total_cmp(&rb.execution_time))
            .then_with(|| ra.test_id.cmp(&rb.test_id))
    });
    order
}

/// Builds a ranking from externally computed scores (one per record).
pub fn rank_by_scores(group: &BuildGroup, scores: &[f64]) -> Result<Ranking> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if scores.len() != group.len() {
        return Err(Error::LengthMismatch {
            expected: group.len(),
            actual: scores.len(),
        });
    }
    let entries = order_by_score(group, scores)
        .into_iter()
        .enumerate()
        .map(|(pos, i)| RankEntry {
            test_id: group.records[i].test_id.clone(),
            score: scores[i],
            position: pos as u32 + 1,
        })
        .collect();
    Ok(Ranking {
        build_id: group.build_id,
        entries,
    })
}

pub fn rank_build(model: &LtrModel, group: &BuildGroup) -> Result<Ranking> {
    let scores = group
        .records
        .iter()
        .map(|r| model.predict(&r.features))
        .collect::<Result<Vec<_>>>()?;
    rank_by_scores(group, &scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub index: usize,
    pub count: u64,
    pub share: f64,
}

/// Split-count feature importance; only features used at least once appear,
/// ordered by descending count then schema order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub entries: Vec<ImportanceEntry>,
}

impl GlobalImportance {
    pub fn counts(&self) -> BTreeMap<&str, u64> {
        self.entries.iter().map(|e| (e.feature.as_str(), e.count)).collect()
    }

    pub fn normalized(&self) -> BTreeMap<&str, f64> {
        self.entries.iter().map(|e| (e.feature.as_str(), e.share)).collect()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn top(&self) -> Option<&ImportanceEntry> {
        self.entries.first()
    }
}

pub fn global_importance(model: &LtrModel) -> GlobalImportance {
    let mut counts = vec![0u64; model.n_features()];
    for tree in model.active_trees() {
        for f in tree.split_features() {
            counts[f] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let mut entries: Vec<ImportanceEntry> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| ImportanceEntry {
            feature: model.schema.name(i).to_string(),
            index: i,
            count: c,
            share: c as f64 / total as f64,
        })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then(a.index.cmp(&b.index)));
    GlobalImportance { entries }
}

/// Median of |predicted − true| positions; even counts average the middle two.
pub fn median_rank_error(predicted: &Ranking, true_positions: &BTreeMap<String, u32>) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if predicted.len() != true_positions.len() {
        return Err(Error::InvalidInput(format!(
            "ranking has {} tests, truth has {}",
            predicted.len(),
            true_positions.len()
        )));
    }
    let mut diffs = predicted
        .entries
        .iter()
        .map(|e| {
            true_positions
                .get(&e.test_id)
                .map(|&t| (i64::from(e.position) - i64::from(t)).unsigned_abs())
                .ok_or_else(|| Error::UnknownTest(e.test_id.clone()))
        })
        .collect::<Result<Vec<u64>>>()?;
    diffs.sort_unstable();
    let n = diffs.len();
    Ok(if n % 2 == 1 {
        diffs[n / 2] as f64
    } else {
        (diffs[n / 2 - 1] + diffs[n / 2]) as f64 / 2.0
    })
}
