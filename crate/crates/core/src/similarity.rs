//! Comparing local explanations.
//!
//! Contribution vectors are scaled by the sum of absolute contributions,
//! which keeps every sign, then compared with cosine similarity.

use serde::{Deserialize, Serialize};

use crate::csvout;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::explain::Explanation;
use crate::gbdt::Ranking;

/// Tag recorded in exports describing how contributions were scaled.
pub const NORMALIZATION: &str = "l1_abs_sum_sign_preserving";

/// Contributions in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    pub values: Vec<f64>,
    /// Set when every contribution is zero.
    pub degenerate: bool,
}

impl ContributionVector {
    pub fn new(values: Vec<f64>) -> Self {
        let degenerate = values.iter().all(|v| *v == 0.0);
        Self { values, degenerate }
    }

    /// `v / Σ|v|`; the zero vector stays zero and is flagged.
    pub fn normalized(&self) -> Self {
        let total: f64 = self.values.iter().map(|v| v.abs()).sum();
        if total == 0.0 {
            return Self {
                values: vec![0.0; self.values.len()],
                degenerate: true,
            };
        }
        Self {
            values: self.values.iter().map(|v| v / total).collect(),
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn normalize_contributions(e: &Explanation) -> ContributionVector {
    ContributionVector::new(e.contributions()).normalized()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cosine {
    pub value: f64,
    /// Either input had zero norm; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine_similarity(a: &ContributionVector, b: &ContributionVector) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Cosine similarity of two explanations after normalization.
pub fn explanation_similarity(a: &Explanation, b: &Explanation) -> Result<Cosine> {
    cosine_similarity(&normalize_contributions(a), &normalize_contributions(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    /// Ordered by ranking position.
    pub test_ids: Vec<String>,
    pub positions: Vec<u32>,
    pub entries: Vec<Vec<f64>>,
    /// Per test: its contribution vector was all zeros.
    pub degenerate: Vec<bool>,
    pub normalization: String,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.test_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test_ids.is_empty()
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.test_ids.iter().position(|t| t == a)?;
        let j = self.test_ids.iter().position(|t| t == b)?;
        Some(self.entries[i][j])
    }

    /// Header row of test ids, then one row per test.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csvout::writer();
        let mut header = vec!["test_id".to_string()];
        header.extend(self.test_ids.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.test_ids.iter().zip(&self.entries) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        csvout::finish(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn pairwise_similarity(explanations: &[Explanation], ranking: &Ranking, test_ids: Option<&[String]>) -> Result<SimilarityMatrix> {
    pairwise_similarity_with(explanations, ranking, test_ids, Parallelism::default())
}

/// Similarity matrix over `test_ids` (all ranked tests when `None`), ordered
/// by ranking position.
pub fn pairwise_similarity_with(
    explanations: &[Explanation],
    ranking: &Ranking,
    test_ids: Option<&[String]>,
    par: Parallelism,
) -> Result<SimilarityMatrix> {
    let mut chosen: Vec<(u32, &str)> = match test_ids {
        None => ranking.entries.iter().map(|e| (e.position, e.test_id.as_str())).collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                ranking
                    .position_of(id)
                    .map(|p| (p, id.as_str()))
                    .ok_or_else(|| Error::UnknownTest(id.clone()))
            })
            .collect::<Result<_>>()?,
    };
    chosen.sort_unstable();
    chosen.dedup();
    let vectors = chosen
        .iter()
        .map(|(_, id)| {
            explanations
                .iter()
                .find(|e| e.test_id == *id)
                .map(normalize_contributions)
                .ok_or_else(|| Error::InvalidInput(format!("no explanation for test {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = vectors.len();
    let upper = exec::map_range(par, n, |i| {
        (i..n)
            .map(|j| {
                if i == j {
                    Ok(if vectors[i].degenerate { 0.0 } else { 1.0 })
                } else {
                    cosine_similarity(&vectors[i], &vectors[j]).map(|c| c.value)
                }
            })
            .collect::<Result<Vec<f64>>>()
    });
    let mut entries = vec![vec![0.0; n]; n];
    for (i, row) in upper.into_iter().enumerate() {
        for (k, v) in row?.into_iter().enumerate() {
            entries[i][i + k] = v;
            entries[i + k][i] = v;
        }
    }
    Ok(SimilarityMatrix {
        test_ids: chosen.iter().map(|(_, id)| id.to_string()).collect(),
        positions: chosen.iter().map(|(p, _)| *p).collect(),
        entries,
        degenerate: vectors.iter().map(|v| v.degenerate).collect(),
        normalization: NORMALIZATION.to_string(),
    })
}
