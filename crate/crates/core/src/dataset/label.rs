use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BuildGroup;
use crate::error::{Error, Result};

/// Maps rank labels to integer relevance grades for the ranker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradingMode {
    /// 1 for failed, 0 for passed.
    #[default]
    Binary,
    /// `levels` grades spread over rank positions, highest at the top.
    Graded(u32),
}

impl fmt::Display for GradingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradingMode::Binary => f.write_str("binary"),
            GradingMode::Graded(g) => write!(f, "graded:{g}"),
        }
    }
}

impl FromStr for GradingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "binary" {
            return Ok(GradingMode::Binary);
        }
        if s == "graded" {
            return Ok(GradingMode::Graded(4));
        }
        if let Some(g) = s.strip_prefix("graded:").or_else(|| s.strip_prefix("graded")) {
            let g = g
                .trim_matches(|c| c == '(' || c == ')')
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad grading mode {s:?}")))?;
            return Ok(GradingMode::Graded(g));
        }
        Err(Error::InvalidConfig(format!("bad grading mode {s:?}")))
    }
}

/// Orders a build failed-first, then by ascending execution time, then by
/// test id, and stores the resulting 1-based positions.
pub fn assign_rank_labels(group: &BuildGroup) -> Result<BuildGroup> {
    if group.records.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut order: Vec<usize> = (0..group.records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&group.records[a], &group.records[b]);
        rb.verdict
            .is_failed()
            .cmp(&ra.verdict.is_failed())
            .then(ra.execution_time.total_cmp(&rb.execution_time))
            .then_with(|| ra.test_id.cmp(&rb.test_id))
    });
    let mut labels = vec![0u32; order.len()];
    for (pos, &idx) in order.iter().enumerate() {
        labels[idx] = pos as u32 + 1;
    }
    let mut out = group.clone();
    // stale grades would no longer match the labels
    if out.rank_labels.as_ref() != Some(&labels) {
        out.relevance_grades = None;
    }
    out.rank_labels = Some(labels);
    Ok(out)
}

/// Derives relevance grades from verdicts (binary) or rank labels (graded).
pub fn grade_relevance(group: &BuildGroup, mode: GradingMode) -> Result<BuildGroup> {
    let labels = group
        .rank_labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("rank labels must be assigned before grading".into()))?;
    let n = labels.len() as u64;
    let grades = match mode {
        GradingMode::Binary => group
            .records
            .iter()
            .map(|r| u32::from(r.verdict.is_failed()))
            .collect(),
        GradingMode::Graded(g) => {
            if g < 2 {
                return Err(Error::InvalidConfig(format!(
                    "graded mode needs at least 2 levels, got {g}"
                )));
            }
            labels
                .iter()
                .map(|&pos| {
                    let raw = (n - u64::from(pos)) * u64::from(g) / n;
                    raw.min(u64::from(g) - 1) as u32
                })
                .collect()
        }
    };
    let mut out = group.clone();
    out.relevance_grades = Some(grades);
    Ok(out)
}
