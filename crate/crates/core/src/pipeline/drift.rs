use serde::{Deserialize, Serialize};

use super::{ineligibility, train_for_build, ExperimentConfig};
use crate::dataset::{BuildId, Dataset, Verdict};
use crate::csvout;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::explain::{explain_record_with, Explanation};
use crate::gbdt::rank_build;
use crate::similarity::explanation_similarity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub build_id: BuildId,
    pub verdict: Verdict,
    /// Predicted position and ranking length, when a ranking was made.
    pub position: Option<(u32, usize)>,
    pub explanation: Explanation,
    /// Cosine similarity with the previous point; `None` for the first.
    pub similarity_to_previous: Option<f64>,
    /// Either contribution vector of the pair was all zeros.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub test_id: String,
    pub points: Vec<DriftPoint>,
}

impl DriftSeries {
    pub fn similarities(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.similarity_to_previous).collect()
    }

    /// Feature contributions in long format, plus per-build similarity.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csvout::writer();
        w.write_record([
            "build_id",
            "verdict",
            "position",
            "similarity_to_previous",
            "feature",
            "value",
            "contribution",
        ])?;
        for p in &self.points {
            let mut steps: Vec<_> = p.explanation.steps.iter().collect();
            steps.sort_by_key(|s| s.index);
            for s in steps {
                w.write_record([
                    p.build_id.to_string(),
                    p.verdict.as_str().to_string(),
                    p.position.map_or_else(String::new, |(pos, _)| pos.to_string()),
                    p.similarity_to_previous.map_or_else(String::new, |v| v.to_string()),
                    s.feature.clone(),
                    s.value.to_string(),
                    s.contribution.to_string(),
                ])?;
            }
        }
        csvout::finish(w)
    }
}

/// Links per-build explanations of one test into a series. Builds must be
/// strictly increasing and there must be at least two.
pub fn drift_from_explanations(test_id: &str, entries: Vec<(Verdict, Explanation)>) -> Result<DriftSeries> {
    if entries.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "test {test_id:?} has {} explainable build(s), need 2",
            entries.len()
        )));
    }
    let mut points: Vec<DriftPoint> = Vec::with_capacity(entries.len());
    for (verdict, explanation) in entries {
        if explanation.test_id != test_id {
            return Err(Error::InvalidInput(format!(
                "explanation for {:?} in series for {test_id:?}",
                explanation.test_id
            )));
        }
        let (similarity_to_previous, degenerate) = match points.last() {
            None => (None, false),
            Some(prev) => {
                if prev.build_id >= explanation.build_id {
                    return Err(Error::InvalidInput("drift builds must be strictly increasing".into()));
                }
                let c = explanation_similarity(&prev.explanation, &explanation)?;
                (Some(c.value), c.degenerate)
            }
        };
        points.push(DriftPoint {
            build_id: explanation.build_id,
            verdict,
            position: None,
            explanation,
            similarity_to_previous,
            degenerate,
        });
    }
    Ok(DriftSeries {
        test_id: test_id.to_string(),
        points,
    })
}

/// Explains `test_id` in every build that executed it and has enough
/// history for a model, each with that build's own model.
pub fn explanation_drift(ds: &Dataset, test_id: &str, cfg: &ExperimentConfig) -> Result<DriftSeries> {
    cfg.validate()?;
    let executed: Vec<usize> = (0..ds.m()).filter(|&i| ds.builds[i].record(test_id).is_some()).collect();
    if executed.is_empty() {
        return Err(Error::UnknownTest(test_id.to_string()));
    }
    let eligible: Vec<BuildId> = executed
        .into_iter()
        .filter(|&i| ineligibility(i, cfg).is_none())
        .map(|i| ds.builds[i].build_id)
        .collect();
    let explained = exec::try_map(cfg.parallelism, &eligible, |&id| {
        let t = train_for_build(ds, id, cfg, Parallelism::Sequential)?;
        let record = t.split.test.record(test_id).expect("test executed in build");
        let e = explain_record_with(&t.model, &t.background(cfg)?, record, Parallelism::Sequential)?;
        let ranking = rank_build(&t.model, &t.split.test)?;
        let pos = ranking.position_of(test_id).map(|p| (p, ranking.len()));
        Ok::<_, Error>((record.verdict, e, pos))
    })?;
    let positions: Vec<_> = explained.iter().map(|x| x.2).collect();
    let mut series = drift_from_explanations(test_id, explained.into_iter().map(|(v, e, _)| (v, e)).collect())?;
    for (p, pos) in series.points.iter_mut().zip(positions) {
        p.position = pos;
    }
    Ok(series)
}
