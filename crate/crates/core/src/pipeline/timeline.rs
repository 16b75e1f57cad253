use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::dataset::{split_history, BuildId, Dataset};
use crate::csvout;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::gbdt::{global_importance, train_partitions, GlobalImportance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    /// Last build included in training.
    pub build_id: BuildId,
    /// Builds seen so far.
    pub history_len: usize,
    /// Builds actually trained on (the trailing window).
    pub trained_on: usize,
    pub importance: GlobalImportance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTimeline {
    pub stride: usize,
    pub window: Option<usize>,
    pub points: Vec<TimelinePoint>,
}

impl ImportanceTimeline {
    /// Top feature per retraining point.
    pub fn top_features(&self) -> Vec<Option<&str>> {
        self.points
            .iter()
            .map(|p| p.importance.top().map(|e| e.feature.as_str()))
            .collect()
    }

    /// Long format: one line per (point, used feature).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csvout::writer();
        w.write_record(["build_id", "history_len", "trained_on", "feature", "count", "share"])?;
        for p in &self.points {
            for e in &p.importance.entries {
                w.write_record([
                    p.build_id.to_string(),
                    p.history_len.to_string(),
                    p.trained_on.to_string(),
                    e.feature.clone(),
                    e.count.to_string(),
                    e.share.to_string(),
                ])?;
            }
        }
        csvout::finish(w)
    }
}

/// Retrains on the first r builds for r = stride, 2·stride, ... and records
/// global importance each time. A stride longer than the dataset gives one
/// point covering every build. Points with fewer than `min_history` builds
/// are skipped.
///
/// With `window = Some(w)` each model sees only the last w builds of its
/// history instead of all of them.
pub fn importance_timeline(
    ds: &Dataset,
    stride: usize,
    window: Option<usize>,
    cfg: &ExperimentConfig,
) -> Result<ImportanceTimeline> {
    cfg.validate()?;
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be at least 1".into()));
    }
    if window.is_some_and(|w| w < cfg.min_history) {
        return Err(Error::InvalidConfig(format!("window must be at least min_history ({})", cfg.min_history)));
    }
    let m = ds.m();
    let mut ends: Vec<usize> = (1..=m / stride).map(|k| k * stride).collect();
    if ends.is_empty() && m > 0 {
        ends.push(m);
    }
    ends.retain(|&r| {
        let ok = r >= cfg.min_history;
        if !ok {
            log::info!("timeline: skipping point after {r} build(s), need {}", cfg.min_history);
        }
        ok
    });
    let points = exec::try_map(cfg.parallelism, &ends, |&r| {
        let start = window.map_or(0, |w| r.saturating_sub(w));
        let history = &ds.builds[start..r];
        let (train, validation) = split_history(history)?;
        let model = train_partitions(&ds.schema, &train, &validation, cfg.grading, &cfg.training, Parallelism::Sequential)?;
        Ok::<_, Error>(TimelinePoint {
            build_id: ds.builds[r - 1].build_id,
            history_len: r,
            trained_on: history.len(),
            importance: global_importance(&model),
        })
    })?;
    Ok(ImportanceTimeline { stride, window, points })
}
