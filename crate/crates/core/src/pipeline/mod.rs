//! End-to-end experiments and cross-build analyses.
//!
//! Every entry point takes an [`ExperimentConfig`]. All randomness derives
//! from `training.seed`, and the config digest covers everything that can
//! change an output byte.

mod drift;
mod experiment;
mod report;
mod sweep;
mod timeline;
mod trajectory;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use drift::{drift_from_explanations, explanation_drift, DriftPoint, DriftSeries};
pub use experiment::{run_experiment, BackgroundPolicy, ExperimentReport, Outcome, Selection, SelectedTest};
pub use report::{emit_report, write_atomic, ReportFormat};
pub use sweep::{sweep_builds, SkippedBuild, SweepRow, SweepTable};
pub use timeline::{importance_timeline, ImportanceTimeline, TimelinePoint};
pub use trajectory::{rank_trajectory, LabelSource, TrajectoryCell, TrajectoryRow, TrajectoryTable};

use crate::dataset::{make_experiment_split, BuildId, Dataset, ExperimentSplit, GradingMode};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::explain::BackgroundSet;
use crate::gbdt::{train_with, LtrModel, TrainingConfig, TRAINING_KEYS};
use crate::kv::KvMap;

const PIPELINE_KEYS: [&str; 3] = ["grading", "background_max_rows", "min_history"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub training: TrainingConfig,
    pub grading: GradingMode,
    /// Break Down background: training records subsampled to at most this
    /// many rows (0 keeps all).
    pub background_max_rows: usize,
    /// A build needs this many predecessors to get a model.
    pub min_history: usize,
    /// Affects wall time only, so it is not part of the digest.
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            grading: GradingMode::Binary,
            background_max_rows: 500,
            min_history: 5,
            parallelism: Parallelism::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a `key=value` file; keys not present keep their defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let kv = KvMap::parse(text)?;
        let known: Vec<&str> = TRAINING_KEYS.iter().chain(&PIPELINE_KEYS).copied().collect();
        kv.reject_unknown(&known)?;
        let mut cfg = Self::default();
        cfg.training.apply_kv(&kv)?;
        if let Some(v) = kv.get_str("grading") {
            cfg.grading = v.parse()?;
        }
        if let Some(v) = kv.get("background_max_rows")? {
            cfg.background_max_rows = v;
        }
        if let Some(v) = kv.get("min_history")? {
            cfg.min_history = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key, fixed order.
    pub fn to_kv_text(&self) -> String {
        format!(
            "{}grading={}\nbackground_max_rows={}\nmin_history={}\n",
            self.training.to_kv_text(),
            self.grading,
            self.background_max_rows,
            self.min_history
        )
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if let GradingMode::Graded(g) = self.grading {
            if g < 2 {
                return Err(Error::InvalidConfig("graded mode needs at least 2 levels".into()));
            }
        }
        if self.min_history < 2 {
            // one build for training plus one for validation
            return Err(Error::InvalidConfig("min_history must be at least 2".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.training.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.training.seed
    }
}

/// A trained model together with the split it came from.
#[derive(Debug, Clone)]
pub struct TrainedBuild {
    pub split: ExperimentSplit,
    pub model: LtrModel,
}

impl TrainedBuild {
    /// Background drawn from the training partition under `cfg`.
    pub fn background(&self, cfg: &ExperimentConfig) -> Result<BackgroundSet> {
        BackgroundSet::from_builds(&self.split.train, self.split.schema.len(), cfg.background_max_rows, cfg.seed())
    }
}

/// Reasons a build does not get its own model, or `None` if it does.
pub(crate) fn ineligibility(index: usize, cfg: &ExperimentConfig) -> Option<String> {
    (index < cfg.min_history).then(|| format!("{index} predecessor build(s), need {}", cfg.min_history))
}

/// Split and train for `target` with the given execution mode.
pub fn train_for_build(ds: &Dataset, target: BuildId, cfg: &ExperimentConfig, par: Parallelism) -> Result<TrainedBuild> {
    cfg.validate()?;
    let idx = ds.build_index(target)?;
    if let Some(reason) = ineligibility(idx, cfg) {
        return Err(Error::InsufficientTraining(format!("build {target}: {reason}")));
    }
    let split = make_experiment_split(ds, target)?;
    let model = train_with(&split, cfg.grading, &cfg.training, par)?;
    Ok(TrainedBuild { split, model })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip_and_digest() {
        let cfg = ExperimentConfig::from_kv_text("seed=7\ngrading=graded:3\nmin_history=6\n").unwrap();
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.grading, GradingMode::Graded(3));
        let back = ExperimentConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_ne!(cfg.digest(), cfg.clone().with_seed(8).digest());
        let mut seq = cfg.clone();
        seq.parallelism = Parallelism::Sequential;
        assert_eq!(seq.digest(), cfg.digest());
        assert_eq!(cfg.digest().len(), 64);
    }

    #[test]
    fn rejects_bad_config() {
        for text in ["bogus=1", "min_history=1", "grading=graded:1", "learning_rate=0", "seed=x"] {
            let err = ExperimentConfig::from_kv_text(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }
}
