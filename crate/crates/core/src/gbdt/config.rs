use serde::{Deserialize, Serialize};

use super::Truncation;
use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Boosting hyper-parameters. Defaults follow the usual LightGBM defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub num_iterations: usize,
    pub learning_rate: f64,
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub sigma: f64,
    pub eval_every: usize,
    pub ndcg_truncation: Truncation,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            num_iterations: 100,
            learning_rate: 0.1,
            num_leaves: 31,
            min_data_in_leaf: 20,
            sigma: 1.0,
            eval_every: 10,
            ndcg_truncation: Truncation::Full,
            seed: 0,
        }
    }
}

pub(crate) const TRAINING_KEYS: [&str; 8] = [
    "num_iterations",
    "learning_rate",
    "num_leaves",
    "min_data_in_leaf",
    "sigma",
    "eval_every",
    "ndcg_truncation",
    "seed",
];

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_iterations < 1 {
            return bad("num_iterations must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.num_leaves < 2 {
            return bad("num_leaves must be at least 2");
        }
        if self.eval_every < 1 {
            return bad("eval_every must be at least 1");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        Ok(())
    }

    /// Overrides fields present in `kv`; other keys are left for the caller.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        if let Some(v) = kv.get("num_iterations")? {
            self.num_iterations = v;
        }
        if let Some(v) = kv.get("learning_rate")? {
            self.learning_rate = v;
        }
        if let Some(v) = kv.get("num_leaves")? {
            self.num_leaves = v;
        }
        if let Some(v) = kv.get("min_data_in_leaf")? {
            self.min_data_in_leaf = v;
        }
        if let Some(v) = kv.get("sigma")? {
            self.sigma = v;
        }
        if let Some(v) = kv.get("eval_every")? {
            self.eval_every = v;
        }
        if let Some(v) = kv.get_str("ndcg_truncation") {
            self.ndcg_truncation = v.parse()?;
        }
        if let Some(v) = kv.get("seed")? {
            self.seed = v;
        }
        self.validate()
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "num_iterations={}\nlearning_rate={}\nnum_leaves={}\nmin_data_in_leaf={}\nsigma={}\neval_every={}\nndcg_truncation={}\nseed={}\n",
            self.num_iterations,
            self.learning_rate,
            self.num_leaves,
            self.min_data_in_leaf,
            self.sigma,
            self.eval_every,
            self.ndcg_truncation,
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainingConfig {
            ndcg_truncation: Truncation::At(10),
            seed: 42,
            ..TrainingConfig::default()
        };
        cfg.learning_rate = 0.05;
        let mut back = TrainingConfig::default();
        back.apply_kv(&KvMap::parse(&cfg.to_kv_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invariants() {
        assert!(TrainingConfig::default().validate().is_ok());
        for cfg in [
            TrainingConfig { num_iterations: 0, ..Default::default() },
            TrainingConfig { learning_rate: 0.0, ..Default::default() },
            TrainingConfig { learning_rate: 1.5, ..Default::default() },
            TrainingConfig { num_leaves: 1, ..Default::default() },
            TrainingConfig { eval_every: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
