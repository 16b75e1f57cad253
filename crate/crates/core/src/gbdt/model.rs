use serde::{Deserialize, Serialize};

use super::{RegressionTree, TrainingConfig};
use crate::dataset::FeatureSchema;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Validation NDCG recorded at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub ndcg: f64,
}

/// Boosted tree ensemble. `predict` sums `learning_rate * tree(x)` over the
/// first `best_iteration` trees; there is no separate intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtrModel {
    pub schema: FeatureSchema,
    pub config: TrainingConfig,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub history: Vec<EvalPoint>,
    pub best_iteration: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    schema_hash: String,
    #[serde(flatten)]
    model: LtrModel,
}

impl LtrModel {
    /// An ensemble with every tree active.
    pub fn from_trees(schema: FeatureSchema, learning_rate: f64, trees: Vec<RegressionTree>) -> Self {
        let best_iteration = trees.len();
        Self {
            schema,
            config: TrainingConfig {
                learning_rate,
                num_iterations: best_iteration.max(1),
                ..TrainingConfig::default()
            },
            learning_rate,
            trees,
            history: Vec::new(),
            best_iteration,
        }
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Trees used for prediction.
    pub fn active_trees(&self) -> &[RegressionTree] {
        &self.trees[..self.best_iteration.min(self.trees.len())]
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::LengthMismatch {
                expected: self.n_features(),
                actual: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.active_trees()
            .iter()
            .map(|t| self.learning_rate * t.predict(x))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            schema_hash: self.schema.digest(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses and validates a model document: version, schema hash, tree shape.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {version:?}, expected {MODEL_FORMAT_VERSION}"
            )));
        }
        let doc: ModelDocument = serde_json::from_value(raw)?;
        let model = doc.model;
        if doc.schema_hash != model.schema.digest() {
            return Err(Error::ModelFormat("schema hash does not match feature names".into()));
        }
        if model.best_iteration > model.trees.len() {
            return Err(Error::ModelFormat("best_iteration beyond tree count".into()));
        }
        for t in &model.trees {
            t.validate(model.n_features())?;
        }
        Ok(model)
    }

    /// Errors unless `schema` has the same features in the same order.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if &self.schema != schema {
            return Err(Error::SchemaMismatch(format!(
                "model has {} features, data has {} (or names differ)",
                self.schema.len(),
                schema.len()
            )));
        }
        Ok(())
    }
}
