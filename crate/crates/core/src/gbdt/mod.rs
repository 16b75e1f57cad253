//! LambdaMART: lambda gradients, Newton-boosted regression trees, NDCG,
//! prediction, ranking and split-count importance.

mod config;
mod lambda;
mod model;
mod ndcg;
mod rank;
mod train;
mod tree;

pub use config::TrainingConfig;
pub(crate) use config::TRAINING_KEYS;
pub use lambda::{compute_lambdas, Lambdas};
pub use model::{EvalPoint, LtrModel, MODEL_FORMAT_VERSION};
pub use ndcg::{ndcg, Truncation};
pub use rank::{
    global_importance, median_rank_error, rank_build, rank_by_scores, GlobalImportance, ImportanceEntry, RankEntry,
    Ranking,
};
pub use train::{train, train_partitions, train_with};
pub use tree::{fit_tree, fit_tree_with, Node, RegressionTree, HESSIAN_EPS};
