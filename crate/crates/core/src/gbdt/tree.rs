//! Regression trees grown best-first with Newton gain over exact thresholds.

use serde::{Deserialize, Serialize};

use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::matrix::FeatureMatrix;

/// Added to hessian sums in gains and leaf values.
pub const HESSIAN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary tree stored as a node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Feature index of every internal node, in node order.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }

    /// Checks that every node is reachable exactly once from the root, that
    /// children come after parents and that feature indices are in range.
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::ModelFormat("tree without nodes".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[0] = true;
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= p {
                        return Err(Error::ModelFormat(format!("feature {feature} out of range")));
                    }
                    if !threshold.is_finite() {
                        return Err(Error::ModelFormat("non-finite threshold".into()));
                    }
                    for c in [left, right] {
                        if c <= i || c >= self.nodes.len() || seen[c] {
                            return Err(Error::ModelFormat(format!("bad child index {c} at node {i}")));
                        }
                        seen[c] = true;
                    }
                }
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(Error::ModelFormat("non-finite leaf value".into()));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::ModelFormat("unreachable node".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct GrowingLeaf {
    node: usize,
    /// Member rows sorted by value for each feature, ties by row index.
    sorted: Vec<Vec<u32>>,
    /// Member rows in ascending row order.
    rows: Vec<u32>,
    sum_g: f64,
    sum_h: f64,
    best: Option<Candidate>,
}

#[inline]
fn score(g: f64, h: f64) -> f64 {
    g * g / (h + HESSIAN_EPS)
}

fn best_split_for_feature(
    x: &FeatureMatrix,
    feature: usize,
    order: &[u32],
    gradients: &[f64],
    hessians: &[f64],
    sum_g: f64,
    sum_h: f64,
    min_leaf: usize,
) -> Option<Candidate> {
    let n = order.len();
    if n < 2 * min_leaf {
        return None;
    }
    let parent = score(sum_g, sum_h);
    let (mut gl, mut hl) = (0.0, 0.0);
    let mut best: Option<Candidate> = None;
    for i in 0..n - 1 {
        let r = order[i] as usize;
        gl += gradients[r];
        hl += hessians[r];
        let left_n = i + 1;
        if left_n < min_leaf {
            continue;
        }
        if n - left_n < min_leaf {
            break;
        }
        let a = x.get(r, feature);
        let b = x.get(order[i + 1] as usize, feature);
        if a >= b {
            continue;
        }
        let gain = score(gl, hl) + score(sum_g - gl, sum_h - hl) - parent;
        if gain > best.map_or(0.0, |c| c.gain) {
            let mid = a + (b - a) / 2.0;
            let threshold = if mid < b { mid } else { a };
            best = Some(Candidate {
                feature,
                threshold,
                gain,
            });
        }
    }
    best
}

fn find_best(
    leaf: &GrowingLeaf,
    x: &FeatureMatrix,
    gradients: &[f64],
    hessians: &[f64],
    min_leaf: usize,
    par: Parallelism,
) -> Option<Candidate> {
    let per_feature = exec::map_range(par, x.n_cols(), |f| {
        best_split_for_feature(x, f, &leaf.sorted[f], gradients, hessians, leaf.sum_g, leaf.sum_h, min_leaf)
    });
    // sequential reduce: lowest feature index wins ties
    per_feature.into_iter().flatten().fold(None, |acc: Option<Candidate>, c| match acc {
        Some(a) if a.gain >= c.gain => Some(a),
        _ => Some(c),
    })
}

fn leaf_sums(rows: &[u32], gradients: &[f64], hessians: &[f64]) -> (f64, f64) {
    rows.iter().fold((0.0, 0.0), |(g, h), &r| {
        (g + gradients[r as usize], h + hessians[r as usize])
    })
}

/// Fits one tree to ascent-direction gradients; leaf value = sum(g) / (sum(h) + eps).
pub fn fit_tree(
    x: &FeatureMatrix,
    gradients: &[f64],
    hessians: &[f64],
    cfg: &TrainingConfig,
) -> Result<RegressionTree> {
    fit_tree_with(x, gradients, hessians, cfg, Parallelism::default())
}

pub fn fit_tree_with(
    x: &FeatureMatrix,
    gradients: &[f64],
    hessians: &[f64],
    cfg: &TrainingConfig,
    par: Parallelism,
) -> Result<RegressionTree> {
    let n = x.n_rows();
    if n == 0 {
        return Err(Error::InvalidInput("cannot fit a tree on zero rows".into()));
    }
    for len in [gradients.len(), hessians.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, actual: len });
        }
    }
    let min_leaf = cfg.min_data_in_leaf.max(1);
    let rows: Vec<u32> = (0..n as u32).collect();
    let sorted = exec::map_range(par, x.n_cols(), |f| {
        let mut idx = rows.clone();
        idx.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)).then(a.cmp(&b)));
        idx
    });
    let (sum_g, sum_h) = leaf_sums(&rows, gradients, hessians);
    let mut root = GrowingLeaf {
        node: 0,
        sorted,
        rows,
        sum_g,
        sum_h,
        best: None,
    };
    root.best = find_best(&root, x, gradients, hessians, min_leaf, par);

    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut leaves = vec![root];
    while leaves.len() < cfg.num_leaves {
        let mut pick: Option<(usize, f64)> = None;
        for (i, leaf) in leaves.iter().enumerate() {
            if let Some(c) = leaf.best {
                if pick.is_none_or(|(_, g)| c.gain > g) {
                    pick = Some((i, c.gain));
                }
            }
        }
        let Some((i, _)) = pick else { break };
        let leaf = leaves.remove(i);
        let cand = leaf.best.expect("picked leaf has a split");
        let goes_left = |r: u32| x.get(r as usize, cand.feature) <= cand.threshold;

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| goes_left(r));
        let parts = exec::map(par, &leaf.sorted, |order| {
            order.iter().partition::<Vec<u32>, _>(|&&r| goes_left(r))
        });
        let (left_sorted, right_sorted): (Vec<_>, Vec<_>) = parts.into_iter().unzip();

        let left_id = nodes.len();
        let right_id = left_id + 1;
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: cand.feature,
            threshold: cand.threshold,
            left: left_id,
            right: right_id,
        };
        for (node, rows, sorted) in [(left_id, left_rows, left_sorted), (right_id, right_rows, right_sorted)] {
            let (sum_g, sum_h) = leaf_sums(&rows, gradients, hessians);
            let mut child = GrowingLeaf {
                node,
                sorted,
                rows,
                sum_g,
                sum_h,
                best: None,
            };
            child.best = find_best(&child, x, gradients, hessians, min_leaf, par);
            leaves.push(child);
        }
        // keep leaves in node order so ties resolve to the earliest node
        leaves.sort_by_key(|l| l.node);
    }
    for leaf in &leaves {
        nodes[leaf.node] = Node::Leaf {
            value: leaf.sum_g / (leaf.sum_h + HESSIAN_EPS),
        };
    }
    Ok(RegressionTree { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(num_leaves: usize, min_leaf: usize) -> TrainingConfig {
        TrainingConfig {
            num_leaves,
            min_data_in_leaf: min_leaf,
            ..TrainingConfig::default()
        }
    }

    fn matrix(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows[0].len(), rows).unwrap()
    }

    #[test]
    fn zero_gradients_give_zero_leaf() {
        let x = matrix(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let t = fit_tree(&x, &[0.0; 4], &[1.0; 4], &cfg(31, 1)).unwrap();
        assert_eq!(t, RegressionTree::leaf(0.0));
    }

    #[test]
    fn separating_binary_feature() {
        // Enumerated by hand: feature 1 is noise (the only threshold at 0.5
        // mixes signs, gain 0); feature 0 at 0.5 gives 2 + 2 - 0 = 4.
        let x = matrix(&[&[1.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], &[0.0, 1.0]]);
        let g = [1.0, 1.0, -1.0, -1.0];
        let t = fit_tree(&x, &g, &[1.0; 4], &cfg(2, 1)).unwrap();
        match t.nodes[0] {
            Node::Split { feature, threshold, left, right } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.5);
                assert!((t.predict(&[0.0, 0.0]) + 1.0).abs() < 1e-9);
                assert!((t.predict(&[1.0, 0.0]) - 1.0).abs() < 1e-9);
                assert!(matches!(t.nodes[left], Node::Leaf { value } if value < 0.0));
                assert!(matches!(t.nodes[right], Node::Leaf { value } if value > 0.0));
            }
            _ => panic!("expected root split"),
        }
        assert_eq!(t.leaf_count(), 2);
    }

    #[test]
    fn constant_features_single_leaf() {
        let x = matrix(&[&[3.0, 1.0], &[3.0, 1.0], &[3.0, 1.0]]);
        let g = [0.5, -2.0, 0.25];
        let t = fit_tree(&x, &g, &[1.0, 1.0, 1.0], &cfg(31, 1)).unwrap();
        let expected = (0.5 - 2.0 + 0.25) / (3.0 + HESSIAN_EPS);
        assert_eq!(t, RegressionTree::leaf(expected));
    }

    #[test]
    fn min_data_blocks_small_nodes() {
        let x = matrix(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let t = fit_tree(&x, &[1.0, 1.0, -1.0, -1.0], &[1.0; 4], &cfg(31, 3)).unwrap();
        assert_eq!(t.leaf_count(), 1);
    }

    #[test]
    fn rejects_bad_lengths() {
        let x = matrix(&[&[0.0], &[1.0]]);
        assert!(fit_tree(&x, &[1.0], &[1.0, 1.0], &cfg(4, 1)).is_err());
    }

    #[test]
    fn validate_catches_cycles() {
        let bad = RegressionTree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 0.0, left: 1, right: 1 },
                Node::Leaf { value: 0.0 },
            ],
        };
        assert!(bad.validate(1).is_err());
        let out_of_range = RegressionTree {
            nodes: vec![
                Node::Split { feature: 3, threshold: 0.0, left: 1, right: 2 },
                Node::Leaf { value: 0.0 },
                Node::Leaf { value: 0.0 },
            ],
        };
        assert!(out_of_range.validate(2).is_err());
        assert!(out_of_range.validate(4).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn well_formed_and_mode_independent(
            data in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), -1.0f64..1.0, 0.0f64..1.0), 1..80),
            leaves in 2usize..12,
            min_leaf in 1usize..6,
        ) {
            let rows: Vec<Vec<f64>> = data.iter().map(|d| d.0.iter().map(|v| (v * 4.0).round() / 4.0).collect()).collect();
            let g: Vec<f64> = data.iter().map(|d| d.1).collect();
            let h: Vec<f64> = data.iter().map(|d| d.2).collect();
            let x = FeatureMatrix::from_rows(3, &rows).unwrap();
            let c = cfg(leaves, min_leaf);
            let seq = fit_tree_with(&x, &g, &h, &c, Parallelism::Sequential).unwrap();
            let par = fit_tree_with(&x, &g, &h, &c, Parallelism::Parallel).unwrap();
            prop_assert_eq!(&seq, &par);
            prop_assert!(seq.validate(3).is_ok());
            prop_assert!(seq.leaf_count() <= leaves);
            // every leaf holds at least min_leaf training rows
            let mut counts = std::collections::HashMap::new();
            for r in &rows {
                let mut i = 0;
                while let Node::Split { feature, threshold, left, right } = seq.nodes[i] {
                    i = if r[feature] <= threshold { left } else { right };
                }
                *counts.entry(i).or_insert(0usize) += 1;
            }
            if seq.leaf_count() > 1 {
                prop_assert!(counts.values().all(|&c| c >= min_leaf));
            }
        }
    }
}
