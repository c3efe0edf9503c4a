//! Bagged regression forest built from CART-style trees.
//!
//! Each tree trains on its own bootstrap resample and greedily splits on
//! the (feature, threshold) pair with the largest reduction in total sum of
//! squared errors, with thresholds at midpoints between consecutive
//! distinct sorted feature values. Predictions are the unweighted mean over
//! trees. Everything is deterministic given the config seed: tree `i` draws
//! from its own generator seeded `seed + i`, so the forest is identical no
//! matter how many threads build it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::WindowedDataset;
use crate::rng::seeded_rng;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("cannot fit a forest on an empty dataset")]
    EmptyDataset,
    #[error("feature width {got} does not match training width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
}

/// How many candidate features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    /// Every feature ("auto"/"none" in common grids).
    All,
    /// `max(1, floor(sqrt(d)))` features.
    Sqrt,
    /// `max(1, floor(log2(d)))` features.
    Log2,
}

impl MaxFeatures {
    pub fn subset_size(&self, n_features: usize) -> usize {
        match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::Log2 => ((n_features as f64).log2().floor() as usize).max(1),
        }
    }

    /// Parse grid-style names: auto/none/all, sqrt, log2 (case-insensitive).
    pub fn parse(name: &str) -> Option<MaxFeatures> {
        match name.to_ascii_lowercase().as_str() {
            "all" | "auto" | "none" => Some(MaxFeatures::All),
            "sqrt" => Some(MaxFeatures::Sqrt),
            "log2" => Some(MaxFeatures::Log2),
            _ => None,
        }
    }
}

impl std::fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaxFeatures::All => write!(f, "auto"),
            MaxFeatures::Sqrt => write!(f, "sqrt"),
            MaxFeatures::Log2 => write!(f, "log2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// Maximum tree depth in node levels, root at depth 1; `None` = unlimited.
    /// `Some(1)` forbids any split.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// Diagnostic switch: `false` grows every tree on the full training set.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: None,
            max_features: MaxFeatures::All,
            min_samples_leaf: 1,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_estimators < 1 {
            return Err(ForestError::InvalidConfig("n_estimators must be >= 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(ForestError::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidConfig("min_samples_split must be >= 2".into()));
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::InvalidConfig("max_depth must be >= 1 when set".into()));
        }
        Ok(())
    }
}

/// A regression tree node: an internal split or a leaf prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        /// Mean of the training targets that reached this leaf.
        prediction: f64,
        n_samples: usize,
    },
    Split {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { prediction, .. } => *prediction,
            TreeNode::Split { feature_index, threshold, left, right } => {
                if row[*feature_index] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn for_each_leaf(&self, f: &mut impl FnMut(f64, usize)) {
        match self {
            TreeNode::Leaf { prediction, n_samples } => f(*prediction, *n_samples),
            TreeNode::Split { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub config: ForestConfig,
    pub n_features: usize,
    /// Per-tree indices that did NOT enter the bootstrap sample (diagnostic).
    pub oob_indices: Vec<Vec<usize>>,
}

/// Draw `n` indices uniformly with replacement from `0..n`.
pub fn bootstrap_sample(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Best SSE-reduction split over the given candidate features.
///
/// Returns `(feature_index, threshold, sse_reduction)` for the split
/// maximizing the reduction in total sum of squared errors, or `None` when
/// no legal split improves SSE. Ties break to the lowest feature index,
/// then the lowest threshold.
pub fn best_split(
    features: &[Vec<f64>],
    targets: &[f64],
    candidate_features: &[usize],
    min_samples_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let idx: Vec<usize> = (0..targets.len()).collect();
    best_split_indexed(features, targets, &idx, candidate_features, min_samples_leaf)
}

// Core split search over a node's sample indices. Candidate features must be
// sorted ascending so the strict `>` comparison realizes the tie-break.
fn best_split_indexed(
    features: &[Vec<f64>],
    targets: &[f64],
    idx: &[usize],
    candidate_features: &[usize],
    min_samples_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let n = idx.len();
    if n < 2 || candidate_features.is_empty() {
        return None;
    }
    debug_assert!(candidate_features.windows(2).all(|w| w[0] < w[1]));

    let sum_y: f64 = idx.iter().map(|&i| targets[i]).sum();
    let sum_y2: f64 = idx.iter().map(|&i| targets[i] * targets[i]).sum();
    let sse_parent = sum_y2 - sum_y * sum_y / n as f64;

    let mut best: Option<(usize, f64, f64)> = None;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for &feature in candidate_features {
        order.clear();
        order.extend_from_slice(idx);
        order.sort_by(|&a, &b| {
            features[a][feature]
                .partial_cmp(&features[b][feature])
                .unwrap()
                .then(a.cmp(&b))
        });

        let mut left_sum = 0.0;
        let mut left_sum2 = 0.0;
        for p in 1..n {
            let prev = features[order[p - 1]][feature];
            let y_prev = targets[order[p - 1]];
            left_sum += y_prev;
            left_sum2 += y_prev * y_prev;

            let cur = features[order[p]][feature];
            if prev == cur {
                continue; // not a boundary between distinct values
            }
            if p < min_samples_leaf || n - p < min_samples_leaf {
                continue;
            }
            let right_sum = sum_y - left_sum;
            let right_sum2 = sum_y2 - left_sum2;
            let sse_left = left_sum2 - left_sum * left_sum / p as f64;
            let sse_right = right_sum2 - right_sum * right_sum / (n - p) as f64;
            let gain = sse_parent - sse_left - sse_right;
            if gain > 0.0 && best.is_none_or(|(_, _, g)| gain > g) {
                best = Some((feature, (prev + cur) / 2.0, gain));
            }
        }
    }
    best
}

/// Fit a bagged forest on a windowed dataset.
pub fn fit_forest(data: &WindowedDataset, config: &ForestConfig) -> Result<ForestModel, ForestError> {
    config.validate()?;
    let n = data.n_samples();
    if n == 0 {
        return Err(ForestError::EmptyDataset);
    }
    let n_features = data.window_size;

    let built: Vec<(TreeNode, Vec<usize>)> = (0..config.n_estimators)
        .into_par_iter()
        .map(|tree_index| {
            let mut rng = seeded_rng(config.seed.wrapping_add(tree_index as u64));
            let sample = if config.bootstrap {
                bootstrap_sample(n, &mut rng)
            } else {
                (0..n).collect()
            };
            let mut in_bag = vec![false; n];
            for &i in &sample {
                in_bag[i] = true;
            }
            let oob = (0..n).filter(|&i| !in_bag[i]).collect();
            let tree = grow_tree(data, &sample, 1, config, n_features, &mut rng);
            (tree, oob)
        })
        .collect();

    let (trees, oob_indices) = built.into_iter().unzip();
    Ok(ForestModel {
        trees,
        config: config.clone(),
        n_features,
        oob_indices,
    })
}

fn grow_tree(
    data: &WindowedDataset,
    idx: &[usize],
    depth: usize,
    config: &ForestConfig,
    n_features: usize,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let n = idx.len();
    let mean = idx.iter().map(|&i| data.targets[i]).sum::<f64>() / n as f64;
    let leaf = TreeNode::Leaf { prediction: mean, n_samples: n };

    if n < config.min_samples_split {
        return leaf;
    }
    if let Some(limit) = config.max_depth {
        if depth >= limit {
            return leaf;
        }
    }
    let first = data.targets[idx[0]];
    if idx.iter().all(|&i| data.targets[i] == first) {
        return leaf; // pure node
    }

    let candidates = sample_features(n_features, config.max_features, rng);
    let Some((feature, threshold, _gain)) = best_split_indexed(
        &data.features,
        &data.targets,
        idx,
        &candidates,
        config.min_samples_leaf,
    ) else {
        return leaf;
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| data.features[i][feature] <= threshold);
    let left = grow_tree(data, &left_idx, depth + 1, config, n_features, rng);
    let right = grow_tree(data, &right_idx, depth + 1, config, n_features, rng);
    TreeNode::Split {
        feature_index: feature,
        threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

// Fresh random feature subset for one node, returned sorted ascending.
// When every feature is in play no randomness is consumed.
fn sample_features(n_features: usize, max_features: MaxFeatures, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = max_features.subset_size(n_features);
    if k >= n_features {
        return (0..n_features).collect();
    }
    let mut pool: Vec<usize> = (0..n_features).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n_features);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Predict each row as the unweighted mean of all tree predictions.
pub fn predict_forest(model: &ForestModel, features: &[Vec<f64>]) -> Result<Vec<f64>, ForestError> {
    let mut out = Vec::with_capacity(features.len());
    for row in features {
        out.push(predict_forest_row(model, row)?);
    }
    Ok(out)
}

pub fn predict_forest_row(model: &ForestModel, row: &[f64]) -> Result<f64, ForestError> {
    if row.len() != model.n_features {
        return Err(ForestError::WidthMismatch {
            expected: model.n_features,
            got: row.len(),
        });
    }
    let sum: f64 = model.trees.iter().map(|t| t.predict(row)).sum();
    Ok(sum / model.trees.len() as f64)
}
