//! CART regression trees and a bagged random forest.
//!
//! Feature importance follows the minimal-depth idea: a feature that tends to
//! split close to the root is more important. For each tree the minimal depth
//! of feature `f` is the depth (root = 0) of the shallowest node splitting on
//! `f`; trees that never split on `f` contribute their own height + 1. The
//! score is `1 / (1 + mean minimal depth)`, and features unused by every tree
//! score 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RandomSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    /// `1 / (1 + mean minimal split depth)`
    MinDepth,
    /// Total variance reduction, normalized to sum to one.
    Impurity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split, capped at `d`; `None` means
    /// `max(ceil(d / 3), 2)`. With a single candidate the choice at two
    /// remaining columns is a coin flip and depth importance stops ranking.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub importance: ImportanceKind,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            importance: ImportanceKind::MinDepth,
        }
    }
}

impl ForestParams {
    pub fn features_for(&self, d: usize) -> usize {
        self.features_per_split.unwrap_or_else(|| d.div_ceil(3).max(2)).clamp(1, d.max(1))
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Parameter(
                "n_trees and min_samples_leaf must be >= 1".into(),
            ));
        }
        if let Some(m) = self.features_per_split {
            if m == 0 {
                return Err(Error::Parameter("features_per_split must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        prediction: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Variance reduction (sum of squares) achieved by this split.
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { prediction } => return *prediction,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Depth of the deepest leaf (a single leaf has height 0).
    pub fn height(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }

    /// Shallowest split depth per feature.
    pub fn min_depths(&self, d: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; d];
        let mut stack = vec![(self, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            if let TreeNode::Split {
                feature,
                left,
                right,
                ..
            } = node
            {
                let slot = &mut out[*feature];
                *slot = Some(slot.map_or(depth, |s: usize| s.min(depth)));
                stack.push((left, depth + 1));
                stack.push((right, depth + 1));
            }
        }
        out
    }

    fn accumulate_gain(&self, acc: &mut [f64]) {
        if let TreeNode::Split {
            feature,
            gain,
            left,
            right,
            ..
        } = self
        {
            acc[*feature] += gain;
            left.accumulate_gain(acc);
            right.accumulate_gain(acc);
        }
    }
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    rng: RandomSource,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let n = idx.len();
        let (sum, sum_sq) = idx.iter().fold((0.0, 0.0), |(s, q), &i| {
            let v = self.y[i];
            (s + v, q + v * v)
        });
        let mean = sum / n as f64;
        let first = self.y[idx[0]];
        let constant = idx.iter().all(|&i| self.y[i] == first);
        if constant || depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf {
            return TreeNode::Leaf {
                prediction: if constant { first } else { mean },
            };
        }
        let parent_sse = sum_sq - sum * sum / n as f64;
        let Some(best) = self.best_split(idx, sum, parent_sse) else {
            return TreeNode::Leaf { prediction: mean };
        };
        let split_at = partition_in_place(idx, |&i| self.x[(i, best.feature)] <= best.threshold);
        let (l, r) = idx.split_at_mut(split_at);
        let left = Box::new(self.build(l, depth + 1));
        let right = Box::new(self.build(r, depth + 1));
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain: best.gain,
            left,
            right,
        }
    }

    fn best_split(&mut self, idx: &[usize], sum: f64, parent_sse: f64) -> Option<BestSplit> {
        let d = self.x.cols();
        let mut features = self.rng.sample_without_replacement(d, self.mtry);
        // ascending order makes "lowest feature index" the tie-break
        features.sort_unstable();
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for f in features {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[(i, f)], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += pairs[k].1;
                let n_left = k + 1;
                if n_left < min_leaf {
                    continue;
                }
                if n - n_left < min_leaf {
                    break;
                }
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let right_sum = sum - left_sum;
                // SSE_parent - SSE_children, with sum-of-squares terms cancelling
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64
                    - sum * sum / n as f64;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (pairs[k].0 + pairs[k + 1].0),
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * parent_sse.max(f64::MIN_POSITIVE))
    }
}

fn partition_in_place<T, F: Fn(&T) -> bool>(v: &mut [T], pred: F) -> usize {
    let mut store = 0;
    for i in 0..v.len() {
        if pred(&v[i]) {
            v.swap(i, store);
            store += 1;
        }
    }
    store
}

fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() == 0 || y.is_empty() {
        return Err(Error::EmptyInput("cannot fit a tree on zero rows".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Shape(format!(
            "X has {} rows but y has {} values",
            x.rows(),
            y.len()
        )));
    }
    Ok(())
}

fn fit_tree_on(
    x: &Matrix,
    y: &[f64],
    idx: &mut [usize],
    params: &ForestParams,
    rng: RandomSource,
) -> TreeNode {
    let mut b = TreeBuilder {
        x,
        y,
        params,
        mtry: params.features_for(x.cols()),
        rng,
    };
    b.build(idx, 0)
}

/// Fits one CART regression tree on all rows (no resampling).
pub fn fit_tree(
    x: &Matrix,
    y: &[f64],
    params: &ForestParams,
    rng: &mut RandomSource,
) -> Result<TreeNode> {
    check_xy(x, y)?;
    params.validate()?;
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    Ok(fit_tree_on(x, y, &mut idx, params, rng.derive(0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
}

/// Fits `n_trees` trees, each from its own stream derived from a base seed
/// drawn from `rng`. Tree `i` uses stream `i`, so the result does not
/// depend on how many threads fit the trees.
pub fn fit_forest(
    x: &Matrix,
    y: &[f64],
    params: &ForestParams,
    rng: &mut RandomSource,
) -> Result<RegressionForest> {
    check_xy(x, y)?;
    params.validate()?;
    let base = RandomSource::new(rng.next_u64());
    let n = x.rows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut tree_rng = base.derive(t as u64);
            let mut idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| tree_rng.below(n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_on(x, y, &mut idx, params, tree_rng)
        })
        .collect();
    Ok(RegressionForest {
        trees,
        n_features: x.cols(),
    })
}

impl RegressionForest {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(Error::Shape(format!(
                "forest trained on {} features, got {}",
                self.n_features,
                x.cols()
            )));
        }
        let k = self.trees.len() as f64;
        Ok(x.iter_rows()
            .map(|row| self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / k)
            .collect())
    }

    pub fn importance(&self, kind: ImportanceKind) -> FeatureRanking {
        let d = self.n_features;
        let importance = match kind {
            ImportanceKind::MinDepth => {
                let mut total = vec![0.0; d];
                let mut used = vec![false; d];
                for tree in &self.trees {
                    let penalty = (tree.height() + 1) as f64;
                    for (f, md) in tree.min_depths(d).into_iter().enumerate() {
                        match md {
                            Some(depth) => {
                                total[f] += depth as f64;
                                used[f] = true;
                            }
                            None => total[f] += penalty,
                        }
                    }
                }
                let k = self.trees.len() as f64;
                total
                    .iter()
                    .zip(&used)
                    .map(|(&t, &u)| if u { 1.0 / (1.0 + t / k) } else { 0.0 })
                    .collect()
            }
            ImportanceKind::Impurity => {
                let mut acc = vec![0.0; d];
                for tree in &self.trees {
                    tree.accumulate_gain(&mut acc);
                }
                let s: f64 = acc.iter().sum();
                if s > 0.0 {
                    acc.iter_mut().for_each(|v| *v /= s);
                }
                acc
            }
        };
        FeatureRanking::from_scores(importance)
    }
}

pub fn predict_forest(forest: &RegressionForest, x: &Matrix) -> Result<Vec<f64>> {
    forest.predict(x)
}

/// Minimal-depth importance of every feature.
pub fn feature_importance(forest: &RegressionForest) -> FeatureRanking {
    forest.importance(ImportanceKind::MinDepth)
}

/// Importance scores and the induced order, most important first. Equal
/// scores are ordered by ascending feature index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub importance: Vec<f64>,
    pub order: Vec<usize>,
}

impl FeatureRanking {
    pub fn from_scores(importance: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..importance.len()).collect();
        order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
        FeatureRanking { importance, order }
    }

    /// Least important feature; ties resolve to the highest index.
    pub fn least_important(&self) -> Option<usize> {
        self.order.last().copied()
    }
}
