//! Classification trees with axis-aligned `x_j < T` splits chosen by Gini
//! impurity, bagged into a random forest.
//!
//! Trees are stored as flat pre-order node arrays. Each tree is grown from
//! its own ChaCha stream selected by `(master_seed, tree_index)`, so a forest
//! is a pure function of its data and configuration whatever the thread
//! schedule.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("gini impurity of an empty node")]
    EmptyNode,
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("feature mismatch: '{0}' is not available")]
    FeatureMismatch(String),
    #[error("invalid forest document: {0}")]
    Document(String),
}

/// Gini impurity `2q(1−q)` of a node with the given class counts.
pub fn gini(count_neg: usize, count_pos: usize) -> Result<f64, ForestError> {
    let total = count_neg + count_pos;
    if total == 0 {
        return Err(ForestError::EmptyNode);
    }
    let q = count_pos as f64 / total as f64;
    Ok(2.0 * q * (1.0 - q))
}

/// Best axis-aligned split of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split<T> {
    pub feature: usize,
    pub threshold: T,
    /// Size-weighted child impurity `Σ (n_c/n)·gini_c`.
    pub impurity: f64,
}

/// Size-weighted child impurity as the exact fraction
/// `(L0·L1·nR + R0·R1·nL) / (nL·nR)`, scaled by `2/n` when converted.
#[derive(Debug, Clone, Copy)]
struct Cost {
    num: u128,
    den: u128,
}

impl Cost {
    fn new(l0: usize, l1: usize, r0: usize, r1: usize) -> Self {
        let (nl, nr) = ((l0 + l1) as u128, (r0 + r1) as u128);
        Self {
            num: (l0 as u128) * (l1 as u128) * nr + (r0 as u128) * (r1 as u128) * nl,
            den: nl * nr,
        }
    }

    fn lt(&self, other: &Self) -> bool {
        self.num * other.den < other.num * self.den
    }

    fn weighted_gini(&self, n: usize) -> f64 {
        2.0 * self.num as f64 / self.den as f64 / n as f64
    }
}

/// Exhaustive split search over `candidates` on the rows listed in `rows`
/// (indices into `data`, repeats allowed).
///
/// Thresholds are midpoints between consecutive distinct values. Ties are
/// broken by the lowest feature index, then the lowest threshold. Returns
/// `None` when every candidate feature is constant on `rows`.
pub fn best_split<T: Scalar>(
    data: &Dataset<T>,
    rows: &[usize],
    candidates: &[usize],
) -> Option<Split<T>> {
    if rows.len() < 2 {
        return None;
    }
    let total_pos = rows.iter().filter(|&&i| data.label(i) == 1).count();
    let total_neg = rows.len() - total_pos;

    let mut features = candidates.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<(usize, T, Cost)> = None;
    let mut column: Vec<(T, u8)> = Vec::with_capacity(rows.len());
    for &j in &features {
        column.clear();
        column.extend(rows.iter().map(|&i| (data.value(i, j), data.label(i))));
        column.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

        let (mut l0, mut l1) = (0usize, 0usize);
        for k in 0..column.len() - 1 {
            if column[k].1 == 1 {
                l1 += 1;
            } else {
                l0 += 1;
            }
            let (lo, hi) = (column[k].0, column[k + 1].0);
            if lo == hi {
                continue;
            }
            let cost = Cost::new(l0, l1, total_neg - l0, total_pos - l1);
            if best.as_ref().map_or(true, |(_, _, b)| cost.lt(b)) {
                let mut threshold = (lo + hi) * T::lit(0.5);
                if !(threshold > lo) {
                    threshold = hi;
                }
                best = Some((j, threshold, cost));
            }
        }
    }
    best.map(|(feature, threshold, cost)| Split {
        feature,
        threshold,
        impurity: cost.weighted_gini(rows.len()),
    })
}

/// One node of a flattened tree. Leaves have no feature, threshold or
/// children; every node keeps the class counts of the rows that reached it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Node<T> {
    pub feature: Option<usize>,
    pub threshold: Option<T>,
    pub n0: usize,
    pub n1: usize,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

impl<T> Node<T> {
    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }

    /// Leaf vote: majority class, ties vote positive.
    pub fn vote(&self) -> u8 {
        u8::from(self.n1 >= self.n0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", transparent)]
pub struct DecisionTree<T> {
    /// Pre-order; index 0 is the root.
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> DecisionTree<T> {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        let mut depth = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            depth = depth.max(d);
            let node = &self.nodes[i];
            stack.extend(node.left.map(|c| (c, d + 1)));
            stack.extend(node.right.map(|c| (c, d + 1)));
        }
        depth
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[T]) -> usize {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match (node.feature, node.threshold) {
                (Some(j), Some(t)) => {
                    i = if x[j] < t {
                        node.left.expect("split node has a left child")
                    } else {
                        node.right.expect("split node has a right child")
                    };
                }
                _ => return i,
            }
        }
    }

    pub fn vote(&self, x: &[T]) -> u8 {
        self.nodes[self.leaf_index(x)].vote()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features drawn at each node; `None` means `floor(sqrt(p))`.
    pub mtry: Option<usize>,
    /// Bootstrap sample size; `None` means `n`.
    pub bootstrap_size: Option<usize>,
    /// Nodes with at most this many rows are not split.
    pub min_node_size: usize,
    pub master_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            bootstrap_size: None,
            min_node_size: 1,
            master_seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig(
                "n_trees must be at least 1".into(),
            ));
        }
        let mtry = self.resolved_mtry(p);
        if mtry == 0 || mtry > p {
            return Err(ForestError::InvalidConfig(format!(
                "mtry must lie in [1, {p}], got {mtry}"
            )));
        }
        if self.bootstrap_size == Some(0) || n == 0 {
            return Err(ForestError::InvalidConfig(
                "bootstrap sample would be empty".into(),
            ));
        }
        if self.min_node_size == 0 {
            return Err(ForestError::InvalidConfig(
                "min_node_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Independent random stream of tree `tree_index`.
    pub fn tree_rng(&self, tree_index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(tree_index as u64);
        rng
    }
}

/// Grows one unpruned tree on `rows` (indices into `data`, with repeats).
///
/// At each node `mtry` features are drawn without replacement and searched
/// for the best split. If none of them separates the rows, the remaining
/// features are searched too, so a leaf is impure only when all of its rows
/// share one feature vector (or it is no larger than `min_node_size`).
pub fn grow_tree<T: Scalar>(
    data: &Dataset<T>,
    rows: Vec<usize>,
    config: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> DecisionTree<T> {
    let p = data.n_features();
    let mtry = config.resolved_mtry(p).min(p);
    let mut nodes: Vec<Node<T>> = Vec::new();
    // (rows, parent index, is_left)
    let mut stack: Vec<(Vec<usize>, Option<(usize, bool)>)> = vec![(rows, None)];

    while let Some((rows, parent)) = stack.pop() {
        let n1 = rows.iter().filter(|&&i| data.label(i) == 1).count();
        let n0 = rows.len() - n1;
        let index = nodes.len();
        if let Some((parent, is_left)) = parent {
            if is_left {
                nodes[parent].left = Some(index);
            } else {
                nodes[parent].right = Some(index);
            }
        }
        let mut node = Node {
            feature: None,
            threshold: None,
            n0,
            n1,
            left: None,
            right: None,
        };

        let splittable = n0 > 0 && n1 > 0 && rows.len() > config.min_node_size;
        let split = if splittable {
            let drawn = index::sample(rng, p, mtry).into_vec();
            best_split(data, &rows, &drawn).or_else(|| {
                let rest: Vec<usize> = (0..p).filter(|j| !drawn.contains(j)).collect();
                best_split(data, &rows, &rest)
            })
        } else {
            None
        };

        match split {
            Some(s) => {
                let (left, right): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| data.value(i, s.feature) < s.threshold);
                node.feature = Some(s.feature);
                node.threshold = Some(s.threshold);
                nodes.push(node);
                stack.push((right, Some((index, false))));
                stack.push((left, Some((index, true))));
            }
            None => nodes.push(node),
        }
    }
    DecisionTree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ForestModel<T> {
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    pub trees: Vec<DecisionTree<T>>,
    /// Per tree, how many times each training row was drawn.
    pub inbag: Vec<Vec<u32>>,
}

/// Fits `config.n_trees` trees, each on its own bootstrap sample drawn with
/// replacement. Trees are grown in parallel.
pub fn fit_forest<T: Scalar>(
    data: &Dataset<T>,
    config: &ForestConfig,
) -> Result<ForestModel<T>, ForestError> {
    let n = data.n_rows();
    config.validate(n, data.n_features())?;
    let size = config.bootstrap_size.unwrap_or(n);

    let grown: Vec<(DecisionTree<T>, Vec<u32>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = config.tree_rng(t);
            let mut counts = vec![0u32; n];
            let rows: Vec<usize> = (0..size)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    counts[i] += 1;
                    i
                })
                .collect();
            (grow_tree(data, rows, config, &mut rng), counts)
        })
        .collect();
    let (trees, inbag) = grown.into_iter().unzip();
    Ok(ForestModel {
        config: config.clone(),
        feature_names: data.column_names().to_vec(),
        trees,
        inbag,
    })
}

impl<T: Scalar> ForestModel<T> {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Fraction of trees voting positive for a row in training column order.
    pub fn predict_proba(&self, x: &[T]) -> T {
        let votes = self.trees.iter().filter(|t| t.vote(x) == 1).count();
        T::count(votes) / T::count(self.trees.len())
    }

    /// 1 iff the vote fraction strictly exceeds `tau`.
    pub fn predict_class(&self, x: &[T], tau: T) -> u8 {
        u8::from(self.predict_proba(x) > tau)
    }

    /// Maps the model's features onto the columns of `data` by name.
    fn column_map(&self, data: &Dataset<T>) -> Result<Option<Vec<usize>>, ForestError> {
        if data.column_names() == self.feature_names.as_slice() {
            return Ok(None);
        }
        self.feature_names
            .iter()
            .map(|name| {
                data.column_index(name)
                    .ok_or_else(|| ForestError::FeatureMismatch(name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Vote fractions for every row of `data`, matching columns by name.
    pub fn predict_proba_dataset(&self, data: &Dataset<T>) -> Result<Vec<T>, ForestError> {
        let map = self.column_map(data)?;
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| match &map {
                None => self.predict_proba(data.row(i)),
                Some(cols) => {
                    let row: Vec<T> = cols.iter().map(|&j| data.value(i, j)).collect();
                    self.predict_proba(&row)
                }
            })
            .collect())
    }

    fn check_training(&self, data: &Dataset<T>) -> Result<Option<Vec<usize>>, ForestError> {
        let n = data.n_rows();
        if let Some(bag) = self.inbag.iter().find(|b| b.len() != n) {
            return Err(ForestError::DatasetMismatch(format!(
                "forest was trained on {} rows, dataset has {n}",
                bag.len()
            )));
        }
        self.column_map(data)
    }

    /// Per-tree votes for row `i`, `None` where the tree saw the row in its bag.
    fn oob_votes(&self, data: &Dataset<T>, map: &Option<Vec<usize>>, i: usize) -> Vec<Option<u8>> {
        let owned;
        let x: &[T] = match map {
            None => data.row(i),
            Some(cols) => {
                owned = cols.iter().map(|&j| data.value(i, j)).collect::<Vec<T>>();
                &owned
            }
        };
        self.trees
            .iter()
            .zip(&self.inbag)
            .map(|(tree, bag)| (bag[i] == 0).then(|| tree.vote(x)))
            .collect()
    }

    /// Out-of-bag vote fraction per training row; `None` when every tree
    /// drew the row.
    pub fn oob_proba(&self, data: &Dataset<T>) -> Result<Vec<Option<T>>, ForestError> {
        let map = self.check_training(data)?;
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| {
                let votes = self.oob_votes(data, &map, i);
                let (pos, total) = votes
                    .iter()
                    .flatten()
                    .fold((0usize, 0usize), |(p, t), &v| (p + v as usize, t + 1));
                (total > 0).then(|| T::count(pos) / T::count(total))
            })
            .collect())
    }

    /// OOB misclassification rate (majority vote, τ = 0.5) of the forests
    /// made of the first `t` trees, for `t = 1..=n_trees`. Rows without an
    /// OOB tree among the first `t` are left out of that prefix's rate.
    pub fn oob_error_curve(&self, data: &Dataset<T>) -> Result<Vec<(usize, f64)>, ForestError> {
        let map = self.check_training(data)?;
        let votes: Vec<Vec<Option<u8>>> = (0..data.n_rows())
            .into_par_iter()
            .map(|i| self.oob_votes(data, &map, i))
            .collect();

        let n = data.n_rows();
        let mut pos = vec![0usize; n];
        let mut total = vec![0usize; n];
        let mut wrong = vec![false; n];
        let (mut covered, mut errors) = (0usize, 0usize);
        let mut curve = Vec::with_capacity(self.n_trees());
        for t in 0..self.n_trees() {
            for i in 0..n {
                let Some(v) = votes[i][t] else { continue };
                if total[i] == 0 {
                    covered += 1;
                } else if wrong[i] {
                    errors -= 1;
                }
                pos[i] += v as usize;
                total[i] += 1;
                let predicted = u8::from(2 * pos[i] > total[i]);
                wrong[i] = predicted != data.label(i);
                if wrong[i] {
                    errors += 1;
                }
            }
            let rate = if covered == 0 {
                f64::NAN
            } else {
                errors as f64 / covered as f64
            };
            curve.push((t + 1, rate));
        }
        Ok(curve)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let model: Self =
            serde_json::from_str(text).map_err(|e| ForestError::Document(e.to_string()))?;
        model.check_structure()?;
        Ok(model)
    }

    fn check_structure(&self) -> Result<(), ForestError> {
        let p = self.feature_names.len();
        if self.trees.len() != self.inbag.len() || self.trees.is_empty() {
            return Err(ForestError::Document("tree and inbag counts differ".into()));
        }
        for tree in &self.trees {
            let m = tree.nodes.len();
            if m == 0 {
                return Err(ForestError::Document("empty tree".into()));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                let ok = match (node.feature, node.threshold, node.left, node.right) {
                    (None, None, None, None) => true,
                    (Some(j), Some(_), Some(l), Some(r)) => {
                        j < p && l > i && r > i && l < m && r < m
                    }
                    _ => false,
                };
                if !ok {
                    return Err(ForestError::Document(format!("malformed node {i}")));
                }
            }
        }
        Ok(())
    }
}
