//! Regression forest of CART trees grown on bootstrap samples.
//!
//! Split search minimizes the summed squared error of the children. Each
//! tree draws from its own ChaCha8 stream (`seed`, stream = tree index), so a
//! forest is reproducible regardless of the order trees are grown in.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A split must beat the best so far by this share of the node's SSE.
pub const GAIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Each leaf keeps at least this share of the bootstrap sample.
    pub min_weight_fraction_leaf: f64,
    /// Features tried at each split; all when `None`.
    #[serde(default)]
    pub features_per_split: Option<usize>,
    pub seed: u64,
    /// When false every tree is grown on the training rows as given and no
    /// out-of-bag error exists.
    #[serde(default = "yes")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            max_depth: 10,
            min_samples_split: 2,
            min_weight_fraction_leaf: 0.0,
            features_per_split: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_estimators < 1 {
            errs.push("n_estimators must be at least 1");
        }
        if self.max_depth < 1 {
            errs.push("max_depth must be at least 1");
        }
        if self.min_samples_split < 2 {
            errs.push("min_samples_split must be at least 2");
        }
        if !(0.0..=0.5).contains(&self.min_weight_fraction_leaf) {
            errs.push("min_weight_fraction_leaf must be in [0, 0.5]");
        }
        if self.features_per_split == Some(0) {
            errs.push("features_per_split must be at least 1");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParam(errs.join("; ")))
        }
    }

    fn min_leaf(&self, n: usize) -> usize {
        ((self.min_weight_fraction_leaf * n as f64).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
        count: usize,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<(f64, usize)> {
        match self {
            TreeNode::Leaf { value, count } => vec![(*value, *count)],
            TreeNode::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
    /// Training row indices drawn for each tree.
    pub in_bag: Vec<Vec<u32>>,
    /// Out-of-bag MAE; `None` when no row was left out of any tree.
    pub oob_mae: Option<f64>,
    pub importances: Vec<f64>,
}

impl ForestModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: row.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

pub fn rf_predict(model: &ForestModel, row: &[f64]) -> Result<f64> {
    model.predict(row)
}

pub fn feature_importance(model: &ForestModel) -> Vec<f64> {
    model.importances.clone()
}

/// Grow one tree on `rows` (indices into `x`, repeats allowed).
pub fn fit_tree(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    params: &ForestParams,
    seed: u64,
) -> Result<TreeNode> {
    params.validate()?;
    check_data(x, y)?;
    if rows.is_empty() {
        return Err(Error::TooFewRows("tree needs at least one row".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= x.len()) {
        return Err(Error::InvalidParam(format!("row index {bad} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut imp = vec![0.0; x[0].len()];
    Ok(Grower::new(x, y, rows, params, &mut rng, &mut imp).grow())
}

/// Fit `n_estimators` trees on bootstrap samples of the rows.
pub fn rf_fit(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    check_data(x, y)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewRows("forest needs at least 2 rows".into()));
    }
    let p = x[0].len();
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut in_bag = Vec::with_capacity(params.n_estimators);
    let mut importance = vec![0.0; p];
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0u32; n];

    for t in 0..params.n_estimators {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(t as u64);
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut tree_imp = vec![0.0; p];
        let tree = Grower::new(x, y, &rows, params, &mut rng, &mut tree_imp).grow();
        for (a, b) in importance.iter_mut().zip(&tree_imp) {
            *a += b;
        }
        let mut seen = vec![false; n];
        rows.iter().for_each(|&r| seen[r] = true);
        for r in (0..n).filter(|&r| !seen[r]) {
            oob_sum[r] += tree.predict(&x[r]);
            oob_count[r] += 1;
        }
        trees.push(tree);
        in_bag.push(rows.into_iter().map(|r| r as u32).collect());
    }

    let (mut err, mut m) = (0.0, 0usize);
    for r in 0..n {
        if oob_count[r] > 0 {
            err += (oob_sum[r] / oob_count[r] as f64 - y[r]).abs();
            m += 1;
        }
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        importance.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ForestModel {
        params: params.clone(),
        n_features: p,
        trees,
        in_bag,
        oob_mae: (m > 0).then(|| err / m as f64),
        importances: importance,
    })
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    let p = x.first().map_or(0, Vec::len);
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(Error::Shape {
            expected: p,
            got: r.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forest training data".into()));
    }
    Ok(())
}

/// Tree builder over presorted sample orders.
///
/// `orders[f]` lists sample positions sorted by feature `f`. A node owns the
/// same range `lo..hi` of every order; splitting stably partitions that range
/// so both children stay sorted.
struct Grower<'a, R: Rng> {
    x: &'a [Vec<f64>],
    rows: Vec<usize>,
    ys: Vec<f64>,
    orders: Vec<Vec<u32>>,
    go_left: Vec<bool>,
    scratch: Vec<u32>,
    params: &'a ForestParams,
    min_leaf: usize,
    n_root: f64,
    rng: &'a mut R,
    importance: &'a mut [f64],
}

struct Best {
    feature: usize,
    threshold: f64,
    n_left: usize,
    gain: f64,
}

impl<'a, R: Rng> Grower<'a, R> {
    fn new(
        x: &'a [Vec<f64>],
        y: &[f64],
        rows: &[usize],
        params: &'a ForestParams,
        rng: &'a mut R,
        importance: &'a mut [f64],
    ) -> Self {
        let p = x[0].len();
        let orders = (0..p)
            .map(|f| {
                let mut o: Vec<u32> = (0..rows.len() as u32).collect();
                o.sort_by(|&a, &b| x[rows[a as usize]][f].total_cmp(&x[rows[b as usize]][f]));
                o
            })
            .collect();
        Grower {
            x,
            rows: rows.to_vec(),
            ys: rows.iter().map(|&r| y[r]).collect(),
            orders,
            go_left: vec![false; rows.len()],
            scratch: Vec::with_capacity(rows.len()),
            params,
            min_leaf: params.min_leaf(rows.len()),
            n_root: rows.len() as f64,
            rng,
            importance,
        }
    }

    fn grow(mut self) -> TreeNode {
        if self.orders.is_empty() {
            let all: Vec<u32> = (0..self.rows.len() as u32).collect();
            return self.leaf(&all);
        }
        self.node(0, self.rows.len(), 0)
    }

    fn value(&self, pos: u32) -> f64 {
        self.ys[pos as usize]
    }

    fn feat(&self, pos: u32, f: usize) -> f64 {
        self.x[self.rows[pos as usize]][f]
    }

    fn leaf(&self, members: &[u32]) -> TreeNode {
        let sum: f64 = members.iter().map(|&p| self.value(p)).sum();
        TreeNode::Leaf {
            value: sum / members.len() as f64,
            count: members.len(),
        }
    }

    fn node(&mut self, lo: usize, hi: usize, depth: usize) -> TreeNode {
        let n = hi - lo;
        let members = &self.orders[0][lo..hi];
        let mean = members.iter().map(|&p| self.ys[p as usize]).sum::<f64>() / n as f64;
        let sse: f64 = members
            .iter()
            .map(|&p| (self.ys[p as usize] - mean).powi(2))
            .sum();
        let constant = members.iter().all(|&p| self.ys[p as usize] == self.ys[members[0] as usize]);
        if depth >= self.params.max_depth
            || n < self.params.min_samples_split
            || n < 2 * self.min_leaf
            || constant
        {
            return TreeNode::Leaf { value: mean, count: n };
        }
        let Some(best) = self.best_split(lo, hi, mean, sse) else {
            return TreeNode::Leaf { value: mean, count: n };
        };
        self.importance[best.feature] += best.gain / self.n_root;

        for &p in &self.orders[best.feature][lo..hi] {
            self.go_left[p as usize] = false;
        }
        for &p in &self.orders[best.feature][lo..lo + best.n_left] {
            self.go_left[p as usize] = true;
        }
        for f in 0..self.orders.len() {
            self.scratch.clear();
            let order = &mut self.orders[f];
            let mut w = lo;
            for i in lo..hi {
                let p = order[i];
                if self.go_left[p as usize] {
                    order[w] = p;
                    w += 1;
                } else {
                    self.scratch.push(p);
                }
            }
            order[w..hi].copy_from_slice(&self.scratch);
        }
        let mid = lo + best.n_left;
        let left = self.node(lo, mid, depth + 1);
        let right = self.node(mid, hi, depth + 1);
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.orders.len();
        match self.params.features_per_split {
            Some(k) if k < p => {
                let mut f = index::sample(self.rng, p, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(&mut self, lo: usize, hi: usize, mean: f64, sse: f64) -> Option<Best> {
        let n = hi - lo;
        let min_leaf = self.min_leaf;
        let mut best: Option<Best> = None;
        for f in self.candidate_features() {
            let order = &self.orders[f][lo..hi];
            // targets centered on the node mean keep the prefix sums small
            let mut sum_left = 0.0;
            for i in 0..n - 1 {
                sum_left += self.value(order[i]) - mean;
                let n_left = i + 1;
                let (a, b) = (self.feat(order[i], f), self.feat(order[i + 1], f));
                if a == b || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let gain = sum_left * sum_left / n_left as f64
                    + sum_left * sum_left / (n - n_left) as f64;
                // gains closer than the tolerance are ties: the earlier
                // (feature, threshold) is kept
                if gain > best.as_ref().map_or(0.0, |b| b.gain) + GAIN_TOLERANCE * sse {
                    best = Some(Best {
                        feature: f,
                        threshold: midpoint(a, b),
                        n_left,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Split point strictly below `b` for `a < b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = (a + b) / 2.0;
    if !m.is_finite() {
        a + (b - a) / 2.0
    } else if m >= b {
        a
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(depth: usize) -> ForestParams {
        ForestParams {
            n_estimators: 1,
            max_depth: depth,
            bootstrap: false,
            ..Default::default()
        }
    }

    #[test]
    fn constant_target_is_one_leaf() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let t = fit_tree(&x, &[4.0; 5], &[0, 1, 2, 3, 4], &params(5), 0).unwrap();
        assert_eq!(t, TreeNode::Leaf { value: 4.0, count: 5 });
    }

    #[test]
    fn step_function_split() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let t = fit_tree(&x, &[0.0, 0.0, 10.0, 10.0], &[0, 1, 2, 3], &params(1), 0).unwrap();
        match t {
            TreeNode::Split { feature, threshold, left, right } => {
                assert_eq!((feature, threshold), (0, 1.5));
                assert_eq!(*left, TreeNode::Leaf { value: 0.0, count: 2 });
                assert_eq!(*right, TreeNode::Leaf { value: 10.0, count: 2 });
            }
            leaf => panic!("expected a split, got {leaf:?}"),
        }
    }

    #[test]
    fn tie_prefers_lowest_feature() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, i as f64]).collect();
        let t = fit_tree(&x, &[0.0, 0.0, 10.0, 10.0], &[0, 1, 2, 3], &params(1), 0).unwrap();
        assert!(matches!(t, TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn identity_bootstrap_has_no_oob() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let m = rf_fit(&x, &y, &params(3)).unwrap();
        assert_eq!(m.oob_mae, None);
    }

    #[test]
    fn constant_target_forest() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let m = rf_fit(&x, &[9.0; 30], &ForestParams { n_estimators: 10, ..Default::default() })
            .unwrap();
        assert_eq!(m.oob_mae, Some(0.0));
        assert_eq!(m.importances, vec![0.0, 0.0]);
        assert_eq!(m.predict(&[100.0, 1.0]).unwrap(), 9.0);
    }

    #[test]
    fn leaf_average() {
        let m = ForestModel {
            params: params(1),
            n_features: 1,
            trees: vec![
                TreeNode::Leaf { value: 10.0, count: 1 },
                TreeNode::Leaf { value: 20.0, count: 1 },
            ],
            in_bag: vec![],
            oob_mae: None,
            importances: vec![0.0],
        };
        assert_abs_diff_eq!(m.predict(&[0.0]).unwrap(), 15.0);
        assert!(m.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn min_leaf_fraction_is_respected() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i * i) as f64).collect();
        let p = ForestParams {
            min_weight_fraction_leaf: 0.2,
            ..params(10)
        };
        let rows: Vec<usize> = (0..20).collect();
        let t = fit_tree(&x, &y, &rows, &p, 0).unwrap();
        assert!(t.leaves().iter().all(|&(_, c)| c >= 4));
    }

    #[test]
    fn invalid_params() {
        let bad = ForestParams { min_samples_split: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ForestParams { min_weight_fraction_leaf: 0.6, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
