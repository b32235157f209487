//! CART decision trees and bagged random forests.

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SupervisedError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(bool),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Classifier,
    Regressor,
}

/// Features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubsample {
    fn count(self, d: usize) -> usize {
        match self {
            FeatureSubsample::Sqrt => ((d as f64).sqrt().round() as usize).max(1),
            FeatureSubsample::All => d,
            FeatureSubsample::Count(n) => n,
        }
        .clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    /// Classifier leaves hold `[P(false), P(true)]`; regressor leaves the mean.
    Leaf { distribution: Option<[f64; 2]>, value: f64 },
}

impl Node {
    pub fn leaf(&self, x: &[f64]) -> &Node {
        let mut node = self;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            node = if x[*feature] <= *threshold { left } else { right };
        }
        node
    }

    /// P(true) for classifier trees, the leaf mean for regressors.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.leaf(x) {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!("leaf() stops at a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Every feature index used by a split.
    pub fn split_features(&self, out: &mut Vec<usize>) {
        if let Node::Split { feature, left, right, .. } = self {
            out.push(*feature);
            left.split_features(out);
            right.split_features(out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features: FeatureSubsample,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 10,
            min_leaf: 2,
            features: FeatureSubsample::All,
        }
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    mode: Mode,
    config: TreeConfig,
    n_features: usize,
}

/// Gini impurity for 0/1 targets, variance otherwise; both times the count.
fn weighted_impurity(mode: Mode, n: f64, sum: f64, sum_sq: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    match mode {
        Mode::Classifier => {
            let p = sum / n;
            n * 2.0 * p * (1.0 - p)
        }
        Mode::Regressor => (sum_sq - sum * sum / n).max(0.0),
    }
}

impl Grower<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n;
        match self.mode {
            Mode::Classifier => Node::Leaf {
                distribution: Some([1.0 - mean, mean]),
                value: mean,
            },
            Mode::Regressor => Node::Leaf {
                distribution: None,
                value: mean,
            },
        }
    }

    fn grow(&self, idx: &mut [usize], depth: usize, rng: &mut dyn RngCore) -> Node {
        let n = idx.len();
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if pure || depth >= self.config.max_depth || n < 2 * self.config.min_leaf {
            return self.leaf(idx);
        }
        let m = self.config.features.count(self.n_features);
        let mut candidates: Vec<usize> = if m >= self.n_features {
            (0..self.n_features).collect()
        } else {
            sample(rng, self.n_features, m).into_vec()
        };
        candidates.sort_unstable();

        let (sum, sum_sq) = idx
            .iter()
            .fold((0.0, 0.0), |(s, q), &i| (s + self.y[i], q + self.y[i] * self.y[i]));
        let parent = weighted_impurity(self.mode, n as f64, sum, sum_sq);
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &candidates {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let (mut ls, mut lq) = (0.0, 0.0);
            for split in 1..n {
                let yi = self.y[idx[split - 1]];
                ls += yi;
                lq += yi * yi;
                let (lo, hi) = (self.x[idx[split - 1]][f], self.x[idx[split]][f]);
                if lo == hi || split < self.config.min_leaf || n - split < self.config.min_leaf {
                    continue;
                }
                let child = weighted_impurity(self.mode, split as f64, ls, lq)
                    + weighted_impurity(self.mode, (n - split) as f64, sum - ls, sum_sq - lq);
                let gain = parent - child;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    // Adjacent floats can round the midpoint up to `hi`.
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some((gain, f, if mid < hi { mid } else { lo }));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        left.sort_unstable();
        right.sort_unstable();
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(&mut left, depth + 1, rng)),
            right: Box::new(self.grow(&mut right, depth + 1, rng)),
        }
    }
}

fn check_rows(rows: &[(Vec<f64>, Label)]) -> Result<(Mode, usize, Vec<Vec<f64>>, Vec<f64>), SupervisedError> {
    if rows.len() < 2 {
        return Err(SupervisedError::TooFewRows(rows.len()));
    }
    let mode = match rows[0].1 {
        Label::Class(_) => Mode::Classifier,
        Label::Value(_) => Mode::Regressor,
    };
    let d = rows[0].0.len();
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (features, label) in rows {
        if features.len() != d {
            return Err(SupervisedError::SchemaMismatch {
                expected: d,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(SupervisedError::NonFinite);
        }
        y.push(match (mode, label) {
            (Mode::Classifier, Label::Class(b)) => *b as u8 as f64,
            (Mode::Regressor, Label::Value(v)) if v.is_finite() && *v >= 0.0 => *v,
            (Mode::Regressor, Label::Value(_)) => return Err(SupervisedError::NegativeTarget),
            _ => return Err(SupervisedError::MixedLabelTypes),
        });
        x.push(features.clone());
    }
    Ok((mode, d, x, y))
}

/// A single tree fitted on every row.
pub fn fit_tree(rows: &[(Vec<f64>, Label)], config: &TreeConfig, rng: &mut dyn RngCore) -> Result<(Mode, Node), SupervisedError> {
    let (mode, d, x, y) = check_rows(rows)?;
    let grower = Grower {
        x: &x,
        y: &y,
        mode,
        config: *config,
        n_features: d,
    };
    let mut idx: Vec<usize> = (0..x.len()).collect();
    Ok((mode, grower.grow(&mut idx, 0, rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 10,
            min_leaf: 2,
            feature_subsample: FeatureSubsample::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub mode: Mode,
    pub n_features: usize,
    pub config: ForestConfig,
    pub trees: Vec<Node>,
}

impl ForestModel {
    /// Mean over trees of P(true) (classifier) or the leaf mean (regressor).
    pub fn predict(&self, x: &[f64]) -> Result<f64, SupervisedError> {
        if x.len() != self.n_features {
            return Err(SupervisedError::SchemaMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

pub fn train_forest(rows: &[(Vec<f64>, Label)], config: &ForestConfig) -> Result<ForestModel, SupervisedError> {
    if config.n_trees == 0 {
        return Err(SupervisedError::InvalidConfig("n_trees must be at least 1".into()));
    }
    let (mode, d, x, y) = check_rows(rows)?;
    let tree_config = TreeConfig {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf.max(1),
        features: config.feature_subsample,
    };
    let grower = Grower {
        x: &x,
        y: &y,
        mode,
        config: tree_config,
        n_features: d,
    };
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let trees = (0..config.n_trees)
        .map(|_| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
            let mut idx: Vec<usize> = if config.bootstrap {
                (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            grower.grow(&mut idx, 0, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        mode,
        n_features: d,
        config: *config,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(points: &[(f64, bool)]) -> Vec<(Vec<f64>, Label)> {
        points.iter().map(|&(x, c)| (vec![x], Label::Class(c))).collect()
    }

    #[test]
    fn constant_labels_give_constant_predictions() {
        let data = rows(&[(1.0, true), (2.0, true), (3.0, true)]);
        let f = train_forest(&data, &ForestConfig { n_trees: 5, ..Default::default() }).unwrap();
        for x in [-10.0, 2.5, 99.0] {
            assert_eq!(f.predict(&[x]).unwrap(), 1.0);
        }
    }

    #[test]
    fn errors() {
        assert_eq!(
            train_forest(&rows(&[(1.0, true)]), &ForestConfig::default()),
            Err(SupervisedError::TooFewRows(1))
        );
        let mixed = vec![(vec![1.0], Label::Class(true)), (vec![2.0], Label::Value(3.0))];
        assert_eq!(train_forest(&mixed, &ForestConfig::default()), Err(SupervisedError::MixedLabelTypes));
        let f = train_forest(&rows(&[(1.0, true), (2.0, false)]), &ForestConfig::default()).unwrap();
        assert!(matches!(f.predict(&[1.0, 2.0]), Err(SupervisedError::SchemaMismatch { .. })));
    }

    #[test]
    fn single_split_found() {
        let data = rows(&[(1.0, false), (2.0, false), (8.0, true), (9.0, true)]);
        let (_, tree) = fit_tree(&data, &TreeConfig { min_leaf: 1, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        match &tree {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 5.0);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(tree.predict(&[0.0]), 0.0);
        assert_eq!(tree.predict(&[7.0]), 1.0);
    }

    #[test]
    fn adjacent_floats_still_split() {
        let hi = f64::from_bits(0.3f64.to_bits() + 1);
        let data = rows(&[(0.3, false), (hi, true)]);
        let (_, tree) = fit_tree(&data, &TreeConfig { min_leaf: 1, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tree.predict(&[0.3]), 0.0);
        assert_eq!(tree.predict(&[hi]), 1.0);
    }

    #[test]
    fn regressor_means() {
        let data: Vec<_> = [(1.0, 10.0), (2.0, 12.0), (10.0, 100.0), (11.0, 104.0)]
            .iter()
            .map(|&(x, y)| (vec![x], Label::Value(y)))
            .collect();
        let (mode, tree) = fit_tree(&data, &TreeConfig { min_leaf: 2, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(mode, Mode::Regressor);
        assert_eq!(tree.predict(&[0.0]), 11.0);
        assert_eq!(tree.predict(&[50.0]), 102.0);
    }
}
