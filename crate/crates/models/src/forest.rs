//! Binary probabilistic classifiers over dense feature rows. The random
//! forest here is a compact CART ensemble (Gini splits, bootstrap rows,
//! random feature subsets); anything implementing [`PixelClassifier`] can
//! replace it.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use postdae_core::seed::rng_for;

use crate::error::{ModelError, Result};

/// Row-major `rows × cols` feature table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.cols, "feature row width");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    fn at(&self, i: usize, f: usize) -> f32 {
        self.data[i * self.cols + f]
    }
}

pub trait PixelClassifier: Send + Sync {
    fn fit(&mut self, x: &FeatureMatrix, y: &[bool]) -> Result<()>;
    /// Foreground probability for one feature row.
    fn predict_proba(&self, row: &[f32]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `round(sqrt(cols))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 16,
            min_samples_split: 4,
            min_samples_leaf: 2,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidConfig(
                "n_trees, max_depth and min_samples_leaf must be >= 1".into(),
            ));
        }
        if self.max_features == Some(0) {
            return Err(ModelError::InvalidConfig("max_features must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { p: f64 },
    Split { feature: usize, threshold: f32, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p } => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    x: &'a FeatureMatrix,
    y: &'a [bool],
    cfg: &'a ForestConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f32, bool)>,
}

impl Grower<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(Node::Leaf {
            p: pos as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    /// Best `(feature, threshold, weighted child impurity)` over a random
    /// feature subset.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f32, f64)> {
        let n = idx.len() as f64;
        let total_pos = idx.iter().filter(|&&i| self.y[i]).count() as f64;
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<(usize, f32, f64)> = None;
        for f in sample(&mut self.rng, self.x.cols, self.mtry).into_iter() {
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (self.x.at(i, f), self.y[i])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0.0;
            for k in 0..self.scratch.len() - 1 {
                if self.scratch[k].1 {
                    left_pos += 1.0;
                }
                let (v, next) = (self.scratch[k].0, self.scratch[k + 1].0);
                let n_left = k + 1;
                if v == next || n_left < min_leaf || idx.len() - n_left < min_leaf {
                    continue;
                }
                let nl = n_left as f64;
                let nr = n - nl;
                let score = nl * gini(left_pos, nl) + nr * gini(total_pos - left_pos, nr);
                if best.is_none_or(|b| score < b.2) {
                    let mid = v + (next - v) / 2.0;
                    // guard against the midpoint rounding onto `next`
                    let threshold = if mid < next { mid } else { v };
                    best = Some((f, threshold, score));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        if depth >= self.cfg.max_depth
            || idx.len() < self.cfg.min_samples_split
            || pos == 0
            || pos == idx.len()
        {
            return self.leaf(idx);
        }
        let parent = idx.len() as f64 * gini(pos as f64, idx.len() as f64);
        let Some((feature, threshold, score)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        if score >= parent {
            return self.leaf(idx);
        }
        let mut split = 0;
        for k in 0..idx.len() {
            if self.x.at(idx[k], feature) <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p: 0.0 });
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: ForestConfig,
    trees: Vec<Tree>,
    n_features: usize,
}

impl RandomForest {
    pub fn new(config: ForestConfig) -> Self {
        Self {
            config,
            trees: Vec::new(),
            n_features: 0,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn is_trained(&self) -> bool {
        !self.trees.is_empty()
    }
}

impl PixelClassifier for RandomForest {
    fn fit(&mut self, x: &FeatureMatrix, y: &[bool]) -> Result<()> {
        self.config.validate()?;
        if x.rows == 0 || x.cols == 0 {
            return Err(ModelError::EmptyDataset);
        }
        if y.len() != x.rows {
            return Err(ModelError::DimensionMismatch {
                expected: (x.rows, 1),
                found: (y.len(), 1),
            });
        }
        let mtry = self
            .config
            .max_features
            .unwrap_or_else(|| (x.cols as f64).sqrt().round() as usize)
            .clamp(1, x.cols);
        self.trees = (0..self.config.n_trees)
            .map(|t| {
                let mut rng = rng_for(self.config.seed, &[t as u64]);
                let mut idx: Vec<usize> = if self.config.bootstrap {
                    (0..x.rows).map(|_| rng.random_range(0..x.rows)).collect()
                } else {
                    (0..x.rows).collect()
                };
                let mut g = Grower {
                    x,
                    y,
                    cfg: &self.config,
                    mtry,
                    rng,
                    nodes: Vec::new(),
                    scratch: Vec::with_capacity(idx.len()),
                };
                g.grow(&mut idx, 0);
                Tree { nodes: g.nodes }
            })
            .collect();
        self.n_features = x.cols;
        Ok(())
    }

    fn predict_proba(&self, row: &[f32]) -> Result<f64> {
        if self.trees.is_empty() {
            return Err(ModelError::UntrainedModel);
        }
        if row.len() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: (self.n_features, 1),
                found: (row.len(), 1),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64)
    }
}
