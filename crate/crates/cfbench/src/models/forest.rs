//! Random forest: bagged CART trees with Gini splits and a random feature
//! subset of size ⌈√d⌉ per split. The forest probability is the fraction of
//! trees voting class 1 (each tree votes its leaf majority, ties to 1).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Classifier, ModelError};
use crate::data::Dataset;
use crate::datagen::derive_seed;

const TREE_SEED_TAG: u64 = 0x7265_6573; // "rees"

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { vote: u8 },
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn vote(&self, x: &[f64]) -> u8 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { vote } => return *vote,
                Node::Split { feature, threshold, left, right } => {
                    idx = if x[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }
}

/// Bagged ensemble of CART trees.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_features: usize,
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

impl Classifier for RandomForest {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_features);
        let votes = self.trees.iter().filter(|t| t.vote(x) == 1).count();
        votes as f64 / self.trees.len() as f64
    }
    fn tag(&self) -> &'static str {
        "rf"
    }
}

fn gini(n0: f64, n1: f64) -> f64 {
    let n = n0 + n1;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (n0 / n, n1 / n);
    1.0 - p0 * p0 - p1 * p1
}

struct TreeBuilder<'a> {
    d: &'a Dataset,
    max_depth: usize,
    min_leaf: usize,
    m_try: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, rows: &[usize]) -> u32 {
        let ones = rows.iter().filter(|&&i| self.d.y[i] == 1).count();
        // Exact tie resolves to class 1, matching the 0.5-probability rule.
        let vote = u8::from(2 * ones >= rows.len());
        self.nodes.push(Node::Leaf { vote });
        (self.nodes.len() - 1) as u32
    }

    /// Best (impurity, feature, threshold) over a sampled feature subset.
    /// Selection is deterministic: strictly smaller weighted impurity wins,
    /// and iteration order comes from the seeded feature sample.
    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let d = self.d.d();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        features.truncate(self.m_try);

        let total1 = rows.iter().filter(|&&i| self.d.y[i] == 1).count() as f64;
        let total0 = rows.len() as f64 - total1;
        let parent = gini(total0, total1);
        let n = rows.len() as f64;

        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.d.x[a][f].partial_cmp(&self.d.x[b][f]).unwrap());
            let (mut l0, mut l1) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                if self.d.y[i] == 1 {
                    l1 += 1.0;
                } else {
                    l0 += 1.0;
                }
                let left_n = k + 1;
                let right_n = order.len() - left_n;
                if left_n < self.min_leaf || right_n < self.min_leaf {
                    continue;
                }
                let v = self.d.x[i][f];
                let v_next = self.d.x[order[k + 1]][f];
                if v_next <= v {
                    continue; // no boundary between equal values
                }
                let weighted =
                    (left_n as f64 / n) * gini(l0, l1) + (right_n as f64 / n) * gini(total0 - l0, total1 - l1);
                if weighted + 1e-12 < parent && best.map_or(true, |(b, _, _)| weighted < b - 1e-12) {
                    best = Some((weighted, f, (v + v_next) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn build(&mut self, rows: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let first = self.d.y[rows[0]];
        let pure = rows.iter().all(|&i| self.d.y[i] == first);
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf || pure {
            return self.leaf(rows);
        }
        match self.best_split(rows, rng) {
            None => self.leaf(rows),
            Some((feature, threshold)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| self.d.x[i][feature] <= threshold);
                let slot = self.nodes.len();
                self.nodes.push(Node::Leaf { vote: 0 }); // placeholder
                let left = self.build(&left_rows, depth + 1, rng);
                let right = self.build(&right_rows, depth + 1, rng);
                self.nodes[slot] = Node::Split { feature, threshold, left, right };
                slot as u32
            }
        }
    }
}

fn fit_tree(d: &Dataset, max_depth: usize, min_leaf: usize, m_try: usize, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..d.n()).map(|_| rng.random_range(0..d.n())).collect();
    let mut builder = TreeBuilder { d, max_depth, min_leaf, m_try, nodes: Vec::new() };
    let root = builder.build(&rows, 0, &mut rng);
    debug_assert_eq!(root, 0);
    Tree { nodes: builder.nodes }
}

/// Fit a bagged forest. Trees are independent given their derived seeds, so
/// the result is identical no matter how many workers build them.
pub fn fit_random_forest(
    train: &Dataset,
    n_trees: usize,
    max_depth: usize,
    min_leaf: usize,
    seed: u64,
) -> Result<RandomForest, ModelError> {
    if n_trees == 0 || max_depth == 0 || min_leaf == 0 {
        return Err(ModelError::BadParam {
            what: format!("n_trees ({n_trees}), max_depth ({max_depth}), min_leaf ({min_leaf}) must all be >= 1"),
        });
    }
    super::check_two_classes(train)?;
    let m_try = (train.d() as f64).sqrt().ceil() as usize;
    let trees: Vec<Tree> = (0..n_trees)
        .into_par_iter()
        .map(|t| fit_tree(train, max_depth, min_leaf, m_try, derive_seed(&[seed, TREE_SEED_TAG, t as u64])))
        .collect();
    Ok(RandomForest { trees, n_features: train.d() })
}
