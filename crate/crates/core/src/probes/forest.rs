//! Bagged CART trees with Gini splits.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check_inputs;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `round(sqrt(D))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: Some(8),
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 {
            return Err(Error::config("forest needs at least one tree and a positive leaf size"));
        }
        if self.max_features == Some(0) {
            return Err(Error::config("forest must try at least one feature per split"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { p1: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes stored flat; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn proba(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p1 } => return *p1,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub seed: u64,
}

impl Forest {
    pub fn proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.proba(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn best_split(&self, idx: &[usize], rng: &mut impl Rng) -> Option<(usize, f64, f64)> {
        let d = self.x[0].len();
        let n = idx.len();
        let pos_total = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let parent = gini(pos_total, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(n);
        for f in sample(rng, d, self.mtry.min(d)).into_iter() {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut pos_left = 0;
            for k in 1..n {
                pos_left += usize::from(sorted[k - 1].1);
                if sorted[k].0 <= sorted[k - 1].0 || k < self.params.min_leaf || n - k < self.params.min_leaf {
                    continue;
                }
                let impurity = (k as f64 * gini(pos_left, k) + (n - k) as f64 * gini(pos_total - pos_left, n - k)) / n as f64;
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, 0.5 * (sorted[k - 1].0 + sorted[k].0), gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut impl Rng) -> usize {
        let id = self.nodes.len();
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let p1 = pos as f64 / idx.len() as f64;
        self.nodes.push(Node::Leaf { p1 });
        let pure = pos == 0 || pos == idx.len();
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if pure || !depth_ok || idx.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some((feature, threshold, _)) = self.best_split(&idx, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn fit_tree(x: &[Vec<f64>], y: &[u8], params: &ForestParams, mtry: usize, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let idx: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut b = Builder {
        x,
        y,
        params,
        mtry,
        nodes: Vec::new(),
    };
    b.grow(idx, 0, &mut rng);
    Tree { nodes: b.nodes }
}

/// Trees are fitted in parallel; tree `t` uses seed `derive(seed, [t])`.
pub fn fit_random_forest(x: &[Vec<f64>], y: &[u8], params: &ForestParams, seed: u64) -> Result<Forest> {
    params.validate()?;
    let d = check_inputs(x, y, 1.0)?;
    let mtry = params
        .max_features
        .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1));
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(x, y, params, mtry, rng::derive_seed(seed, &[t as u64])))
        .collect();
    Ok(Forest {
        trees,
        n_features: d,
        seed,
    })
}
