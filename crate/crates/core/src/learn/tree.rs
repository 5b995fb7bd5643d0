//! CART classification tree with Gini impurity.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::TabularDataset;
use crate::float_bits;
use crate::seed;

/// Number of features examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let n = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Count(n) => n,
        };
        n.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: MaxFeatures,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { max_depth: None, min_samples_split: 2, features_per_split: MaxFeatures::All, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        #[serde(with = "float_bits::scalar")]
        p1: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        #[serde(with = "float_bits::scalar")]
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    /// Weighted Gini decrease per feature, unnormalised.
    #[serde(with = "float_bits::vec")]
    pub impurity_decrease: Vec<f64>,
}

/// A training row index and its multiplicity (bootstrap count).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub idx: u32,
    pub weight: u32,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn class_weights(labels: &[u8], samples: &[Sample]) -> (f64, f64) {
    samples.iter().fold((0.0, 0.0), |(w0, w1), s| {
        let w = f64::from(s.weight);
        if labels[s.idx as usize] == 1 { (w0, w1 + w) } else { (w0 + w, w1) }
    })
}

/// Split score: larger is better. Equals `W - weighted child Gini mass`.
#[inline]
fn purity_score(l0: f64, l1: f64, r0: f64, r1: f64) -> f64 {
    (l0 * l0 + l1 * l1) / (l0 + l1) + (r0 * r0 + r1 * r1) / (r0 + r1)
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b { a } else { m }
}

struct Grower<'a> {
    data: &'a [f64],
    n_cols: usize,
    labels: &'a [u8],
    cfg: &'a TreeConfig,
    mtry: usize,
    scratch: Vec<(f64, u8, u32)>,
    features: Vec<usize>,
}

impl Grower<'_> {
    fn value(&self, idx: u32, f: usize) -> f64 {
        self.data[idx as usize * self.n_cols + f]
    }

    fn best_for_feature(&mut self, samples: &[Sample], f: usize, w0: f64, w1: f64) -> Option<BestSplit> {
        self.scratch.clear();
        for s in samples {
            self.scratch.push((self.value(s.idx, f), self.labels[s.idx as usize], s.weight));
        }
        self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let (mut l0, mut l1) = (0.0, 0.0);
        let mut best: Option<BestSplit> = None;
        for i in 0..self.scratch.len() - 1 {
            let (v, label, w) = self.scratch[i];
            if label == 1 { l1 += f64::from(w) } else { l0 += f64::from(w) }
            let next = self.scratch[i + 1].0;
            if v < next {
                let score = purity_score(l0, l1, w0 - l0, w1 - l1);
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(BestSplit { feature: f, threshold: midpoint(v, next), score });
                }
            }
        }
        best
    }

    fn find_split<R: Rng>(&mut self, samples: &[Sample], w0: f64, w1: f64, rng: &mut R) -> Option<BestSplit> {
        self.features.shuffle(rng);
        let mut best: Option<BestSplit> = None;
        for k in 0..self.features.len() {
            // keep looking past mtry until some valid split exists
            if k >= self.mtry && best.is_some() {
                break;
            }
            let f = self.features[k];
            if let Some(c) = self.best_for_feature(samples, f, w0, w1) {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }
}

impl DecisionTree {
    pub fn fit(ds: &TabularDataset, cfg: &TreeConfig) -> Self {
        let samples: Vec<Sample> = (0..ds.n_rows()).map(|i| Sample { idx: i as u32, weight: 1 }).collect();
        let mut rng = seed::stream_rng(cfg.seed, "tree", 0);
        Self::fit_samples(&ds.data, ds.n_cols(), &ds.labels, samples, cfg, &mut rng)
    }

    pub(crate) fn fit_samples<R: Rng>(
        data: &[f64],
        n_cols: usize,
        labels: &[u8],
        mut samples: Vec<Sample>,
        cfg: &TreeConfig,
        rng: &mut R,
    ) -> Self {
        let mut g = Grower {
            data,
            n_cols,
            labels,
            cfg,
            mtry: cfg.features_per_split.resolve(n_cols),
            scratch: Vec::with_capacity(samples.len()),
            features: (0..n_cols).collect(),
        };
        let mut tree = DecisionTree {
            nodes: vec![TreeNode::Leaf { p1: 0.0 }],
            n_features: n_cols,
            impurity_decrease: vec![0.0; n_cols],
        };
        let (r0, r1) = class_weights(labels, &samples);
        let root_weight = r0 + r1;
        // (node id, start, end, depth)
        let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];
        while let Some((node, start, end, depth)) = stack.pop() {
            let slice = &mut samples[start..end];
            let (w0, w1) = class_weights(labels, slice);
            let w = w0 + w1;
            let p1 = if w > 0.0 { w1 / w } else { 0.0 };
            let stop = w0 == 0.0
                || w1 == 0.0
                || w < g.cfg.min_samples_split as f64
                || g.cfg.max_depth.is_some_and(|d| depth >= d);
            let split = if stop { None } else { g.find_split(slice, w0, w1, rng) };
            let Some(split) = split else {
                tree.nodes[node] = TreeNode::Leaf { p1 };
                continue;
            };
            let parent_mass = w - (w0 * w0 + w1 * w1) / w;
            let child_mass = w - split.score;
            tree.impurity_decrease[split.feature] += (parent_mass - child_mass).max(0.0) / root_weight;

            let mut mid = 0;
            for i in 0..slice.len() {
                if g.value(slice[i].idx, split.feature) <= split.threshold {
                    slice.swap(i, mid);
                    mid += 1;
                }
            }
            let left = tree.nodes.len();
            tree.nodes.push(TreeNode::Leaf { p1 });
            tree.nodes.push(TreeNode::Leaf { p1 });
            tree.nodes[node] = TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right: left + 1,
            };
            stack.push((left + 1, start + mid, end, depth + 1));
            stack.push((left, start, start + mid, depth + 1));
        }
        tree
    }

    /// Probability of class 1 for one row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                TreeNode::Leaf { p1 } => return p1,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}
