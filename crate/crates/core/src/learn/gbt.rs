//! Gradient-boosted regression trees on the logistic loss, grown level by
//! level with exact greedy splits over presorted features.

use serde::{Deserialize, Serialize};

use crate::features::{FeatureView, TabularDataset};
use crate::float_bits;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub min_child_weight: f64,
    /// Fraction of rows drawn (without replacement) for each round.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            max_depth: 10,
            learning_rate: 0.1,
            l2_lambda: 1.0,
            min_child_weight: 0.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("gbt: {m}")));
        if self.n_rounds == 0 {
            return bad("n_rounds must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0 && self.min_child_weight >= 0.0) {
            return bad("l2_lambda and min_child_weight must be non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum RegNode {
    /// Already scaled by the learning rate.
    Leaf {
        #[serde(with = "float_bits::scalar")]
        value: f64,
    },
    Split {
        feature: usize,
        #[serde(with = "float_bits::scalar")]
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                RegNode::Leaf { value } => return value,
                RegNode::Split { feature, threshold, left, right } => {
                    node = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    #[serde(with = "float_bits::scalar")]
    pub base_margin: f64,
    pub trees: Vec<RegTree>,
}

fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss of margins against labels.
pub fn logistic_loss(margins: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            // log(1 + e^m) - y m, computed stably
            let softplus = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
            softplus - f64::from(y) * m
        })
        .sum();
    total / margins.len() as f64
}

/// Optimal leaf weight `-G / (H + lambda)`; zero when the denominator vanishes.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 { -g / denom } else { 0.0 }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    gl: f64,
    hl: f64,
}

struct Builder<'a> {
    data: &'a [f64],
    d: usize,
    sorted: &'a [Vec<u32>],
    cfg: &'a GbtConfig,
}

impl Builder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.l2_lambda)
    }

    fn leaf(&self, g: f64, h: f64) -> f64 {
        self.cfg.learning_rate * leaf_weight(g, h, self.cfg.l2_lambda)
    }

    /// `node_of[i]` is the node row `i` sits in, or `u32::MAX` when the row is
    /// out of bag this round.
    fn build(&self, grad: &[f64], hess: &[f64], node_of: &mut [u32]) -> RegTree {
        let mut stats: Vec<(f64, f64)> = vec![node_of
            .iter()
            .enumerate()
            .filter(|(_, &n)| n != u32::MAX)
            .fold((0.0, 0.0), |(g, h), (i, _)| (g + grad[i], h + hess[i]))];
        let mut nodes: Vec<Option<RegNode>> = vec![None];
        let mut frontier: Vec<usize> = vec![0];
        let mut slot_of: Vec<usize> = vec![0];

        for _depth in 0..self.cfg.max_depth {
            if frontier.is_empty() {
                break;
            }
            let k = frontier.len();
            let mut best: Vec<Option<Candidate>> = (0..k).map(|_| None).collect();
            let mut gl = vec![0.0; k];
            let mut hl = vec![0.0; k];
            let mut last: Vec<f64> = vec![f64::NAN; k];
            for f in 0..self.d {
                gl.iter_mut().for_each(|v| *v = 0.0);
                hl.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = f64::NAN);
                for &i in &self.sorted[f] {
                    let i = i as usize;
                    let n = node_of[i];
                    if n == u32::MAX {
                        continue;
                    }
                    let s = slot_of[n as usize];
                    if s == usize::MAX {
                        continue;
                    }
                    let v = self.data[i * self.d + f];
                    if v > last[s] {
                        let (g, h) = stats[frontier[s]];
                        let (gr, hr) = (g - gl[s], h - hl[s]);
                        if hl[s] >= self.cfg.min_child_weight && hr >= self.cfg.min_child_weight {
                            let gain = 0.5 * (self.score(gl[s], hl[s]) + self.score(gr, hr) - self.score(g, h));
                            if gain > 0.0 && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate {
                                    gain,
                                    feature: f,
                                    threshold: last[s] + (v - last[s]) / 2.0,
                                    gl: gl[s],
                                    hl: hl[s],
                                });
                            }
                        }
                    }
                    gl[s] += grad[i];
                    hl[s] += hess[i];
                    last[s] = v;
                }
            }
            // NaN comparisons above are false, so the first row of each node
            // never proposes a split.
            let mut next = Vec::new();
            for (s, cand) in best.into_iter().enumerate() {
                let node = frontier[s];
                let Some(c) = cand else { continue };
                let (g, h) = stats[node];
                let left = nodes.len();
                nodes.push(None);
                nodes.push(None);
                stats.push((c.gl, c.hl));
                stats.push((g - c.gl, h - c.hl));
                let threshold = if c.threshold >= f64::INFINITY { f64::MAX } else { c.threshold };
                nodes[node] = Some(RegNode::Split { feature: c.feature, threshold, left, right: left + 1 });
                next.push(left);
                next.push(left + 1);
            }
            for (i, n) in node_of.iter_mut().enumerate() {
                if *n == u32::MAX {
                    continue;
                }
                if let Some(RegNode::Split { feature, threshold, left, right }) = nodes[*n as usize] {
                    let v = self.data[i * self.d + feature];
                    *n = if v <= threshold { left as u32 } else { right as u32 };
                }
            }
            slot_of = vec![usize::MAX; nodes.len()];
            for (s, &n) in next.iter().enumerate() {
                slot_of[n] = s;
            }
            frontier = next;
        }
        let nodes = nodes
            .into_iter()
            .zip(&stats)
            .map(|(n, &(g, h))| n.unwrap_or(RegNode::Leaf { value: self.leaf(g, h) }))
            .collect();
        RegTree { nodes }
    }
}

impl GbtModel {
    pub fn fit(ds: &TabularDataset, cfg: &GbtConfig) -> Result<Self> {
        Self::fit_with_history(ds, cfg).map(|(m, _)| m)
    }

    /// Fits and returns the mean training logistic loss after each round.
    pub fn fit_with_history(ds: &TabularDataset, cfg: &GbtConfig) -> Result<(Self, Vec<f64>)> {
        cfg.validate()?;
        let n = ds.n_rows();
        if n == 0 {
            return Err(Error::Empty("gbt training set".into()));
        }
        let [neg, pos] = ds.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::SingleClass);
        }
        let d = ds.n_cols();
        let sorted: Vec<Vec<u32>> = (0..d)
            .map(|f| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    ds.data[a as usize * d + f].total_cmp(&ds.data[b as usize * d + f]).then(a.cmp(&b))
                });
                idx
            })
            .collect();
        let builder = Builder { data: &ds.data, d, sorted: &sorted, cfg };
        let mut margins = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let mut node_of = vec![0u32; n];
        let mut trees = Vec::with_capacity(cfg.n_rounds);
        let mut history = Vec::with_capacity(cfg.n_rounds);
        let n_bag = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
        for round in 0..cfg.n_rounds {
            for i in 0..n {
                let p = sigmoid(margins[i]);
                grad[i] = p - f64::from(ds.labels[i]);
                hess[i] = p * (1.0 - p);
            }
            if n_bag < n {
                let mut rng = seed::stream_rng(cfg.seed, "gbt.subsample", round as u64);
                node_of.iter_mut().for_each(|v| *v = u32::MAX);
                for i in rand::seq::index::sample(&mut rng, n, n_bag) {
                    node_of[i] = 0;
                }
            } else {
                node_of.iter_mut().for_each(|v| *v = 0);
            }
            let tree = builder.build(&grad, &hess, &mut node_of);
            for (i, m) in margins.iter_mut().enumerate() {
                *m += tree.predict_row(&ds.data[i * d..(i + 1) * d]);
            }
            trees.push(tree);
            history.push(logistic_loss(&margins, &ds.labels));
        }
        Ok((Self { base_margin: 0.0, trees }, history))
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict_p1(&self, x: FeatureView<'_>) -> Vec<f64> {
        (0..x.n_rows()).map(|i| sigmoid(self.margin(x.row(i)))).collect()
    }
}
