//! Bootstrap-aggregated CART trees with per-split feature sampling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, MaxFeatures, Sample, TreeConfig};
use crate::features::{FeatureView, TabularDataset};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
}

impl RandomForest {
    pub fn fit(ds: &TabularDataset, cfg: &ForestConfig) -> Self {
        let n = ds.n_rows();
        let tree_cfg = TreeConfig {
            max_depth: cfg.max_depth,
            min_samples_split: cfg.min_samples_split,
            features_per_split: cfg.features_per_split,
            seed: cfg.seed,
        };
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::stream_rng(cfg.seed, "forest.tree", t as u64);
                let samples: Vec<Sample> = if cfg.bootstrap {
                    let mut counts = vec![0u32; n];
                    for _ in 0..n {
                        counts[rng.random_range(0..n)] += 1;
                    }
                    counts
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(|(i, &c)| Sample { idx: i as u32, weight: c })
                        .collect()
                } else {
                    (0..n).map(|i| Sample { idx: i as u32, weight: 1 }).collect()
                };
                DecisionTree::fit_samples(&ds.data, ds.n_cols(), &ds.labels, samples, &tree_cfg, &mut rng)
            })
            .collect();
        Self { trees, n_features: ds.n_cols() }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_p1(&self, x: FeatureView<'_>) -> Vec<f64> {
        (0..x.n_rows()).into_par_iter().map(|i| self.predict_row(x.row(i))).collect()
    }

    /// Mean decrease in impurity: normalised per tree, averaged, renormalised.
    /// All zeros when no tree ever split.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_features];
        for t in &self.trees {
            let total: f64 = t.impurity_decrease.iter().sum();
            if total > 0.0 {
                for (a, v) in acc.iter_mut().zip(&t.impurity_decrease) {
                    *a += v / total;
                }
            }
        }
        let sum: f64 = acc.iter().sum();
        if sum > 0.0 {
            acc.iter_mut().for_each(|a| *a /= sum);
        }
        acc
    }
}
