//! Brute-force k-nearest-neighbour classifier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureView, TabularDataset};
use crate::float_bits;
use crate::neighbors::k_nearest;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub n_cols: usize,
    #[serde(with = "float_bits::vec")]
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
}

impl KnnModel {
    pub fn fit(ds: &TabularDataset, cfg: &KnnConfig) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if cfg.k > ds.n_rows() {
            return Err(Error::KTooLarge { k: cfg.k, n: ds.n_rows() });
        }
        Ok(Self { k: cfg.k, n_cols: ds.n_cols(), data: ds.data.clone(), labels: ds.labels.clone() })
    }

    fn train_row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Fraction of positive labels among the k nearest training rows.
    pub fn predict_p1(&self, x: FeatureView<'_>) -> Vec<f64> {
        let candidates: Vec<usize> = (0..self.labels.len()).collect();
        (0..x.n_rows())
            .into_par_iter()
            .map(|q| {
                let nn = k_nearest(&candidates, |i| self.train_row(i), x.row(q), self.k, None);
                nn.iter().filter(|&&i| self.labels[i] == 1).count() as f64 / self.k as f64
            })
            .collect()
    }
}
