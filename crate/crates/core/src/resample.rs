//! Minority-class oversampling: random duplication, SMOTE and ADASYN.
//!
//! Output rows are the original rows in their original order followed by the
//! synthetic rows in generation order. Majority rows are never touched.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TabularDataset;
use crate::neighbors::k_nearest;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    Random,
    Smote,
    Adasyn,
}

impl std::str::FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "smote" => Ok(Self::Smote),
            "adasyn" => Ok(Self::Adasyn),
            _ => Err(Error::InvalidConfig(format!("unknown resampler `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleConfig {
    pub method: ResampleMethod,
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default)]
    pub seed: u64,
    /// Desired minority/majority ratio after resampling.
    #[serde(default = "default_ratio")]
    pub target_ratio: f64,
}

fn default_k() -> usize {
    5
}

fn default_ratio() -> f64 {
    1.0
}

impl ResampleConfig {
    pub fn new(method: ResampleMethod, seed: u64) -> Self {
        Self { method, k_neighbors: default_k(), seed, target_ratio: default_ratio() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::InvalidConfig("k_neighbors must be at least 1".into()));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_ratio {} is outside (0, 1]",
                self.target_ratio
            )));
        }
        Ok(())
    }
}

/// Which label is the minority and how many rows must be synthesised.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Imbalance {
    pub minority_label: u8,
    pub minority: Vec<usize>,
    pub majority: Vec<usize>,
    pub needed: usize,
}

pub fn imbalance(ds: &TabularDataset, target_ratio: f64) -> Result<Imbalance> {
    let (mut neg, mut pos) = (Vec::new(), Vec::new());
    for (i, &l) in ds.labels.iter().enumerate() {
        if l == 1 { pos.push(i) } else { neg.push(i) }
    }
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::SingleClass);
    }
    let (minority_label, minority, majority) =
        if pos.len() <= neg.len() { (1, pos, neg) } else { (0, neg, pos) };
    let target = (target_ratio * majority.len() as f64).round() as usize;
    let needed = target.saturating_sub(minority.len());
    Ok(Imbalance { minority_label, minority, majority, needed })
}

pub fn resample(ds: &TabularDataset, cfg: &ResampleConfig) -> Result<TabularDataset> {
    match cfg.method {
        ResampleMethod::Random => random_oversample(ds, cfg),
        ResampleMethod::Smote => smote(ds, cfg),
        ResampleMethod::Adasyn => adasyn(ds, cfg),
    }
}

/// Duplicates minority rows, drawn with replacement, until the target ratio.
pub fn random_oversample(ds: &TabularDataset, cfg: &ResampleConfig) -> Result<TabularDataset> {
    cfg.validate()?;
    let imb = imbalance(ds, cfg.target_ratio)?;
    let mut rng = seed::stream_rng(cfg.seed, "resample.random", 0);
    let mut out = ds.clone();
    for _ in 0..imb.needed {
        let src = imb.minority[rng.random_range(0..imb.minority.len())];
        let row = ds.row(src).to_vec();
        out.push_row(&row, imb.minority_label);
    }
    Ok(out)
}

fn check_minority(imb: &Imbalance) -> Result<()> {
    if imb.minority.len() < 2 {
        return Err(Error::TooFewMinority { needed: 2, found: imb.minority.len() });
    }
    Ok(())
}

/// k nearest minority neighbours of each minority row (positions into `minority`).
fn minority_neighbours(ds: &TabularDataset, minority: &[usize], k: usize) -> Vec<Vec<usize>> {
    let k = k.min(minority.len() - 1).max(1);
    minority
        .par_iter()
        .map(|&i| k_nearest(minority, |j| ds.row(j), ds.row(i), k, Some(i)))
        .collect()
}

fn interpolate(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + lambda * (y - x)).collect()
}

/// SMOTE: each synthetic row lies on the segment between a random minority
/// row and one of its k nearest minority neighbours.
pub fn smote(ds: &TabularDataset, cfg: &ResampleConfig) -> Result<TabularDataset> {
    cfg.validate()?;
    let imb = imbalance(ds, cfg.target_ratio)?;
    check_minority(&imb)?;
    let mut out = ds.clone();
    if imb.needed == 0 {
        return Ok(out);
    }
    let nn = minority_neighbours(ds, &imb.minority, cfg.k_neighbors);
    let mut rng = seed::stream_rng(cfg.seed, "resample.smote", 0);
    for _ in 0..imb.needed {
        let base = rng.random_range(0..imb.minority.len());
        let partner = nn[base][rng.random_range(0..nn[base].len())];
        let lambda: f64 = rng.random();
        let row = interpolate(ds.row(imb.minority[base]), ds.row(partner), lambda);
        out.push_row(&row, imb.minority_label);
    }
    Ok(out)
}

/// Splits `total` proportionally to `weights` (which need not be normalised)
/// so that the parts sum to `total` exactly. Remainders go to the largest
/// fractional parts, lower index first on ties.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    let quotas: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / weights.len() as f64; weights.len()]
    };
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Per-minority-row difficulty and synthetic-sample allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdasynPlan {
    pub minority: Vec<usize>,
    /// Fraction of majority rows among each minority row's k nearest
    /// neighbours in the full dataset.
    pub ratios: Vec<f64>,
    pub allocation: Vec<usize>,
    /// True when every ratio was zero and allocation fell back to uniform.
    pub uniform_fallback: bool,
}

pub fn adasyn_plan(ds: &TabularDataset, cfg: &ResampleConfig) -> Result<AdasynPlan> {
    cfg.validate()?;
    let imb = imbalance(ds, cfg.target_ratio)?;
    check_minority(&imb)?;
    let all: Vec<usize> = (0..ds.n_rows()).collect();
    let k = cfg.k_neighbors.min(ds.n_rows() - 1);
    let ratios: Vec<f64> = imb
        .minority
        .par_iter()
        .map(|&i| {
            let nn = k_nearest(&all, |j| ds.row(j), ds.row(i), k, Some(i));
            let majority = nn.iter().filter(|&&j| ds.labels[j] != imb.minority_label).count();
            majority as f64 / k as f64
        })
        .collect();
    let uniform_fallback = ratios.iter().all(|&r| r == 0.0);
    let allocation = largest_remainder(&ratios, imb.needed);
    Ok(AdasynPlan { minority: imb.minority, ratios, allocation, uniform_fallback })
}

/// ADASYN: like SMOTE, but minority rows with more majority neighbours
/// receive proportionally more synthetic rows.
pub fn adasyn(ds: &TabularDataset, cfg: &ResampleConfig) -> Result<TabularDataset> {
    let plan = adasyn_plan(ds, cfg)?;
    let label = ds.labels[plan.minority[0]];
    let mut out = ds.clone();
    if plan.allocation.iter().all(|&g| g == 0) {
        return Ok(out);
    }
    let nn = minority_neighbours(ds, &plan.minority, cfg.k_neighbors);
    let mut rng = seed::stream_rng(cfg.seed, "resample.adasyn", 0);
    for (pos, &g) in plan.allocation.iter().enumerate() {
        let base = ds.row(plan.minority[pos]);
        for _ in 0..g {
            let partner = nn[pos][rng.random_range(0..nn[pos].len())];
            let lambda: f64 = rng.random();
            let row = interpolate(base, ds.row(partner), lambda);
            out.push_row(&row, label);
        }
    }
    Ok(out)
}
