//! Challenge metrics, stratified k-fold splitting and cross-validation reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{fit_preprocess, transform, PreprocessState, TabularDataset};
use crate::learn::{self, classify, ModelConfig, TrainedModel};
use crate::resample::{self, ResampleConfig};
use crate::seed::{self, derive_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// Recall of class 1; `None` when no positives were present.
    pub sensitivity: Option<f64>,
    /// Recall of class 0; `None` when no negatives were present.
    pub specificity: Option<f64>,
    /// Geometric mean of sensitivity and specificity.
    pub score: Option<f64>,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn geometric_score(sensitivity: f64, specificity: f64) -> f64 {
    (sensitivity * specificity).sqrt()
}

impl EvalMetrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Result<Self> {
        let n = tp + tn + fp + fn_;
        if n == 0 {
            return Err(Error::Empty("no predictions to score".into()));
        }
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        let sensitivity = ratio(tp, fn_);
        let specificity = ratio(tn, fp);
        let score = match (sensitivity, specificity) {
            (Some(a), Some(b)) => Some(geometric_score(a, b)),
            _ => None,
        };
        Ok(Self { accuracy: (tp + tn) as f64 / n as f64, sensitivity, specificity, score, tp, tn, fp, fn_ })
    }

    pub fn n(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn compute_metrics(y_true: &[u8], y_pred: &[u8]) -> Result<EvalMetrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t > 1 || p > 1 {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (0, _) => fp += 1,
            _ => fn_ += 1,
        }
    }
    EvalMetrics::from_counts(tp, tn, fp, fn_)
}

/// Predicts the more frequent class (0 on a tie) for every row.
pub fn majority_baseline(ds: &TabularDataset) -> Result<EvalMetrics> {
    let [neg, pos] = ds.class_counts();
    let label = u8::from(pos > neg);
    compute_metrics(&ds.labels, &vec![label; ds.n_rows()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Validation row indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
    pub stratified: bool,
    pub warning: Option<String>,
}

impl FoldPlan {
    /// Every row not in fold `f`, ascending.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        let mut rows: Vec<usize> =
            self.folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
        rows.sort_unstable();
        rows
    }
}

/// Seeded stratified partition: each class is shuffled on its own, the
/// classes are concatenated and rows are dealt round-robin into `k` folds.
/// Falls back to a plain shuffle when a class has fewer than `k` rows.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k = {k}; need at least 2 folds")));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("{n} rows cannot fill {k} folds")));
    }
    let mut rng = seed::stream_rng(seed, "cv.folds", 0);
    let (mut neg, mut pos): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i] == 0);
    let smallest = neg.len().min(pos.len());
    let (order, stratified, warning) = if smallest < k {
        let msg = format!("a class has {smallest} rows, fewer than {k} folds; folds are not stratified");
        warn!("{msg}");
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        (all, false, Some(msg))
    } else {
        neg.shuffle(&mut rng);
        pos.shuffle(&mut rng);
        neg.extend(pos);
        (neg, true, None)
    };
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (j, i) in order.into_iter().enumerate() {
        folds[j % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { folds, stratified, warning })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessPolicy {
    /// Mode imputation and min-max scaling fitted on each training split.
    #[default]
    FitPerFold,
    /// Features are used as given.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub variant: Option<String>,
    pub n_rows: usize,
    pub columns: Vec<String>,
    pub model: ModelConfig,
    pub resampler: Option<ResampleConfig>,
    pub preprocess: PreprocessPolicy,
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub artifact_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    /// Training rows after resampling.
    pub n_fit: usize,
    pub n_validation: usize,
    pub metrics: EvalMetrics,
}

/// Mean of per-fold metrics; a metric is `None` if any fold left it undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub score: Option<f64>,
    pub undefined_folds: Vec<usize>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl MacroMetrics {
    pub fn from_folds(folds: &[FoldReport]) -> Self {
        let m = |f: fn(&EvalMetrics) -> Option<f64>| mean_defined(folds.iter().map(|r| f(&r.metrics)));
        Self {
            accuracy: folds.iter().map(|r| r.metrics.accuracy).sum::<f64>() / folds.len().max(1) as f64,
            sensitivity: m(|e| e.sensitivity),
            specificity: m(|e| e.specificity),
            score: m(|e| e.score),
            undefined_folds: folds.iter().filter(|r| r.metrics.score.is_none()).map(|r| r.fold).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fingerprint: Fingerprint,
    pub folds: Vec<FoldReport>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    /// Metrics of the summed confusion counts.
    pub pooled: EvalMetrics,
    /// Majority-class predictor over the whole dataset.
    pub baseline: EvalMetrics,
    pub warnings: Vec<String>,
}

/// Everything one fold produced, handed to an inspector before scoring.
pub struct FoldArtifacts<'a> {
    pub fold: usize,
    pub train_rows: &'a [usize],
    pub validation_rows: &'a [usize],
    pub preprocess: Option<&'a PreprocessState>,
    /// Training set after preprocessing and resampling.
    pub fit_set: &'a TabularDataset,
    /// Validation set after preprocessing.
    pub validation_set: &'a TabularDataset,
    pub model: &'a TrainedModel,
}

pub struct CvSpec<'a> {
    pub model: &'a ModelConfig,
    pub resampler: Option<&'a ResampleConfig>,
    pub preprocess: PreprocessPolicy,
    pub k: usize,
    pub seed: u64,
}

pub fn cross_validate(
    ds: &TabularDataset,
    model: &ModelConfig,
    resampler: Option<&ResampleConfig>,
    preprocess: PreprocessPolicy,
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    cross_validate_with(ds, &CvSpec { model, resampler, preprocess, k, seed }, |_| {})
}

/// Cross-validation with a hook that sees each fold's intermediate artifacts.
///
/// Config seeds are replaced per fold by sub-streams of `spec.seed`.
pub fn cross_validate_with<F>(ds: &TabularDataset, spec: &CvSpec<'_>, inspect: F) -> Result<CvReport>
where
    F: Fn(&FoldArtifacts<'_>) + Sync,
{
    spec.model.validate()?;
    if let Some(r) = spec.resampler {
        r.validate()?;
    }
    let plan = kfold_split(&ds.labels, spec.k, spec.seed)?;
    let folds: Vec<FoldReport> = (0..spec.k)
        .into_par_iter()
        .map(|f| run_fold(ds, spec, &plan, f, &inspect).map_err(|e| Error::Fold { fold: f, source: Box::new(e) }))
        .collect::<Result<_>>()?;

    let sum = |g: fn(&EvalMetrics) -> usize| folds.iter().map(|r| g(&r.metrics)).sum::<usize>();
    let pooled = EvalMetrics::from_counts(sum(|m| m.tp), sum(|m| m.tn), sum(|m| m.fp), sum(|m| m.fn_))?;
    let mut warnings: Vec<String> = plan.warning.iter().cloned().collect();
    for r in &folds {
        if r.metrics.score.is_none() {
            warnings.push(format!("fold {}: score undefined (validation split lacks a class)", r.fold));
        }
    }
    Ok(CvReport {
        fingerprint: Fingerprint {
            variant: ds.variant.map(|v| v.to_string()),
            n_rows: ds.n_rows(),
            columns: ds.columns.clone(),
            model: spec.model.clone(),
            resampler: spec.resampler.cloned(),
            preprocess: spec.preprocess,
            k: spec.k,
            seed: spec.seed,
            stratified: plan.stratified,
            artifact_version: crate::ARTIFACT_VERSION.to_string(),
        },
        macro_avg: MacroMetrics::from_folds(&folds),
        pooled,
        baseline: majority_baseline(ds)?,
        folds,
        warnings,
    })
}

fn run_fold<F>(ds: &TabularDataset, spec: &CvSpec<'_>, plan: &FoldPlan, f: usize, inspect: &F) -> Result<FoldReport>
where
    F: Fn(&FoldArtifacts<'_>),
{
    let validation_rows = &plan.folds[f];
    let train_rows = plan.train_rows(f);
    let train = ds.select_rows(&train_rows);
    let valid = ds.select_rows(validation_rows);
    let (state, train, valid) = match spec.preprocess {
        PreprocessPolicy::FitPerFold => {
            let st = fit_preprocess(&train)?;
            let t = transform(&train, &st)?;
            let v = transform(&valid, &st)?;
            (Some(st), t, v)
        }
        PreprocessPolicy::None => (None, train, valid),
    };
    let fit_set = match spec.resampler {
        Some(r) => {
            let cfg = ResampleConfig { seed: derive_seed(spec.seed, "cv.resample", f as u64), ..r.clone() };
            resample::resample(&train, &cfg)?
        }
        None => train,
    };
    let model_cfg = spec.model.with_seed(derive_seed(spec.seed, "cv.model", f as u64));
    let model = learn::fit(&model_cfg, &fit_set)?;
    inspect(&FoldArtifacts {
        fold: f,
        train_rows: &train_rows,
        validation_rows,
        preprocess: state.as_ref(),
        fit_set: &fit_set,
        validation_set: &valid,
        model: &model,
    });
    let pred: Vec<u8> = model.predict_proba(valid.view())?.into_iter().map(classify).collect();
    Ok(FoldReport {
        fold: f,
        n_train: train_rows.len(),
        n_fit: fit_set.n_rows(),
        n_validation: validation_rows.len(),
        metrics: compute_metrics(&valid.labels, &pred)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// One row per fold, then `macro` and `pooled` rows. Undefined metrics are empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record([
            "fold", "n_train", "n_fit", "n_validation", "tp", "tn", "fp", "fn", "accuracy", "sensitivity",
            "specificity", "score",
        ])?;
        for r in &self.folds {
            let m = &r.metrics;
            w.write_record([
                r.fold.to_string(),
                r.n_train.to_string(),
                r.n_fit.to_string(),
                r.n_validation.to_string(),
                m.tp.to_string(),
                m.tn.to_string(),
                m.fp.to_string(),
                m.fn_.to_string(),
                m.accuracy.to_string(),
                opt(m.sensitivity),
                opt(m.specificity),
                opt(m.score),
            ])?;
        }
        let a = &self.macro_avg;
        w.write_record([
            "macro".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            a.accuracy.to_string(),
            opt(a.sensitivity),
            opt(a.specificity),
            opt(a.score),
        ])?;
        let p = &self.pooled;
        w.write_record([
            "pooled".to_string(),
            String::new(),
            String::new(),
            p.n().to_string(),
            p.tp.to_string(),
            p.tn.to_string(),
            p.fp.to_string(),
            p.fn_.to_string(),
            p.accuracy.to_string(),
            opt(p.sensitivity),
            opt(p.specificity),
            opt(p.score),
        ])?;
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
        Ok(())
    }
}
