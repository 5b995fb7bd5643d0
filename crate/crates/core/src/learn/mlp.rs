//! Fully connected ReLU network with a two-logit softmax output, trained with
//! Adam on mini-batches of the cross-entropy loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureView, TabularDataset};
use crate::float_bits;
use crate::seed;
use crate::{Error, Result};

/// Rows per parallel task; keeps small layers on one thread.
const PAR_ROWS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self { validation_fraction: 0.1, patience: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub early_stopping: Option<EarlyStopping>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![1024, 512, 256, 128],
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 50,
            early_stopping: Some(EarlyStopping::default()),
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("mlp: {m}")));
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("learning_rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if let Some(es) = &self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return bad("validation_fraction must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out` rows of `n_in` weights.
    #[serde(with = "float_bits::vec")]
    pub weights: Vec<f64>,
    #[serde(with = "float_bits::vec")]
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
}

/// Per-epoch losses recorded during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch (0-based) whose weights were kept.
    pub best_epoch: usize,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for i in (0..chunks).step_by(4) {
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Softmax probabilities of a two-logit row.
fn softmax2(z: &[f64]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn cross_entropy(z: &[f64], y: u8) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[y as usize]
}

impl Dense {
    fn forward(&self, input: &[f64], n: usize, relu: bool) -> Vec<f64> {
        let mut out = vec![0.0; n * self.n_out];
        out.par_chunks_mut(self.n_out)
            .with_min_len(PAR_ROWS)
            .enumerate()
            .for_each(|(b, row)| {
                let x = &input[b * self.n_in..(b + 1) * self.n_in];
                for (o, v) in row.iter_mut().enumerate() {
                    let z = dot(x, &self.weights[o * self.n_in..(o + 1) * self.n_in]) + self.bias[o];
                    *v = if relu { z.max(0.0) } else { z };
                }
            });
        out
    }
}

impl MlpModel {
    /// He-uniform weights, zero biases.
    pub fn new(n_in: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = seed::stream_rng(seed, "mlp.init", 0);
        let mut widths = vec![n_in];
        widths.extend_from_slice(hidden);
        widths.push(2);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Dense {
                    n_in: w[0],
                    n_out: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in layer order, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        for (dst, src) in self.params_mut().zip(p) {
            *dst = *src;
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Output of every layer; the last entry holds the logits.
    fn forward(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let input = if li == 0 { x } else { &outs[li - 1] };
            let relu = li + 1 < self.layers.len();
            let out = layer.forward(input, n, relu);
            outs.push(out);
        }
        outs
    }

    pub fn logits(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.forward(x, n).pop().unwrap_or_default()
    }

    /// Mean cross-entropy over the `n` rows of `x`.
    pub fn loss(&self, x: &[f64], y: &[u8], n: usize) -> f64 {
        let z = self.logits(x, n);
        (0..n).map(|b| cross_entropy(&z[2 * b..2 * b + 2], y[b])).sum::<f64>() / n as f64
    }

    /// Mean cross-entropy and its gradient, laid out like [`Self::params`].
    pub fn loss_and_gradient(&self, x: &[f64], y: &[u8], n: usize) -> (f64, Vec<f64>) {
        let outs = self.forward(x, n);
        let z = &outs[outs.len() - 1];
        let mut loss = 0.0;
        let mut delta = vec![0.0; 2 * n];
        for b in 0..n {
            let zb = &z[2 * b..2 * b + 2];
            loss += cross_entropy(zb, y[b]);
            let p = softmax2(zb);
            delta[2 * b] = p[0] / n as f64;
            delta[2 * b + 1] = p[1] / n as f64;
            delta[2 * b + y[b] as usize] -= 1.0 / n as f64;
        }
        loss /= n as f64;

        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (ni, no) = (layer.n_in, layer.n_out);
            let input: &[f64] = if li == 0 { x } else { &outs[li - 1] };
            let mut gw = vec![0.0; ni * no];
            gw.par_chunks_mut(ni).with_min_len(PAR_ROWS).enumerate().for_each(|(o, row)| {
                for b in 0..n {
                    let d = delta[b * no + o];
                    if d != 0.0 {
                        axpy(d, &input[b * ni..(b + 1) * ni], row);
                    }
                }
            });
            let gb: Vec<f64> = (0..no).map(|o| (0..n).map(|b| delta[b * no + o]).sum()).collect();
            if li > 0 {
                let mut prev = vec![0.0; n * ni];
                prev.par_chunks_mut(ni).with_min_len(PAR_ROWS).enumerate().for_each(|(b, row)| {
                    for o in 0..no {
                        let d = delta[b * no + o];
                        if d != 0.0 {
                            axpy(d, &layer.weights[o * ni..(o + 1) * ni], row);
                        }
                    }
                    let act = &input[b * ni..(b + 1) * ni];
                    for (r, a) in row.iter_mut().zip(act) {
                        if *a <= 0.0 {
                            *r = 0.0;
                        }
                    }
                });
                delta = prev;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let flat = grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
        (loss, flat)
    }

    pub fn fit(ds: &TabularDataset, cfg: &MlpConfig) -> Result<Self> {
        Self::fit_with_history(ds, cfg).map(|(m, _)| m)
    }

    pub fn fit_with_history(ds: &TabularDataset, cfg: &MlpConfig) -> Result<(Self, MlpHistory)> {
        cfg.validate()?;
        let n = ds.n_rows();
        if n == 0 {
            return Err(Error::Empty("mlp training set".into()));
        }
        let d = ds.n_cols();
        let mut model = Self::new(d, &cfg.hidden_layers, cfg.seed);

        let mut order: Vec<usize> = (0..n).collect();
        let mut val: Vec<usize> = Vec::new();
        let mut patience = usize::MAX;
        if let Some(es) = &cfg.early_stopping {
            let n_val = (n as f64 * es.validation_fraction).round() as usize;
            if n_val > 0 && n_val < n {
                order.shuffle(&mut seed::stream_rng(cfg.seed, "mlp.validation", 0));
                val = order.split_off(n - n_val);
                order.sort_unstable();
                patience = es.patience;
            }
        }
        let gather = |idx: &[usize]| -> (Vec<f64>, Vec<u8>) {
            let mut x = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                x.extend_from_slice(ds.row(i));
            }
            (x, idx.iter().map(|&i| ds.labels[i]).collect())
        };
        let (val_x, val_y) = gather(&val);

        let n_params = model.n_params();
        let mut m = vec![0.0; n_params];
        let mut v = vec![0.0; n_params];
        let mut step = 0i32;
        let mut history = MlpHistory { train_loss: Vec::new(), validation_loss: Vec::new(), best_epoch: 0 };
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut since_best = 0;

        for epoch in 0..cfg.max_epochs {
            order.shuffle(&mut seed::stream_rng(cfg.seed, "mlp.epoch", epoch as u64));
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let (bx, by) = gather(batch);
                let (loss, grad) = model.loss_and_gradient(&bx, &by, batch.len());
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
                }
                epoch_loss += loss * batch.len() as f64;
                step += 1;
                let c1 = 1.0 - cfg.beta1.powi(step);
                let c2 = 1.0 - cfg.beta2.powi(step);
                for (((p, g), mi), vi) in model.params_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                    *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                    *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                    *p -= cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + cfg.epsilon);
                }
            }
            history.train_loss.push(epoch_loss / order.len() as f64);
            if val.is_empty() {
                history.best_epoch = epoch;
                continue;
            }
            let vl = model.loss(&val_x, &val_y, val.len());
            if !vl.is_finite() {
                return Err(Error::Diverged(format!("non-finite validation loss in epoch {epoch}")));
            }
            history.validation_loss.push(vl);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, model.params()));
                history.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
        if let Some((_, p)) = best {
            model.set_params(&p);
        }
        Ok((model, history))
    }

    pub fn predict_proba(&self, x: FeatureView<'_>) -> Vec<[f64; 2]> {
        let n = x.n_rows();
        let z = self.logits(x.data, n);
        (0..n).map(|b| softmax2(&z[2 * b..2 * b + 2])).collect()
    }
}
