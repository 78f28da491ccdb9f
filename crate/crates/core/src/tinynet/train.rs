use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_grad, LossKind};
use super::network::{Network, Params, Real};
use crate::error::{invalid, Result};

/// Examples per gradient work unit. Fixed so the reduction order (and hence
/// every bit of the result) does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// HWC tensor values.
    pub input: Vec<f32>,
    /// Extra scalars appended at Flatten (empty for classification).
    pub side: Vec<f32>,
    pub target: Vec<f32>,
    /// Loss multiplier (class weighting); 1.0 by default.
    pub weight: f32,
}

impl Example {
    pub fn new(input: Vec<f32>, side: Vec<f32>, target: Vec<f32>) -> Self {
        Self { input, side, target, weight: 1.0 }
    }

    /// Index of the largest target entry (ties -> lowest index).
    pub fn class(&self) -> usize {
        argmax(&self.target)
    }
}

pub fn argmax<T: PartialOrd>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-7 },
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.learning_rate) || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(invalid("learning rate, batch size, max epochs and patience must be positive"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !pos(eps) {
                return Err(invalid("adam needs betas in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Test loss did not improve for `patience` epochs.
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    /// Per-epoch accuracies; empty for single-output (regression) networks.
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub epochs_run: usize,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: f64,
    /// Accuracy restricted to each true class; `None` if the class is absent.
    pub per_class: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
    pub mean_loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn to_t<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|x| T::from(*x).unwrap()).collect()
}

/// Summed gradients (scaled by `scale`) and weighted losses over `batch`.
#[derive(Debug, Clone)]
pub struct BatchGradient<T> {
    pub grads: Params<T>,
    pub loss_sum: f64,
    /// Examples whose argmax already matched the target.
    pub correct: usize,
}

pub fn batch_gradient<T: Real>(net: &Network<T>, batch: &[&Example], kind: LossKind, scale: f64) -> Result<BatchGradient<T>> {
    let parts: Vec<Result<BatchGradient<T>>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut part = BatchGradient { grads: net.params.zeros_like(), loss_sum: 0.0, correct: 0 };
            for ex in chunk {
                let trace = net.forward(&to_t::<T>(&ex.input), &to_t::<T>(&ex.side))?;
                let target = to_t::<T>(&ex.target);
                let w = ex.weight as f64;
                part.loss_sum += w * loss(trace.output(), &target, kind)?;
                part.correct += usize::from(argmax(trace.output()) == ex.class());
                let k = T::from(w * scale).unwrap();
                let d: Vec<T> = loss_grad(trace.output(), &target, kind)?.into_iter().map(|v| v * k).collect();
                net.backward(&trace, &d, &mut part.grads);
            }
            Ok(part)
        })
        .collect();
    let mut total = BatchGradient { grads: net.params.zeros_like(), loss_sum: 0.0, correct: 0 };
    for part in parts {
        let part = part?;
        total.grads.add_assign(&part.grads);
        total.loss_sum += part.loss_sum;
        total.correct += part.correct;
    }
    Ok(total)
}

struct AdamState<T> {
    m: Params<T>,
    v: Params<T>,
    t: i32,
}

fn apply_update<T: Real>(net: &mut Network<T>, grads: &Params<T>, cfg: &TrainConfig, adam: &mut AdamState<T>) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            let lr = T::from(lr).unwrap();
            for (p, g) in net.params.iter_mut().zip(grads.iter()) {
                *p = *p - lr * *g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let step = lr * (1.0 - beta2.powi(adam.t)).sqrt() / (1.0 - beta1.powi(adam.t));
            let (b1, b2) = (T::from(beta1).unwrap(), T::from(beta2).unwrap());
            let (step, eps) = (T::from(step).unwrap(), T::from(eps).unwrap());
            let one = T::one();
            for (((p, g), m), v) in net.params.iter_mut().zip(grads.iter()).zip(adam.m.iter_mut()).zip(adam.v.iter_mut()) {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                *p = *p - step * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Mini-batch training with early stopping on test loss. Returns the network
/// restored to its best-test-loss epoch.
pub fn train<T: Real>(
    mut net: Network<T>,
    train_set: &[Example],
    test_set: &[Example],
    cfg: &TrainConfig,
) -> Result<(Network<T>, TrainReport)> {
    let report = train_with_progress(&mut net, train_set, test_set, cfg, |_, _| {})?;
    Ok((net, report))
}

/// Like `train`, calling `progress(epoch, report_so_far)` after every epoch.
pub fn train_with_progress<T: Real>(
    net: &mut Network<T>,
    train_set: &[Example],
    test_set: &[Example],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, &TrainReport),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(invalid("training and test sets must be non-empty"));
    }
    let classify = net.output_len() > 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = AdamState { m: net.params.zeros_like(), v: net.params.zeros_like(), t: 0 };
    let mut report = TrainReport {
        train_loss: vec![],
        test_loss: vec![],
        train_accuracy: vec![],
        test_accuracy: vec![],
        epochs_run: 0,
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best = (f64::INFINITY, net.params.clone());
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum_loss = 0.0;
        let mut correct = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let g = batch_gradient(net, &batch, cfg.loss, 1.0 / batch.len() as f64)?;
            sum_loss += g.loss_sum;
            // Accuracy of the pre-update weights, as seen during the epoch.
            correct += g.correct;
            apply_update(net, &g.grads, cfg, &mut adam);
        }
        let test = evaluate(net, test_set, cfg.loss)?;
        report.train_loss.push(sum_loss / train_set.len() as f64);
        report.test_loss.push(test.mean_loss);
        if classify {
            report.train_accuracy.push(correct as f64 / train_set.len() as f64);
            report.test_accuracy.push(test.overall);
        }
        report.epochs_run = epoch;
        if test.mean_loss < best.0 {
            best = (test.mean_loss, net.params.clone());
            report.best_epoch = epoch;
        }
        progress(epoch, &report);
        if epoch - report.best_epoch >= cfg.patience {
            report.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    net.params = best.1;
    Ok(report)
}

/// Accuracy (argmax agreement, ties -> lowest index) and mean weighted loss.
pub fn evaluate<T: Real>(net: &Network<T>, set: &[Example], kind: LossKind) -> Result<Metrics> {
    let k = net.output_len();
    let preds: Vec<Result<(usize, f64)>> = set
        .par_iter()
        .map(|ex| {
            let p = net.predict(&to_t::<T>(&ex.input), &to_t::<T>(&ex.side))?;
            let l = loss(&p, &to_t::<T>(&ex.target), kind)? * ex.weight as f64;
            Ok((argmax(&p), l))
        })
        .collect();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut total_loss = 0.0;
    for (ex, r) in set.iter().zip(preds) {
        let (pred, l) = r?;
        total_loss += l;
        confusion[ex.class().min(k - 1)][pred] += 1;
    }
    let n = set.len();
    let class_counts: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = (0..k)
        .map(|c| (class_counts[c] > 0).then(|| confusion[c][c] as f64 / class_counts[c] as f64))
        .collect();
    Ok(Metrics {
        overall: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        per_class,
        class_counts,
        mean_loss: if n == 0 { 0.0 } else { total_loss / n as f64 },
        confusion,
    })
}
