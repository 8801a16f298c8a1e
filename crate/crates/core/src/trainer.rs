//! Adam training with a step-decay schedule, subject-level k-fold splits and
//! binary classification metrics (ASD = label 1 is the positive class).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::boxcox::{boxcox_apply, boxcox_fit, BoxCoxError, BoxCoxParams};
use crate::graph::{BrainGraph, GraphDataset};
use crate::model::{GNNModel, ModelConfig, ModelError, Params};
use crate::rng::{rng_for, stage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("{subjects} distinct subjects cannot fill {folds} folds")]
    TooFewSubjects { subjects: usize, folds: usize },
    #[error("non-finite gradient; step skipped")]
    NonFiniteGradient,
    #[error("parameter and gradient structures differ")]
    Structure,
    #[error("cannot evaluate on an empty set")]
    EmptyEvaluation,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    BoxCox(#[from] BoxCoxError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub seed: u64,
    /// Weights each class's cross-entropy by `n / (2·n_class)` so both
    /// classes contribute equally regardless of augmentation counts.
    pub class_balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            decay_factor: 10.0,
            decay_every: 50,
            epochs: 300,
            batch_size: 16,
            folds: 5,
            seed: 0,
            class_balanced: false,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            out.push("train.lr0 must be positive".into());
        }
        if !(self.decay_factor >= 1.0 && self.decay_factor.is_finite()) {
            out.push("train.decay_factor must be >= 1".into());
        }
        if self.decay_every == 0 {
            out.push("train.decay_every must be positive".into());
        }
        if self.batch_size == 0 {
            out.push("train.batch_size must be positive".into());
        }
        if self.folds < 2 {
            out.push("train.folds must be at least 2".into());
        }
        out
    }

    /// `lr0 · decay_factor^(−floor(epoch / decay_every))`.
    pub fn lr_schedule(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay_factor.powi(-((epoch / self.decay_every) as i32))
    }
}

/// Bias-corrected Adam state over a flat list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Params<Tensor>) -> Self {
        let zeros: Vec<Tensor> = params
            .values()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update. A non-finite gradient leaves parameters and state
    /// untouched.
    pub fn step(
        &mut self,
        params: &mut Params<Tensor>,
        grads: &Params<Tensor>,
        lr: f64,
    ) -> Result<(), TrainError> {
        let g = grads.values();
        let p = params.values();
        if g.len() != self.m.len()
            || p.len() != g.len()
            || p.iter().zip(&g).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(TrainError::Structure);
        }
        if g.iter().any(|t| !t.is_finite()) {
            return Err(TrainError::NonFiniteGradient);
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut updated = Vec::with_capacity(p.len());
        for (k, (param, grad)) in p.into_iter().zip(g).enumerate() {
            let mut out = param.clone();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, x) in out.data_mut().iter_mut().enumerate() {
                let gi = grad.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
            updated.push(out);
        }
        *params = params.rebuild(updated).ok_or(TrainError::Structure)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Metrics {
    /// Metrics of `predicted` against `actual`, label 1 positive. Precision
    /// and recall are 0 when their denominators are.
    pub fn from_labels(actual: &[u8], predicted: &[u8]) -> Result<Self, TrainError> {
        if actual.is_empty() || actual.len() != predicted.len() {
            return Err(TrainError::EmptyEvaluation);
        }
        let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
        for (&a, &p) in actual.iter().zip(predicted) {
            correct += usize::from(a == p);
            match (a, p) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (1, 0) => fneg += 1,
                _ => {}
            }
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Self {
            accuracy: ratio(correct, actual.len()),
            f_score,
            precision,
            recall,
        })
    }
}

/// Class 1 when `p(ASD) > 0.5`.
pub fn predicted_label(probs: [f64; 2]) -> u8 {
    u8::from(probs[1] > 0.5)
}

pub fn evaluate(m: &GNNModel, test: &[BrainGraph]) -> Result<Metrics, TrainError> {
    if test.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    let predicted = test
        .par_iter()
        .map(|g| m.predict(g).map(predicted_label))
        .collect::<Result<Vec<_>, _>>()?;
    let actual: Vec<u8> = test.iter().map(BrainGraph::label).collect();
    Metrics::from_labels(&actual, &predicted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Subject-level folds. Sorted subject ids are shuffled with the split seed
/// and dealt round-robin; every graph follows its subject.
pub fn kfold_split(ds: &GraphDataset, folds: usize, seed: u64) -> Result<Vec<Split>, TrainError> {
    let subjects: Vec<&str> = ds
        .graphs
        .iter()
        .map(BrainGraph::subject_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if folds == 0 || subjects.len() < folds {
        return Err(TrainError::TooFewSubjects {
            subjects: subjects.len(),
            folds,
        });
    }
    let mut order = subjects;
    order.shuffle(&mut rng_for(seed, stage::SPLIT, 0));
    let fold_of: std::collections::HashMap<&str, usize> =
        order.iter().enumerate().map(|(k, &s)| (s, k % folds)).collect();
    Ok((0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| fold_of[ds.graphs[i].subject_id()] == f);
            Split { fold: f, train, test }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Running metrics from the predictions made during the epoch.
    pub metrics: Metrics,
}

pub const LOG_HEADER: &str = "epoch,lr,loss,acc,f1,precision,recall";

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for e in log {
        let m = &e.metrics;
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.lr, e.loss, m.accuracy, m.f_score, m.precision, m.recall
        ));
    }
    s
}

pub struct TrainOutcome {
    pub model: GNNModel,
    pub log: Vec<EpochLog>,
    /// Epoch at which a non-finite loss or gradient stopped training; the
    /// returned model is the last one with finite values.
    pub diverged: Option<usize>,
}

fn add_scaled(acc: &mut [Tensor], g: &Params<Tensor>, w: f64) {
    for (a, t) in acc.iter_mut().zip(g.values()) {
        for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
            *x += w * y;
        }
    }
}

/// Minibatch training. Per-graph gradients are computed in parallel and
/// summed in batch order, so results do not depend on thread count.
pub fn train(
    model: GNNModel,
    graphs: &[BrainGraph],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(TrainError::Config(problems.join("; ")));
    }
    let mut model = model;
    let mut adam = AdamState::new(&model.params);
    let mut log = Vec::with_capacity(cfg.epochs);
    if graphs.is_empty() || cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            log,
            diverged: None,
        });
    }
    let n = graphs.len() as f64;
    let n1 = graphs.iter().filter(|g| g.label() == 1).count() as f64;
    let class_weight = |label: u8| {
        if !cfg.class_balanced {
            return 1.0;
        }
        let nc = if label == 1 { n1 } else { n - n1 };
        if nc == 0.0 {
            1.0
        } else {
            n / (2.0 * nc)
        }
    };

    let mut order: Vec<usize> = (0..graphs.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule(epoch);
        order.shuffle(&mut rng_for(cfg.seed, stage::SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut actual = Vec::with_capacity(graphs.len());
        let mut predicted = Vec::with_capacity(graphs.len());
        for batch in order.chunks(cfg.batch_size) {
            let per: Vec<_> = batch
                .par_iter()
                .map(|&i| model.graph_gradients(&graphs[i]))
                .collect::<Result<_, _>>()?;
            let (reg, reg_grads) = model.regularization_gradients()?;
            let mut acc: Vec<Tensor> = reg_grads.values().into_iter().cloned().collect();
            let mut loss = reg;
            let scale = 1.0 / batch.len() as f64;
            for (&i, p) in batch.iter().zip(&per) {
                let w = class_weight(graphs[i].label()) * scale;
                loss += w * p.loss;
                add_scaled(&mut acc, &p.grads, w);
                actual.push(graphs[i].label());
                predicted.push(predicted_label(p.probs));
            }
            let grads = model.params.rebuild(acc).ok_or(TrainError::Structure)?;
            if !loss.is_finite() {
                return Ok(TrainOutcome {
                    model,
                    log,
                    diverged: Some(epoch),
                });
            }
            match adam.step(&mut model.params, &grads, lr) {
                Ok(()) => {}
                Err(TrainError::NonFiniteGradient) => {
                    return Ok(TrainOutcome {
                        model,
                        log,
                        diverged: Some(epoch),
                    })
                }
                Err(e) => return Err(e),
            }
            loss_sum += loss;
            batches += 1;
        }
        log.push(EpochLog {
            epoch,
            lr,
            loss: loss_sum / batches as f64,
            metrics: Metrics::from_labels(&actual, &predicted)?,
        });
    }
    Ok(TrainOutcome {
        model,
        log,
        diverged: None,
    })
}

/// Everything one cross-validation fold produces.
pub struct FoldResult {
    pub split: Split,
    pub boxcox: BoxCoxParams,
    pub outcome: TrainOutcome,
    pub test_metrics: Metrics,
}

/// Fits Box-Cox on the training graphs of `split`, trains a freshly
/// initialized model on them and evaluates on the normalized test graphs.
pub fn run_fold(
    ds: &GraphDataset,
    split: &Split,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FoldResult, TrainError> {
    let train_raw = ds.subset(&split.train);
    let boxcox = boxcox_fit(&train_raw)?;
    let train_ds = boxcox_apply(&train_raw, &boxcox)?.dataset;
    let test_ds = boxcox_apply(&ds.subset(&split.test), &boxcox)?.dataset;
    let model = GNNModel::new(
        model_cfg.clone(),
        &mut rng_for(cfg.seed, stage::INIT, split.fold as u64),
    )?;
    let fold_cfg = TrainConfig {
        seed: crate::rng::derive_seed(cfg.seed, stage::SHUFFLE, split.fold as u64),
        ..cfg.clone()
    };
    let outcome = train(model, &train_ds.graphs, &fold_cfg)?;
    let test_metrics = evaluate(&outcome.model, &test_ds.graphs)?;
    Ok(FoldResult {
        split: split.clone(),
        boxcox,
        outcome,
        test_metrics,
    })
}

/// Runs every fold in parallel.
pub fn cross_validate(
    ds: &GraphDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<FoldResult>, TrainError> {
    kfold_split(ds, cfg.folds, cfg.seed)?
        .par_iter()
        .map(|s| run_fold(ds, s, model_cfg, cfg))
        .collect()
}
