//! Interpretation of a trained classifier: evidence for the correct class
//! (ECC) of community sub-graphs, node importance aggregated from it, and
//! gradient sensitivity of `p(ASD)` to each node attribute.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Axis, Tape, Tensor};
use crate::community::Community;
use crate::graph::{slice_subgraph, BrainGraph, GraphDataset, GraphError, SubGraphIndex};
use crate::model::{GNNModel, ModelConfig, ModelError};
use crate::trainer::{run_fold, Metrics, Split, TrainConfig, TrainError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaliencyError {
    #[error("no training instances")]
    NoInstances,
    #[error("community union is empty")]
    EmptyUnion,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// `(p·S + 1) / (S + 2)`.
pub fn laplace(p: f64, s: usize) -> f64 {
    (p * s as f64 + 1.0) / (s as f64 + 2.0)
}

/// `tanh(log₂(p / (1 − p)))` of the Laplace-corrected probability.
pub fn ecc_term(p: f64, s: usize) -> f64 {
    let q = laplace(p, s);
    (q / (1.0 - q)).log2().tanh()
}

/// Mean ECC term over correct-class probabilities, with `S` their count.
pub fn ecc_from_probs(probs: &[f64]) -> (f64, Vec<f64>) {
    let s = probs.len();
    let terms: Vec<f64> = probs.iter().map(|&p| ecc_term(p, s)).collect();
    let mean = if s == 0 { 0.0 } else { terms.iter().sum::<f64>() / s as f64 };
    (mean, terms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EccScore {
    /// Community index.
    pub j: usize,
    pub score: f64,
    pub contributions: Vec<f64>,
}

/// Scores each non-degenerate community by feeding only its sub-graph of
/// every training graph to the model.
pub fn ecc(
    m: &GNNModel,
    communities: &[Community],
    train: &[BrainGraph],
) -> Result<Vec<EccScore>, SaliencyError> {
    if train.is_empty() {
        return Err(SaliencyError::NoInstances);
    }
    communities
        .iter()
        .filter(|c| !c.degenerate && !c.members.is_empty())
        .map(|c| {
            let n = train[0].n_nodes();
            let idx = SubGraphIndex::new(c.members.clone(), n)?;
            let probs = train
                .par_iter()
                .map(|g| {
                    let sub = slice_subgraph(g, &idx)?;
                    Ok(m.predict(&sub)?[usize::from(g.label())])
                })
                .collect::<Result<Vec<f64>, SaliencyError>>()?;
            let (score, contributions) = ecc_from_probs(&probs);
            Ok(EccScore {
                j: c.j,
                score,
                contributions,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeImportance {
    pub scores: Vec<f64>,
    /// Node ids by descending score, ties to the lower id.
    pub order: Vec<usize>,
}

impl NodeImportance {
    /// 1-based rank of every node.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.scores.len()];
        for (k, &i) in self.order.iter().enumerate() {
            r[i] = k + 1;
        }
        r
    }
}

/// `score_k = Σ_{j ∋ k} ECC_j / |i_j|`.
pub fn node_importance(eccs: &[EccScore], communities: &[Community], n: usize) -> NodeImportance {
    let mut scores = vec![0.0; n];
    for e in eccs {
        if let Some(c) = communities.iter().find(|c| c.j == e.j) {
            let share = e.score / c.members.len() as f64;
            for &i in &c.members {
                scores[i] += share;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    NodeImportance { scores, order }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeImportance {
    /// Mean over graphs of the node-averaged `|∂p(ASD)/∂v_ij|`.
    pub raw: Vec<f64>,
    /// `raw` divided by its maximum; equal to `raw` when all are zero.
    pub relative: Vec<f64>,
    /// Graphs dropped for non-finite gradients.
    pub excluded: usize,
    /// Set when every gradient vanished and no normalization happened.
    pub all_zero: bool,
}

/// Node-averaged absolute gradient of `p(ASD)` for one graph.
pub fn input_gradient(m: &GNNModel, g: &BrainGraph) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let params = m.params.register(&mut tape, false);
    let nodes = tape.leaf(g.node_matrix());
    let fwd = m.forward_on_tape(&mut tape, &params, g, nodes)?;
    let pick = tape.constant(Tensor::row(vec![0.0, 1.0]));
    let p1 = tape.mul(fwd.probs, pick)?;
    let p1 = tape.sum(p1, Axis::All);
    let grads = tape.backward(p1)?;
    let gv = grads
        .get(nodes)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(g.n_nodes(), g.node_dim()));
    let n = g.n_nodes() as f64;
    Ok((0..gv.cols())
        .map(|c| (0..gv.rows()).map(|r| gv.get(r, c).abs()).sum::<f64>() / n)
        .collect())
}

pub fn gradient_explanation(
    m: &GNNModel,
    graphs: &[BrainGraph],
) -> Result<AttributeImportance, SaliencyError> {
    if graphs.is_empty() {
        return Err(SaliencyError::NoInstances);
    }
    let per = graphs
        .par_iter()
        .map(|g| input_gradient(m, g))
        .collect::<Result<Vec<_>, _>>()?;
    let d = m.config.node_dim;
    let mut raw = vec![0.0; d];
    let mut used = 0usize;
    for v in &per {
        if v.iter().all(|x| x.is_finite()) {
            used += 1;
            for (r, x) in raw.iter_mut().zip(v) {
                *r += x;
            }
        }
    }
    if used > 0 {
        raw.iter_mut().for_each(|r| *r /= used as f64);
    }
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let all_zero = max == 0.0;
    let relative = if all_zero {
        raw.clone()
    } else {
        raw.iter().map(|x| x / max).collect()
    };
    Ok(AttributeImportance {
        raw,
        relative,
        excluded: per.len() - used,
        all_zero,
    })
}

/// Top-`k` non-degenerate communities by descending ECC (ties to lower `j`).
pub fn top_communities<'a>(
    communities: &'a [Community],
    eccs: &[EccScore],
    k: usize,
) -> Vec<&'a Community> {
    let mut scored: Vec<(&Community, f64)> = eccs
        .iter()
        .filter_map(|e| communities.iter().find(|c| c.j == e.j).map(|c| (c, e.score)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.j.cmp(&b.0.j)));
    scored.into_iter().take(k).map(|(c, _)| c).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub nodes: Vec<usize>,
    pub sliced: Metrics,
    pub full: Metrics,
}

/// Retrains a fresh model on the union of `top` communities' sub-graphs
/// and evaluates it on the same split.
pub fn subgraph_retrain_check(
    top: &[&Community],
    ds: &GraphDataset,
    split: &Split,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    full: Metrics,
) -> Result<RetrainReport, SaliencyError> {
    let nodes: Vec<usize> = top.iter().flat_map(|c| c.members.iter().copied()).collect();
    if nodes.is_empty() {
        return Err(SaliencyError::EmptyUnion);
    }
    let n = ds.graphs.first().ok_or(SaliencyError::NoInstances)?.n_nodes();
    let idx = SubGraphIndex::new(nodes, n)?;
    let graphs = ds
        .graphs
        .iter()
        .map(|g| slice_subgraph(g, &idx))
        .collect::<Result<Vec<_>, _>>()?;
    let sliced_ds = GraphDataset::new(ds.meta.clone(), graphs)?;
    let result = run_fold(&sliced_ds, split, model_cfg, cfg)?;
    Ok(RetrainReport {
        nodes: idx.indices().to_vec(),
        sliced: result.test_metrics,
        full,
    })
}
