//! Graph classifier: two (edge-conditioned convolution → top-k pooling)
//! blocks, a mean‖max readout after each block, and a two-layer head with a
//! softmax over {HC, ASD}.

mod io;
mod layers;
mod params;

pub use io::{ModelFile, ParamRecord, MODEL_FORMAT_VERSION};
pub use layers::{
    nnconv_forward, pooled_size, readout, topk_indices, topk_pool, EdgeList, PoolOutput,
};
pub use params::{Affine, Head, NNConvParams, Params, PoolParams};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{finite_difference_check, AdError, Axis, FdReport, Gradients, Tape, Tensor, Var};
use crate::graph::{BrainGraph, EDGE_DIM, NODE_DIM};

/// Trainable-parameter count reported for the reference architecture.
pub const REFERENCE_PARAM_COUNT: usize = 2746;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{layer}: expected width {expected}, got {found}")]
    Width {
        layer: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("feature matrix has {features} nodes, edge table {edges}")]
    NodeCount { features: usize, edges: usize },
    #[error("cannot keep {k} of {n} nodes")]
    PoolSize { k: usize, n: usize },
    #[error("pooling vector has zero norm")]
    DegeneratePool,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("model file: {0}")]
    File(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub node_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub pool_ratio: f64,
    pub edge_dim: usize,
    pub head_hidden: usize,
    /// Hidden widths of the edge network; empty means a single affine map.
    pub edge_hidden: Vec<usize>,
    pub reg_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            node_dim: NODE_DIM,
            hidden1: 16,
            hidden2: 8,
            pool_ratio: 0.5,
            edge_dim: EDGE_DIM,
            head_hidden: 16,
            edge_hidden: Vec::new(),
            reg_weight: 0.001,
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("node_dim", self.node_dim),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("edge_dim", self.edge_dim),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                out.push(format!("model.{name} must be positive"));
            }
        }
        if self.edge_hidden.contains(&0) {
            out.push("model.edge_hidden widths must be positive".into());
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            out.push(format!("model.pool_ratio {} outside (0, 1]", self.pool_ratio));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            out.push(format!("model.reg_weight {} must be >= 0", self.reg_weight));
        }
        out
    }

    fn edge_map_count(&self, d_in: usize, d_out: usize) -> usize {
        let mut width = self.edge_dim;
        let mut total = 0;
        for &h in self.edge_hidden.iter().chain(std::iter::once(&(d_in * d_out))) {
            total += width * h + h;
            width = h;
        }
        total
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let (d0, d1, d2, h) = (self.node_dim, self.hidden1, self.hidden2, self.head_hidden);
        let conv1 = d1 * d0 + self.edge_map_count(d0, d1);
        let conv2 = d2 * d1 + self.edge_map_count(d1, d2);
        let pools = d1 + d2;
        let summary = 2 * d1 + 2 * d2;
        let head = summary * h + h + h * 2 + 2;
        conv1 + conv2 + pools + head
    }
}

/// Per-block trace of a forward pass.
pub struct BlockTrace {
    pub conv: Var,
    pub pool: PoolOutput,
    pub summary: Var,
}

/// Everything a forward pass leaves on the tape.
pub struct Forward {
    pub blocks: [BlockTrace; 2],
    /// `1×2` logits and probabilities.
    pub logits: Var,
    pub probs: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GNNModel {
    pub config: ModelConfig,
    pub params: Params<Tensor>,
}

impl GNNModel {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(ModelError::Config(problems.join("; ")));
        }
        let params = Params::init(&config, rng);
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Records the full forward pass of `g` on `tape`, with node features
    /// supplied as `nodes` (`N×d0`).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &Params<Var>,
        g: &BrainGraph,
        nodes: Var,
    ) -> Result<Forward, ModelError> {
        let edges = EdgeList::from_graph(g);
        self.forward_edges(tape, params, &edges, nodes)
    }

    pub fn forward_edges(
        &self,
        tape: &mut Tape,
        params: &Params<Var>,
        edges: &EdgeList,
        nodes: Var,
    ) -> Result<Forward, ModelError> {
        let [n, d] = tape.shape(nodes);
        if d != self.config.node_dim {
            return Err(ModelError::Width {
                layer: "input",
                expected: self.config.node_dim,
                found: d,
            });
        }
        let r = self.config.pool_ratio;
        let k1 = pooled_size(n, r);
        let b1 = self.block(tape, &params.conv1, &params.pool1, nodes, edges, k1)?;
        let k2 = pooled_size(k1, r);
        let b2 = self.block(tape, &params.conv2, &params.pool2, b1.pool.nodes, &b1.pool.edges, k2)?;
        let s = tape.concat_cols(&[b1.summary, b2.summary])?;
        let hidden = layers::affine(tape, &params.head.hidden, s)?;
        let hidden = tape.relu(hidden);
        let logits = layers::affine(tape, &params.head.out, hidden)?;
        let probs = tape.softmax(logits);
        Ok(Forward {
            blocks: [b1, b2],
            logits,
            probs,
        })
    }

    fn block(
        &self,
        tape: &mut Tape,
        conv: &NNConvParams<Var>,
        pool: &PoolParams<Var>,
        nodes: Var,
        edges: &EdgeList,
        k: usize,
    ) -> Result<BlockTrace, ModelError> {
        let conv_out = nnconv_forward(tape, conv, nodes, edges)?;
        let pool = topk_pool(tape, pool, conv_out, edges, k)?;
        let summary = readout(tape, pool.nodes)?;
        Ok(BlockTrace {
            conv: conv_out,
            pool,
            summary,
        })
    }

    /// Class probabilities `(p(HC), p(ASD))`.
    pub fn predict(&self, g: &BrainGraph) -> Result<[f64; 2], ModelError> {
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape, false);
        let nodes = tape.constant(g.node_matrix());
        let fwd = self.forward_on_tape(&mut tape, &params, g, nodes)?;
        let p = tape.value(fwd.probs).data();
        Ok([p[0], p[1]])
    }

    /// Mean cross-entropy over `batch` plus `λ Σ_l (‖w_l‖ − 1)²`, recorded on
    /// `tape`.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        params: &Params<Var>,
        batch: &[(&BrainGraph, Var)],
    ) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut terms = Vec::with_capacity(batch.len());
        for &(g, nodes) in batch {
            let fwd = self.forward_on_tape(tape, params, g, nodes)?;
            terms.push(cross_entropy(tape, fwd.logits, g.label())?);
        }
        let ce = tape.concat_cols(&terms)?;
        let ce = tape.mean(ce, Axis::All);
        let reg = self.regularization(tape, params)?;
        Ok(tape.add(ce, reg)?)
    }

    /// `λ Σ_l (‖w_l‖ − 1)²` over both pooling vectors.
    pub fn regularization(&self, tape: &mut Tape, params: &Params<Var>) -> Result<Var, ModelError> {
        let mut parts = Vec::with_capacity(2);
        for w in [params.pool1.w, params.pool2.w] {
            let n = tape.norm(w);
            let d = tape.add_scalar(n, -1.0);
            parts.push(tape.mul(d, d)?);
        }
        let total = tape.add(parts[0], parts[1])?;
        Ok(tape.scale(total, self.config.reg_weight))
    }

    /// Loss value of a batch.
    pub fn loss(&self, batch: &[&BrainGraph]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape, false);
        let items: Vec<_> = batch
            .iter()
            .map(|&g| (g, tape.constant(g.node_matrix())))
            .collect();
        let l = self.loss_on_tape(&mut tape, &params, &items)?;
        Ok(tape.value(l).get(0, 0))
    }

    /// Cross-entropy of one graph with its parameter gradients.
    pub fn graph_gradients(&self, g: &BrainGraph) -> Result<GraphGrad, ModelError> {
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape, true);
        let nodes = tape.constant(g.node_matrix());
        let fwd = self.forward_on_tape(&mut tape, &params, g, nodes)?;
        let ce = cross_entropy(&mut tape, fwd.logits, g.label())?;
        let grads = tape.backward(ce)?;
        let p = tape.value(fwd.probs).data();
        Ok(GraphGrad {
            loss: tape.value(ce).get(0, 0),
            probs: [p[0], p[1]],
            grads: collect_grads(&params, &self.params, &grads),
        })
    }

    /// Regularization value and its parameter gradients.
    pub fn regularization_gradients(&self) -> Result<(f64, Params<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape, true);
        let reg = self.regularization(&mut tape, &params)?;
        let grads = tape.backward(reg)?;
        Ok((tape.value(reg).get(0, 0), collect_grads(&params, &self.params, &grads)))
    }

    /// Compares tape gradients of the full batch loss with central
    /// differences, over every parameter and every node-feature input.
    pub fn check_gradients(&self, graphs: &[BrainGraph], h: f64) -> Result<FdReport, ModelError> {
        let batch: Vec<&BrainGraph> = graphs.iter().collect();
        self.loss(&batch)?;
        let mut inputs: Vec<Tensor> = self.params.values().into_iter().cloned().collect();
        let n_params = inputs.len();
        inputs.extend(graphs.iter().map(BrainGraph::node_matrix));
        let report = finite_difference_check(
            |tape, vars| {
                let params = self
                    .params
                    .rebuild(vars[..n_params].iter().copied())
                    .ok_or(AdError::Empty("parameter rebuild"))?;
                let items: Vec<_> = graphs.iter().zip(&vars[n_params..]).map(|(g, &v)| (g, v)).collect();
                self.loss_on_tape(tape, &params, &items).map_err(|e| match e {
                    ModelError::Ad(a) => a,
                    _ => AdError::Empty("loss"),
                })
            },
            &inputs,
            h,
        )?;
        Ok(report)
    }
}

/// Per-graph loss, probabilities and gradients.
pub struct GraphGrad {
    pub loss: f64,
    pub probs: [f64; 2],
    pub grads: Params<Tensor>,
}

fn collect_grads(vars: &Params<Var>, like: &Params<Tensor>, grads: &Gradients) -> Params<Tensor> {
    let flat: Vec<Tensor> = vars
        .values()
        .into_iter()
        .zip(like.values())
        .map(|(&v, t)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();
    like.rebuild(flat).expect("same structure")
}

/// `−log softmax(logits)[label]` as a `1×1` value.
pub fn cross_entropy(tape: &mut Tape, logits: Var, label: u8) -> Result<Var, ModelError> {
    let [_, c] = tape.shape(logits);
    let mut onehot = vec![0.0; c];
    onehot[usize::from(label)] = -1.0;
    let lsm = tape.log_softmax(logits);
    let sel = tape.constant(Tensor::row(onehot));
    let picked = tape.mul(lsm, sel)?;
    Ok(tape.sum(picked, Axis::All))
}

#[cfg(test)]
mod tests;
