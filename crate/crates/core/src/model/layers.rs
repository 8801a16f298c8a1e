use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::graph::BrainGraph;

use super::params::{Affine, NNConvParams, PoolParams};
use super::ModelError;

/// Undirected edge table of a (possibly pooled) graph. Node ids are rows of
/// the feature matrix that accompanies it.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeList {
    pub n_nodes: usize,
    pub pairs: Vec<(usize, usize)>,
    /// `E×F` edge attributes, one row per pair.
    pub attrs: Tensor,
}

impl EdgeList {
    pub fn from_graph(g: &BrainGraph) -> Self {
        let f = g.edge_dim();
        let mut data = Vec::with_capacity(g.edges().len() * f);
        let pairs = g
            .edges()
            .iter()
            .map(|e| {
                data.extend_from_slice(e.attrs());
                e.endpoints()
            })
            .collect::<Vec<_>>();
        Self {
            n_nodes: g.n_nodes(),
            attrs: Tensor::new(pairs.len(), f, data).expect("uniform edge width"),
            pairs,
        }
    }

    pub fn edge_dim(&self) -> usize {
        self.attrs.cols()
    }

    /// Neighbour counts over the undirected pairs.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(i, j) in &self.pairs {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Keeps pairs with both endpoints in `selection`; node `selection[p]`
    /// becomes node `p`.
    pub fn restrict(&self, selection: &[usize]) -> Self {
        let mut new_id = vec![usize::MAX; self.n_nodes];
        for (p, &i) in selection.iter().enumerate() {
            new_id[i] = p;
        }
        let f = self.edge_dim();
        let mut pairs = Vec::new();
        let mut data = Vec::new();
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            if new_id[i] != usize::MAX && new_id[j] != usize::MAX {
                pairs.push((new_id[i], new_id[j]));
                data.extend_from_slice(self.attrs.row_slice(k));
            }
        }
        Self {
            n_nodes: selection.len(),
            attrs: Tensor::new(pairs.len(), f, data).expect("uniform edge width"),
            pairs,
        }
    }
}

/// `X W + b` with the bias broadcast over rows.
pub(crate) fn affine(tape: &mut Tape, p: &Affine<Var>, x: Var) -> Result<Var, ModelError> {
    let xw = tape.matmul(x, p.weight)?;
    let [r, c] = tape.shape(xw);
    let b = tape.broadcast(p.bias, r, c)?;
    Ok(tape.add(xw, b)?)
}

/// Edge-conditioned convolution. For node `i`:
///
/// `out_i = relu(Θ v_i + Σ_{j∈N(i)} h(e_ij) v_j) / (|N(i)| + 1)`
///
/// where `h` maps the edge attributes to a `d_out×d_in` matrix. The degree
/// normalization is applied after the activation.
pub fn nnconv_forward(
    tape: &mut Tape,
    params: &NNConvParams<Var>,
    nodes: Var,
    edges: &EdgeList,
) -> Result<Var, ModelError> {
    let [n, d_in] = tape.shape(nodes);
    let [d_out, theta_in] = tape.shape(params.theta);
    if theta_in != d_in {
        return Err(ModelError::Width {
            layer: "nnconv",
            expected: theta_in,
            found: d_in,
        });
    }
    if n != edges.n_nodes || n == 0 {
        return Err(ModelError::NodeCount {
            features: n,
            edges: edges.n_nodes,
        });
    }
    let theta_t = tape.transpose(params.theta);
    let mut pre = tape.matmul(nodes, theta_t)?;

    if !edges.pairs.is_empty() {
        // Each undirected pair carries a message in both directions.
        let mut src = Vec::with_capacity(2 * edges.pairs.len());
        let mut dst = Vec::with_capacity(2 * edges.pairs.len());
        let mut rows = Vec::with_capacity(2 * edges.pairs.len());
        for (k, &(i, j)) in edges.pairs.iter().enumerate() {
            src.extend([j, i]);
            dst.extend([i, j]);
            rows.extend([k, k]);
        }
        let attrs = tape.constant(edges.attrs.clone());
        let attrs = tape.gather_rows(attrs, &rows)?;
        let mut h = attrs;
        for (l, layer) in params.edge_layers.iter().enumerate() {
            if l > 0 {
                h = tape.relu(h);
            }
            h = affine(tape, layer, h)?;
        }
        if tape.shape(h)[1] != d_out * d_in {
            return Err(ModelError::Width {
                layer: "nnconv edge map",
                expected: d_out * d_in,
                found: tape.shape(h)[1],
            });
        }
        let neighbours = tape.gather_rows(nodes, &src)?;
        let messages = tape.edge_matvec(h, neighbours)?;
        let agg = tape.scatter_add_rows(messages, &dst, n)?;
        pre = tape.add(pre, agg)?;
    }
    let act = tape.relu(pre);
    let inv = Tensor::column(
        edges
            .degrees()
            .into_iter()
            .map(|d| 1.0 / (d as f64 + 1.0))
            .collect(),
    );
    let inv = tape.constant(inv);
    let inv = tape.broadcast(inv, n, d_out)?;
    Ok(tape.mul(act, inv)?)
}

/// Result of [`topk_pool`].
pub struct PoolOutput {
    /// `k×d` gated features of the kept nodes, in selection order.
    pub nodes: Var,
    pub edges: EdgeList,
    /// `N×1` projection scores.
    pub scores: Var,
    /// Kept node ids, by descending score (ties to the lower id).
    pub index: Vec<usize>,
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Top-k pooling: `y = V w / ‖w‖`, keep the `k` best-scoring rows and gate
/// them by `tanh(y)`.
pub fn topk_pool(
    tape: &mut Tape,
    params: &PoolParams<Var>,
    nodes: Var,
    edges: &EdgeList,
    k: usize,
) -> Result<PoolOutput, ModelError> {
    let [n, d] = tape.shape(nodes);
    if tape.shape(params.w) != [1, d] {
        return Err(ModelError::Width {
            layer: "pool",
            expected: tape.shape(params.w)[1],
            found: d,
        });
    }
    if k == 0 || k > n {
        return Err(ModelError::PoolSize { k, n });
    }
    let norm = tape.norm(params.w);
    if tape.value(norm).get(0, 0) == 0.0 {
        return Err(ModelError::DegeneratePool);
    }
    let w_col = tape.transpose(params.w);
    let proj = tape.matmul(nodes, w_col)?;
    let norm_b = tape.broadcast(norm, n, 1)?;
    let scores = tape.div(proj, norm_b)?;

    let index = topk_indices(tape.value(scores).data(), k);
    let gate = tape.tanh(scores);
    let gate = tape.gather_rows(gate, &index)?;
    let gate = tape.broadcast(gate, k, d)?;
    let kept = tape.gather_rows(nodes, &index)?;
    let pooled = tape.mul(kept, gate)?;
    Ok(PoolOutput {
        nodes: pooled,
        edges: edges.restrict(&index),
        scores,
        index,
    })
}

/// Column-wise mean followed by column-wise max: `N×d → 1×2d`.
pub fn readout(tape: &mut Tape, nodes: Var) -> Result<Var, ModelError> {
    if tape.shape(nodes)[0] == 0 {
        return Err(ModelError::NodeCount { features: 0, edges: 0 });
    }
    let mean = tape.mean(nodes, Axis::Rows);
    let max = tape.max(nodes, Axis::Rows)?;
    Ok(tape.concat_cols(&[mean, max])?)
}

/// Number of nodes kept from `n` at ratio `r`: `ceil(r·n)`, at least 1.
///
/// A 1e-9 slack absorbs representation error, so `0.3 · 10` gives 3.
pub fn pooled_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}
