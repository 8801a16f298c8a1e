//! Attributed undirected multigraphs, datasets of them, and the structural
//! operations the pipeline needs: percentile sparsification, degree
//! features and sub-graph slicing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

/// Node attribute width.
pub const NODE_DIM: usize = 10;
/// Edge attribute width.
pub const EDGE_DIM: usize = 3;

/// Column layout of node attributes.
pub mod node_attr {
    pub const DEGREE: usize = 0;
    pub const BETA1: usize = 1;
    pub const BETA2: usize = 2;
    pub const BETA3: usize = 3;
    pub const BETA4: usize = 4;
    pub const TF_MEAN: usize = 5;
    pub const TF_STD: usize = 6;
    pub const X: usize = 7;
    pub const Y: usize = 8;
    pub const Z: usize = 9;

    pub const NAMES: [&str; super::NODE_DIM] = [
        "degree", "beta1", "beta2", "beta3", "beta4", "tf_mean", "tf_std", "x", "y", "z",
    ];
}

/// Column layout of edge attributes.
pub mod edge_attr {
    pub const PEARSON: usize = 0;
    pub const PARTIAL: usize = 1;
    /// `exp(-r/10)` of the centre distance `r`.
    pub const DISTANCE: usize = 2;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("node {node} has {found} attributes, expected {expected}")]
    NodeWidth {
        node: usize,
        expected: usize,
        found: usize,
    },
    #[error("edge ({i}, {j}) has {found} attributes, expected {expected}")]
    EdgeWidth {
        i: usize,
        j: usize,
        expected: usize,
        found: usize,
    },
    #[error("edge ({i}, {j}) out of range for {n} nodes")]
    EdgeRange { i: usize, j: usize, n: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({i}, {j}) stored more than once")]
    DuplicateEdge { i: usize, j: usize },
    #[error("edge ({i}, {j}): {what} = {value} outside its valid range")]
    EdgeValue {
        i: usize,
        j: usize,
        what: &'static str,
        value: f64,
    },
    #[error("label {0} is not 0 or 1")]
    Label(u8),
    #[error("sub-graph index is empty")]
    EmptyIndex,
    #[error("sub-graph index {index} out of range for {n} nodes")]
    IndexRange { index: usize, n: usize },
    #[error("graph has no edges to sparsify")]
    NoEdges,
    #[error("percentile {0} outside [0, 100)")]
    Percentile(f64),
    #[error("graph {graph} has attribute widths ({d}, {f}), dataset declares ({ed}, {ef})")]
    DatasetWidth {
        graph: usize,
        d: usize,
        f: usize,
        ed: usize,
        ef: usize,
    },
    #[error("malformed dataset: {0}")]
    Json(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// One undirected edge, canonically `i < j`, serialized as `[i, j, [attrs]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize, pub Vec<f64>);

impl Edge {
    pub fn endpoints(&self) -> (usize, usize) {
        (self.0, self.1)
    }

    pub fn attrs(&self) -> &[f64] {
        &self.2
    }

    pub fn partial(&self) -> f64 {
        self.2[edge_attr::PARTIAL]
    }
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    subject_id: String,
    label: u8,
    nodes: Vec<Vec<f64>>,
    edges: Vec<Edge>,
}

/// Undirected attributed multigraph with a class label.
///
/// Edges are stored once, with `i < j`, sorted by endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct BrainGraph {
    subject_id: String,
    label: u8,
    node_dim: usize,
    node_attrs: Vec<f64>,
    edges: Vec<Edge>,
}

impl TryFrom<GraphRecord> for BrainGraph {
    type Error = GraphError;

    fn try_from(r: GraphRecord) -> Result<Self, GraphError> {
        BrainGraph::new(r.subject_id, r.label, r.nodes, r.edges)
    }
}

impl From<BrainGraph> for GraphRecord {
    fn from(g: BrainGraph) -> Self {
        let nodes = g
            .node_attrs
            .chunks(g.node_dim.max(1))
            .map(<[f64]>::to_vec)
            .collect();
        GraphRecord {
            subject_id: g.subject_id,
            label: g.label,
            nodes,
            edges: g.edges,
        }
    }
}

impl BrainGraph {
    /// Validates and canonicalizes a graph. Edges given as `(j, i)` are
    /// flipped to `(i, j)`.
    pub fn new(
        subject_id: impl Into<String>,
        label: u8,
        nodes: Vec<Vec<f64>>,
        edges: Vec<Edge>,
    ) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::NoNodes);
        }
        let node_dim = nodes[0].len();
        let mut node_attrs = Vec::with_capacity(nodes.len() * node_dim);
        for (k, row) in nodes.iter().enumerate() {
            if row.len() != node_dim {
                return Err(GraphError::NodeWidth {
                    node: k,
                    expected: node_dim,
                    found: row.len(),
                });
            }
            node_attrs.extend_from_slice(row);
        }
        Self::from_parts(subject_id.into(), label, node_dim, node_attrs, edges)
    }

    fn from_parts(
        subject_id: String,
        label: u8,
        node_dim: usize,
        node_attrs: Vec<f64>,
        edges: Vec<Edge>,
    ) -> Result<Self, GraphError> {
        if label > 1 {
            return Err(GraphError::Label(label));
        }
        let n = node_attrs.len() / node_dim.max(1);
        if n == 0 {
            return Err(GraphError::NoNodes);
        }
        let edge_dim = edges.first().map_or(EDGE_DIM, |e| e.2.len());
        let mut canon = Vec::with_capacity(edges.len());
        for Edge(a, b, attrs) in edges {
            let (i, j) = (a.min(b), a.max(b));
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if j >= n {
                return Err(GraphError::EdgeRange { i, j, n });
            }
            if attrs.len() != edge_dim {
                return Err(GraphError::EdgeWidth {
                    i,
                    j,
                    expected: edge_dim,
                    found: attrs.len(),
                });
            }
            if edge_dim == EDGE_DIM {
                let p = attrs[edge_attr::PEARSON];
                if !(-1.0..=1.0).contains(&p) {
                    return Err(GraphError::EdgeValue { i, j, what: "pearson", value: p });
                }
                let d = attrs[edge_attr::DISTANCE];
                if !(d > 0.0 && d <= 1.0) {
                    return Err(GraphError::EdgeValue { i, j, what: "distance kernel", value: d });
                }
            }
            canon.push(Edge(i, j, attrs));
        }
        canon.sort_by_key(|e| (e.0, e.1));
        for w in canon.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(GraphError::DuplicateEdge { i: w[0].0, j: w[0].1 });
            }
        }
        Ok(Self {
            subject_id,
            label,
            node_dim,
            node_attrs,
            edges: canon,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn n_nodes(&self) -> usize {
        self.node_attrs.len() / self.node_dim.max(1)
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edges.first().map_or(EDGE_DIM, |e| e.2.len())
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.node_attrs[i * self.node_dim..(i + 1) * self.node_dim]
    }

    pub fn node_attrs_flat(&self) -> &[f64] {
        &self.node_attrs
    }

    /// Node attributes as an `N×D` matrix.
    pub fn node_matrix(&self) -> Tensor {
        Tensor::new(self.n_nodes(), self.node_dim, self.node_attrs.clone())
            .expect("validated at construction")
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Attributes of the undirected edge `{i, j}`, in either orientation.
    pub fn edge_attrs(&self, i: usize, j: usize) -> Option<&[f64]> {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by_key(&key, |e| (e.0, e.1))
            .ok()
            .map(|k| self.edges[k].attrs())
    }

    /// Copy with node attributes replaced (same `N`, any width).
    pub fn with_node_attrs(&self, node_dim: usize, attrs: Vec<f64>) -> Result<Self, GraphError> {
        if node_dim == 0 || attrs.len() != self.n_nodes() * node_dim {
            return Err(GraphError::NodeWidth {
                node: 0,
                expected: node_dim,
                found: attrs.len() / self.n_nodes(),
            });
        }
        Ok(Self {
            node_dim,
            node_attrs: attrs,
            ..self.clone()
        })
    }

    /// Copy relabelled with another subject id and class.
    pub fn relabel(&self, subject_id: impl Into<String>, label: u8) -> Result<Self, GraphError> {
        if label > 1 {
            return Err(GraphError::Label(label));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            label,
            ..self.clone()
        })
    }

    /// Number of incident edges per node.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n_nodes()];
        for e in &self.edges {
            deg[e.0] += 1.0;
            deg[e.1] += 1.0;
        }
        deg
    }
}

/// Sorted, duplicate-free, nonempty set of node indices into a parent graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGraphIndex(Vec<usize>);

impl SubGraphIndex {
    /// Sorts and deduplicates `indices`; rejects an empty set or any index
    /// `>= parent_n`.
    pub fn new(mut indices: Vec<usize>, parent_n: usize) -> Result<Self, GraphError> {
        if indices.is_empty() {
            return Err(GraphError::EmptyIndex);
        }
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.last().filter(|&&i| i >= parent_n) {
            return Err(GraphError::IndexRange { index: bad, n: parent_n });
        }
        Ok(Self(indices))
    }

    pub fn full(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Keeps the edges whose partial correlation reaches the given percentile of
/// this graph's own edge values.
///
/// The threshold is the `(floor(p/100 · E) + 1)`-th smallest value, so
/// `ceil((1 − p/100) · E)` edges survive when the values are distinct and
/// every edge tied at the threshold is kept.
pub fn sparsify_edges(g: &BrainGraph, percentile: f64) -> Result<BrainGraph, GraphError> {
    if g.edges.is_empty() {
        return Err(GraphError::NoEdges);
    }
    if !(0.0..100.0).contains(&percentile) {
        return Err(GraphError::Percentile(percentile));
    }
    let threshold = percentile_threshold(g.edges.iter().map(Edge::partial), percentile);
    let edges = g
        .edges
        .iter()
        .filter(|e| e.partial() >= threshold)
        .cloned()
        .collect();
    Ok(BrainGraph {
        edges,
        ..g.clone()
    })
}

fn percentile_threshold(values: impl Iterator<Item = f64>, percentile: f64) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0 * v.len() as f64).floor() as usize).min(v.len() - 1);
    v[rank]
}

/// Restricts `g` to the nodes in `idx`; surviving edges are renumbered by
/// rank within `idx`. Node attributes are copied unchanged.
pub fn slice_subgraph(g: &BrainGraph, idx: &SubGraphIndex) -> Result<BrainGraph, GraphError> {
    let n = g.n_nodes();
    let mut new_id = vec![usize::MAX; n];
    for (rank, &i) in idx.indices().iter().enumerate() {
        if i >= n {
            return Err(GraphError::IndexRange { index: i, n });
        }
        new_id[i] = rank;
    }
    let mut attrs = Vec::with_capacity(idx.len() * g.node_dim);
    for &i in idx.indices() {
        attrs.extend_from_slice(g.node(i));
    }
    // Renumbering is monotone, so the canonical edge order is preserved.
    let edges = g
        .edges
        .iter()
        .filter(|e| new_id[e.0] != usize::MAX && new_id[e.1] != usize::MAX)
        .map(|e| Edge(new_id[e.0], new_id[e.1], e.2.clone()))
        .collect();
    Ok(BrainGraph {
        subject_id: g.subject_id.clone(),
        label: g.label,
        node_dim: g.node_dim,
        node_attrs: attrs,
        edges,
    })
}

/// Per-node count of incident edges, also written into the degree column.
pub fn degree_feature(g: &BrainGraph) -> (BrainGraph, Vec<f64>) {
    let deg = g.degrees();
    let mut out = g.clone();
    if out.node_dim > node_attr::DEGREE {
        for (i, &d) in deg.iter().enumerate() {
            out.node_attrs[i * out.node_dim + node_attr::DEGREE] = d;
        }
    }
    (out, deg)
}

/// Dataset header. Field order is part of the file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    #[serde(rename = "D")]
    pub node_dim: usize,
    #[serde(rename = "F")]
    pub edge_dim: usize,
    pub generator_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDataset {
    pub meta: DatasetMeta,
    pub graphs: Vec<BrainGraph>,
    /// Set once the node attributes have been normalized.
    #[serde(skip)]
    pub boxcox_params: Option<crate::boxcox::BoxCoxParams>,
}

impl GraphDataset {
    pub fn new(meta: DatasetMeta, graphs: Vec<BrainGraph>) -> Result<Self, GraphError> {
        let ds = Self {
            meta,
            graphs,
            boxcox_params: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks that every graph matches the declared attribute widths.
    pub fn validate(&self) -> Result<(), GraphError> {
        for (k, g) in self.graphs.iter().enumerate() {
            let f = if g.edges.is_empty() { self.meta.edge_dim } else { g.edge_dim() };
            if g.node_dim() != self.meta.node_dim || f != self.meta.edge_dim {
                return Err(GraphError::DatasetWidth {
                    graph: k,
                    d: g.node_dim(),
                    f,
                    ed: self.meta.node_dim,
                    ef: self.meta.edge_dim,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Dataset restricted to the given graph positions, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            meta: self.meta.clone(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            boxcox_params: self.boxcox_params.clone(),
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.graphs.iter().map(BrainGraph::label).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let ds: Self = serde_json::from_str(s).map_err(|e| GraphError::Json(e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        fs::write(path, self.to_json()).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let s = fs::read_to_string(path)
            .map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
