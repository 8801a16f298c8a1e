//! Per-column Box-Cox power transform followed by z-scoring.
//!
//! The power is chosen by maximizing the profile log-likelihood over the
//! fixed grid `-2.00, -1.99, …, 2.00`. Inputs are shifted by
//! `δ = max(0, 1e-6 − min)` so every training value is strictly positive.
//! Standard deviations are population (divide by `n`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BrainGraph, GraphDataset, GraphError};

/// Minimum shifted training value.
pub const SHIFT_EPSILON: f64 = 1e-6;
const GRID_LO: i32 = -200;
const GRID_HI: i32 = 200;
const GRID_STEP: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxCoxError {
    #[error("cannot fit on an empty training set")]
    EmptyTrainingSet,
    #[error("transform fitted for {expected} columns, data has {found}")]
    Width { expected: usize, found: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Fitted transform for one node-attribute column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub lambda: f64,
    pub shift: f64,
    pub mean: f64,
    pub std: f64,
    /// Smallest training value; out-of-support inputs are clamped to it.
    pub train_min: f64,
    /// Set for a constant column: no power transform, `std = 1`.
    pub degenerate: bool,
}

impl ColumnTransform {
    /// Box-Cox value before z-scoring.
    pub fn power(&self, x: f64) -> f64 {
        if self.degenerate {
            return x;
        }
        boxcox(x + self.shift, self.lambda)
    }

    /// Full transform; the flag reports whether `x` was clamped.
    pub fn apply(&self, x: f64) -> (f64, bool) {
        let clamped = !self.degenerate && x + self.shift <= 0.0;
        let x = if clamped { self.train_min } else { x };
        ((self.power(x) - self.mean) / self.std, clamped)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxParams {
    pub columns: Vec<ColumnTransform>,
}

/// `((y^λ − 1)/λ`, or `ln y` when `λ = 0`.
pub fn boxcox(y: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        y.ln()
    } else {
        (y.powf(lambda) - 1.0) / lambda
    }
}

/// Profile log-likelihood of the Box-Cox family, up to a constant:
/// `−n/2 · ln σ²(λ) + (λ − 1) Σ ln y`.
pub fn profile_log_likelihood(log_y: &[f64], lambda: f64) -> f64 {
    let n = log_y.len() as f64;
    let transformed = log_y.iter().map(|&ly| {
        if lambda == 0.0 {
            ly
        } else {
            ((lambda * ly).exp() - 1.0) / lambda
        }
    });
    let (_, var) = mean_var(transformed);
    let sum_log: f64 = log_y.iter().sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * sum_log
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

fn fit_column(values: &[f64]) -> ColumnTransform {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return ColumnTransform {
            lambda: 1.0,
            shift: 0.0,
            mean: min,
            std: 1.0,
            train_min: min,
            degenerate: true,
        };
    }
    let shift = (SHIFT_EPSILON - min).max(0.0);
    let log_y: Vec<f64> = values.iter().map(|v| (v + shift).ln()).collect();
    let mut best = (f64::NEG_INFINITY, 1.0);
    for k in GRID_LO..=GRID_HI {
        let lambda = f64::from(k) * GRID_STEP;
        let llf = profile_log_likelihood(&log_y, lambda);
        if llf > best.0 {
            best = (llf, lambda);
        }
    }
    let lambda = best.1;
    let (mean, var) = mean_var(values.iter().map(|&v| boxcox(v + shift, lambda)));
    let std = var.sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return ColumnTransform {
            lambda: 1.0,
            shift: 0.0,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            std: 1.0,
            train_min: min,
            degenerate: true,
        };
    }
    ColumnTransform {
        lambda,
        shift,
        mean,
        std,
        train_min: min,
        degenerate: false,
    }
}

/// Fits one transform per node-attribute column over every node of every
/// training graph.
pub fn boxcox_fit(train: &GraphDataset) -> Result<BoxCoxParams, BoxCoxError> {
    if train.graphs.is_empty() {
        return Err(BoxCoxError::EmptyTrainingSet);
    }
    let d = train.meta.node_dim;
    let mut columns = vec![Vec::new(); d];
    for g in &train.graphs {
        if g.node_dim() != d {
            return Err(BoxCoxError::Width {
                expected: d,
                found: g.node_dim(),
            });
        }
        for i in 0..g.n_nodes() {
            for (c, &v) in g.node(i).iter().enumerate() {
                columns[c].push(v);
            }
        }
    }
    Ok(BoxCoxParams {
        columns: columns.iter().map(|c| fit_column(c)).collect(),
    })
}

/// Output of [`boxcox_apply`].
#[derive(Clone, Debug)]
pub struct Normalized {
    pub dataset: GraphDataset,
    /// Values that fell below the training support and were clamped.
    pub clamped: usize,
}

impl BoxCoxParams {
    pub fn degenerate_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&c| self.columns[c].degenerate)
            .collect()
    }

    /// Transforms one graph, returning it with its clamp count.
    pub fn transform_graph(&self, g: &BrainGraph) -> Result<(BrainGraph, usize), BoxCoxError> {
        let d = self.columns.len();
        if g.node_dim() != d {
            return Err(BoxCoxError::Width {
                expected: d,
                found: g.node_dim(),
            });
        }
        let mut clamped = 0;
        let attrs = g
            .node_attrs_flat()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let (y, c) = self.columns[k % d].apply(x);
                clamped += usize::from(c);
                y
            })
            .collect();
        Ok((g.with_node_attrs(d, attrs)?, clamped))
    }
}

/// Applies fitted transforms to every graph of `ds`.
pub fn boxcox_apply(ds: &GraphDataset, p: &BoxCoxParams) -> Result<Normalized, BoxCoxError> {
    if ds.meta.node_dim != p.columns.len() {
        return Err(BoxCoxError::Width {
            expected: p.columns.len(),
            found: ds.meta.node_dim,
        });
    }
    let mut clamped = 0;
    let mut graphs = Vec::with_capacity(ds.graphs.len());
    for g in &ds.graphs {
        let (t, c) = p.transform_graph(g)?;
        clamped += c;
        graphs.push(t);
    }
    Ok(Normalized {
        dataset: GraphDataset {
            meta: ds.meta.clone(),
            graphs,
            boxcox_params: Some(p.clone()),
        },
        clamped,
    })
}
