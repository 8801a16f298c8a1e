//! Overlapping communities from a symmetric non-negative CP decomposition of
//! the stacked partial-correlation tensor:
//!
//! `τ[i,j,s] ≈ Σ_r λ_r a_r[i] a_r[j] c_r[s]`
//!
//! One node factor `A` serves both node modes. Node `i` joins community `r`
//! when `A[i,r]` exceeds the column mean plus one population standard
//! deviation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::graph::BrainGraph;
use crate::rng::{rng_for, stage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommunityError {
    #[error("no graphs to stack")]
    Empty,
    #[error("graph {graph} has {found} nodes, expected {expected}")]
    MixedSize {
        graph: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid decomposition settings: {0}")]
    Config(String),
}

/// Dense `N×N×S` tensor; slice `s` is stored row-major at `s·N²`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityTensor {
    n: usize,
    s: usize,
    data: Vec<f64>,
}

impl ConnectivityTensor {
    /// Builds a tensor from raw slices, clamping negatives to zero and
    /// zeroing the diagonal. Each slice is symmetrized by averaging.
    pub fn from_slices(n: usize, slices: &[Vec<f64>]) -> Result<Self, CommunityError> {
        if slices.is_empty() {
            return Err(CommunityError::Empty);
        }
        let mut data = Vec::with_capacity(n * n * slices.len());
        for (k, m) in slices.iter().enumerate() {
            if m.len() != n * n {
                return Err(CommunityError::MixedSize {
                    graph: k,
                    expected: n * n,
                    found: m.len(),
                });
            }
            for i in 0..n {
                for j in 0..n {
                    let v = if i == j { 0.0 } else { 0.5 * (m[i * n + j] + m[j * n + i]) };
                    data.push(v.max(0.0));
                }
            }
        }
        Ok(Self {
            n,
            s: slices.len(),
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.n, self.s]
    }

    pub fn get(&self, i: usize, j: usize, s: usize) -> f64 {
        self.data[s * self.n * self.n + i * self.n + j]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Nonzero entries of each slice as `(i, j, value)`.
    fn nonzeros(&self) -> Vec<Vec<(usize, usize, f64)>> {
        let nn = self.n * self.n;
        (0..self.s)
            .map(|s| {
                self.data[s * nn..(s + 1) * nn]
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(k, &v)| (k / self.n, k % self.n, v))
                    .collect()
            })
            .collect()
    }
}

/// Stacks the partial-correlation matrices of `graphs`, one slice each.
pub fn build_tensor(graphs: &[BrainGraph]) -> Result<ConnectivityTensor, CommunityError> {
    let n = graphs.first().ok_or(CommunityError::Empty)?.n_nodes();
    let slices = graphs
        .iter()
        .enumerate()
        .map(|(k, g)| {
            if g.n_nodes() != n {
                return Err(CommunityError::MixedSize {
                    graph: k,
                    expected: n,
                    found: g.n_nodes(),
                });
            }
            let mut m = vec![0.0; n * n];
            for e in g.edges() {
                let (i, j) = e.endpoints();
                m[i * n + j] = e.partial();
                m[j * n + i] = e.partial();
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ConnectivityTensor::from_slices(n, &slices)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub rank: usize,
    pub max_iter: usize,
    /// Stop when the fit changes by less than this between iterations.
    pub tol: f64,
    pub restarts: usize,
    /// Stack every graph instead of the training graphs only.
    pub include_all: bool,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            max_iter: 500,
            tol: 1e-8,
            restarts: 10,
            include_all: false,
        }
    }
}

impl DecomposeConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rank == 0 {
            out.push("decompose.rank must be positive".into());
        }
        if self.restarts == 0 {
            out.push("decompose.restarts must be positive".into());
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            out.push("decompose.tol must be >= 0".into());
        }
        out
    }
}

/// Normalized factors: unit-norm columns of `a` (`N×R`) and `c` (`S×R`),
/// scales in `lambda`, columns ordered by descending scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CPFactors {
    pub rank: usize,
    pub lambda: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    /// `1 − ‖τ − τ̂‖ / ‖τ‖`; absent for a zero tensor.
    pub fit: Option<f64>,
}

impl CPFactors {
    pub fn column(&self, r: usize) -> Vec<f64> {
        self.a.iter().map(|row| row[r]).collect()
    }
}

/// Decomposition result with diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub factors: CPFactors,
    /// Reconstruction error after initialization and after each accepted
    /// update of the winning restart.
    pub error_history: Vec<f64>,
    pub degenerate: bool,
}

const TINY: f64 = 1e-300;
/// Damping exponents tried for the node-factor update.
const ETAS: [f64; 7] = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];

struct Solver<'a> {
    n: usize,
    s: usize,
    r: usize,
    nz: &'a [Vec<(usize, usize, f64)>],
    norm2: f64,
}

impl Solver<'_> {
    fn gram(&self, m: &Tensor) -> Tensor {
        m.transpose().matmul(m).expect("conformable")
    }

    /// `M_C[s,r] = Σ_ij τ[i,j,s] A[i,r] A[j,r]`.
    fn mttkrp_c(&self, a: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(self.s, self.r);
        for (s, entries) in self.nz.iter().enumerate() {
            for &(i, j, v) in entries {
                for r in 0..self.r {
                    let x = out.get(s, r) + v * a.get(i, r) * a.get(j, r);
                    out.set(s, r, x);
                }
            }
        }
        out
    }

    /// `M_A[i,r] = Σ_{j,s} τ[i,j,s] A[j,r] C[s,r]`.
    fn mttkrp_a(&self, a: &Tensor, c: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(self.n, self.r);
        for (s, entries) in self.nz.iter().enumerate() {
            for &(i, j, v) in entries {
                for r in 0..self.r {
                    let x = out.get(i, r) + v * a.get(j, r) * c.get(s, r);
                    out.set(i, r, x);
                }
            }
        }
        out
    }

    /// `‖τ − τ̂‖` via Gram matrices.
    fn error(&self, a: &Tensor, c: &Tensor) -> f64 {
        let mc = self.mttkrp_c(a);
        let inner: f64 = c.data().iter().zip(mc.data()).map(|(x, y)| x * y).sum();
        let ga = self.gram(a);
        let gc = self.gram(c);
        let model2: f64 = ga
            .data()
            .iter()
            .zip(gc.data())
            .map(|(x, y)| x * x * y)
            .sum();
        (self.norm2 - 2.0 * inner + model2).max(0.0).sqrt()
    }

    fn update_c(&self, a: &Tensor, c: &Tensor) -> Tensor {
        let mc = self.mttkrp_c(a);
        let ga = self.gram(a);
        let g = ga.map(|x| x * x);
        let den = c.matmul(&g).expect("conformable");
        let mut out = c.clone();
        for k in 0..out.len() {
            out.data_mut()[k] *= mc.data()[k] / den.data()[k].max(TINY);
        }
        out
    }

    fn update_a(&self, a: &Tensor, c: &Tensor, eta: f64) -> Tensor {
        let ma = self.mttkrp_a(a, c);
        let ga = self.gram(a);
        let gc = self.gram(c);
        let h = Tensor::new(
            self.r,
            self.r,
            ga.data().iter().zip(gc.data()).map(|(x, y)| x * y).collect(),
        )
        .expect("same shape");
        let den = a.matmul(&h).expect("conformable");
        let mut out = a.clone();
        for k in 0..out.len() {
            out.data_mut()[k] *= (ma.data()[k] / den.data()[k].max(TINY)).powf(eta);
        }
        out
    }

    fn run(&self, mut a: Tensor, mut c: Tensor, cfg: &DecomposeConfig) -> (Tensor, Tensor, Vec<f64>) {
        let norm = self.norm2.sqrt();
        let mut err = self.error(&a, &c);
        let mut history = vec![err];
        for _ in 0..cfg.max_iter {
            let start = err;
            let c_new = self.update_c(&a, &c);
            let e = self.error(&a, &c_new);
            if e <= err {
                c = c_new;
                err = e;
                history.push(err);
            }
            // The shared node factor makes the full multiplicative step
            // non-monotone; damp it until the error does not increase.
            for eta in ETAS {
                let a_new = self.update_a(&a, &c, eta);
                let e = self.error(&a_new, &c);
                if e <= err {
                    a = a_new;
                    err = e;
                    history.push(err);
                    break;
                }
            }
            if (start - err).abs() / norm < cfg.tol || err == start {
                break;
            }
        }
        (a, c, history)
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>()).collect())
        .expect("sized")
}

fn column_norms(m: &Tensor) -> Vec<f64> {
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m.get(r, c).powi(2)).sum::<f64>().sqrt())
        .collect()
}

fn rows_of(m: &Tensor, order: &[usize], scale: &[f64]) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| {
            order
                .iter()
                .map(|&r| if scale[r] > 0.0 { m.get(i, r) / scale[r] } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Symmetric non-negative CP by multiplicative updates, best of
/// `cfg.restarts` seeded restarts (run in parallel).
pub fn nncp_decompose(
    tau: &ConnectivityTensor,
    cfg: &DecomposeConfig,
    seed: u64,
) -> Result<Decomposition, CommunityError> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(CommunityError::Config(problems.join("; ")));
    }
    let (n, s, r) = (tau.n, tau.s, cfg.rank);
    let norm2 = tau.norm().powi(2);
    if norm2 == 0.0 {
        return Ok(Decomposition {
            factors: CPFactors {
                rank: r,
                lambda: vec![0.0; r],
                a: vec![vec![0.0; r]; n],
                c: vec![vec![0.0; r]; s],
                fit: None,
            },
            error_history: Vec::new(),
            degenerate: true,
        });
    }
    let nz = tau.nonzeros();
    let solver = Solver {
        n,
        s,
        r,
        nz: &nz,
        norm2,
    };
    let runs: Vec<(Tensor, Tensor, Vec<f64>)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, stage::DECOMPOSE, k as u64);
            let mut a = uniform(n, r, &mut rng);
            let mut c = uniform(s, r, &mut rng);
            // Match the initial reconstruction norm to ‖τ‖; τ̂ is cubic in a
            // common scale of (A, A, C).
            let ga = solver.gram(&a);
            let gc = solver.gram(&c);
            let model2: f64 = ga.data().iter().zip(gc.data()).map(|(x, y)| x * x * y).sum();
            let k = (norm2 / model2).powf(1.0 / 6.0);
            a = a.map(|x| x * k);
            c = c.map(|x| x * k);
            solver.run(a, c, cfg)
        })
        .collect();
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(i, x), (j, y)| {
            x.2.last()
                .unwrap()
                .total_cmp(y.2.last().unwrap())
                .then(i.cmp(j))
        })
        .map(|(_, run)| run)
        .expect("at least one restart");
    let (a, c, history) = best;

    let an = column_norms(&a);
    let cn = column_norms(&c);
    let lambda: Vec<f64> = (0..r).map(|k| an[k] * an[k] * cn[k]).collect();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| lambda[y].total_cmp(&lambda[x]).then(x.cmp(&y)));
    let err = *history.last().expect("nonempty");
    Ok(Decomposition {
        factors: CPFactors {
            rank: r,
            lambda: order.iter().map(|&k| lambda[k]).collect(),
            a: rows_of(&a, &order, &an),
            c: rows_of(&c, &order, &cn),
            fit: Some(1.0 - err / norm2.sqrt()),
        },
        error_history: history,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub j: usize,
    /// Sorted node indices.
    pub members: Vec<usize>,
    pub threshold: f64,
    /// Mean loading of the members.
    pub mean_membership: f64,
    /// Set when no node passes the threshold.
    pub degenerate: bool,
    /// Evidence for the correct class, once scored.
    pub ecc: Option<f64>,
}

/// Column mean plus population standard deviation.
pub fn membership_cutoff(column: &[f64]) -> f64 {
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let var = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    mean + var.sqrt()
}

/// One community per factor column; membership is strict `>` the cutoff.
pub fn membership_threshold(f: &CPFactors) -> Vec<Community> {
    (0..f.rank)
        .map(|j| {
            let col = f.column(j);
            let threshold = membership_cutoff(&col);
            let members: Vec<usize> = (0..col.len()).filter(|&i| col[i] > threshold).collect();
            let mean_membership = if members.is_empty() {
                0.0
            } else {
                members.iter().map(|&i| col[i]).sum::<f64>() / members.len() as f64
            };
            Community {
                j,
                degenerate: members.is_empty(),
                members,
                threshold,
                mean_membership,
                ecc: None,
            }
        })
        .collect()
}
