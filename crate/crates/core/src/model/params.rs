use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Tensor, Var};

use super::ModelConfig;

/// Dense layer `x W + b`; `W` is `in×out`, `b` is `1×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: T,
    pub bias: T,
}

/// Edge-conditioned convolution parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NNConvParams<T> {
    /// `d_out×d_in` self-propagation matrix, no bias.
    pub theta: T,
    /// Edge network from `F` attributes to a flattened `d_out×d_in` matrix;
    /// relu between layers.
    pub edge_layers: Vec<Affine<T>>,
}

/// Pooling projection vector, stored `1×d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolParams<T> {
    pub w: T,
}

/// Classifier head: affine, relu, affine to two logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub hidden: Affine<T>,
    pub out: Affine<T>,
}

/// Every trainable tensor of the classifier. `T` is [`Tensor`] for stored
/// parameters and [`Var`] once they are placed on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub conv1: NNConvParams<T>,
    pub pool1: PoolParams<T>,
    pub conv2: NNConvParams<T>,
    pub pool2: PoolParams<T>,
    pub head: Head<T>,
}

impl<T> Affine<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Affine<U> {
        Affine {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<T> NNConvParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NNConvParams<U> {
        NNConvParams {
            theta: f(&self.theta),
            edge_layers: self.edge_layers.iter().map(|l| l.map(f)).collect(),
        }
    }

    fn entries<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.theta"), &self.theta));
        for (l, layer) in self.edge_layers.iter().enumerate() {
            out.push((format!("{prefix}.edge{l}.weight"), &layer.weight));
            out.push((format!("{prefix}.edge{l}.bias"), &layer.bias));
        }
    }
}

impl<T> Params<T> {
    /// Applies `f` to every tensor in [`entries`](Self::entries) order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        // Field order here must match `entries`.
        let conv1 = self.conv1.map(&mut f);
        let pool1 = PoolParams { w: f(&self.pool1.w) };
        let conv2 = self.conv2.map(&mut f);
        let pool2 = PoolParams { w: f(&self.pool2.w) };
        let head = Head {
            hidden: self.head.hidden.map(&mut f),
            out: self.head.out.map(&mut f),
        };
        Params {
            conv1,
            pool1,
            conv2,
            pool2,
            head,
        }
    }

    /// Named tensors in canonical order.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.conv1.entries("conv1", &mut out);
        out.push(("pool1.w".into(), &self.pool1.w));
        self.conv2.entries("conv2", &mut out);
        out.push(("pool2.w".into(), &self.pool2.w));
        out.push(("head.hidden.weight".into(), &self.head.hidden.weight));
        out.push(("head.hidden.bias".into(), &self.head.hidden.bias));
        out.push(("head.out.weight".into(), &self.head.out.weight));
        out.push(("head.out.bias".into(), &self.head.out.bias));
        out
    }

    pub fn values(&self) -> Vec<&T> {
        self.entries().into_iter().map(|(_, t)| t).collect()
    }

    /// Rebuilds a parameter set with the structure of `self` from a flat
    /// sequence in canonical order.
    pub fn rebuild<U>(&self, items: impl IntoIterator<Item = U>) -> Option<Params<U>> {
        let mut it = items.into_iter();
        let mut missing = false;
        let out = self.map(|_| match it.next() {
            Some(v) => Some(v),
            None => {
                missing = true;
                None
            }
        });
        if missing || it.next().is_some() {
            return None;
        }
        Some(out.map_owned())
    }
}

impl<U> Params<Option<U>> {
    fn map_owned(self) -> Params<U> {
        fn aff<U>(a: Affine<Option<U>>) -> Affine<U> {
            Affine {
                weight: a.weight.unwrap(),
                bias: a.bias.unwrap(),
            }
        }
        fn conv<U>(c: NNConvParams<Option<U>>) -> NNConvParams<U> {
            NNConvParams {
                theta: c.theta.unwrap(),
                edge_layers: c.edge_layers.into_iter().map(aff).collect(),
            }
        }
        Params {
            conv1: conv(self.conv1),
            pool1: PoolParams { w: self.pool1.w.unwrap() },
            conv2: conv(self.conv2),
            pool2: PoolParams { w: self.pool2.w.unwrap() },
            head: Head {
                hidden: aff(self.head.hidden),
                out: aff(self.head.out),
            },
        }
    }
}

impl Params<Tensor> {
    /// Glorot-uniform weights, zero biases and unit-norm random pooling
    /// directions.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let conv = |d_in: usize, d_out: usize, rng: &mut dyn rand::RngCore| {
            let theta = glorot(d_out, d_in, d_in, d_out, rng);
            let mut edge_layers = Vec::new();
            let mut width = cfg.edge_dim;
            for &h in cfg.edge_hidden.iter().chain(std::iter::once(&(d_out * d_in))) {
                edge_layers.push(Affine {
                    weight: glorot(width, h, width, h, rng),
                    bias: Tensor::zeros(1, h),
                });
                width = h;
            }
            NNConvParams { theta, edge_layers }
        };
        let summary = 2 * cfg.hidden1 + 2 * cfg.hidden2;
        let conv1 = conv(cfg.node_dim, cfg.hidden1, rng);
        let pool1 = PoolParams {
            w: unit_direction(cfg.hidden1, rng),
        };
        let conv2 = conv(cfg.hidden1, cfg.hidden2, rng);
        let pool2 = PoolParams {
            w: unit_direction(cfg.hidden2, rng),
        };
        let head = Head {
            hidden: Affine {
                weight: glorot(summary, cfg.head_hidden, summary, cfg.head_hidden, rng),
                bias: Tensor::zeros(1, cfg.head_hidden),
            },
            out: Affine {
                weight: glorot(cfg.head_hidden, 2, cfg.head_hidden, 2, rng),
                bias: Tensor::zeros(1, 2),
            },
        };
        Params {
            conv1,
            pool1,
            conv2,
            pool2,
            head,
        }
    }

    /// Places every tensor on `tape`, as leaves or as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Params<Var> {
        self.map(|t| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    pub fn count(&self) -> usize {
        self.values().iter().map(|t| t.len()).sum()
    }

    /// All-zero parameters with the shapes `cfg` implies.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        use rand::SeedableRng;
        Self::init(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).zeros_like()
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|t| Tensor::zeros(t.rows(), t.cols()))
    }
}

fn glorot(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(rows, cols, data).expect("sized")
}

fn unit_direction(d: usize, rng: &mut (impl Rng + ?Sized)) -> Tensor {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return Tensor::row(v.into_iter().map(|x| x / n).collect());
        }
    }
}
