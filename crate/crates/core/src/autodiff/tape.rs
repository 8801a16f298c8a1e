use super::{AdError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which dimension a reduction collapses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce every entry to a `1×1` scalar.
    All,
    /// Collapse rows: `r×c → 1×c` (column-wise statistic).
    Rows,
    /// Collapse columns: `r×c → r×1` (row-wise statistic).
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Sum(Var, Axis),
    Mean(Var, Axis),
    /// Flat source index of the chosen maximum for every output entry.
    Max(Var, Vec<usize>),
    Norm(Var),
    Broadcast(Var),
    EdgeMatVec(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records primitive applications in execution order for reverse-mode
/// differentiation.
///
/// Nodes are appended as they are computed, so the node list is already a
/// topological order. One tape serves one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one accumulated gradient per tracked node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, or `None` if `var` does
    /// not depend on any leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AdError {
    AdError::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let out = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMul(a, b), t))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let t = self.tracked(a);
        self.push(out, Op::Transpose(a), t)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, op, t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip_with("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let t = self.tracked(a);
        self.push(out, op, t)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(a, |x| alpha * x, Op::Scale(a, alpha))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `max(x, 0)`; the subgradient at exactly zero is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (c, v) in row.iter().enumerate() {
                out.set(r, c, (v - m).exp() / z);
            }
        }
        let t = self.tracked(a);
        self.push(out, Op::Softmax(a), t)
    }

    /// Row-wise log-softmax, stable for large logits.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (c, v) in row.iter().enumerate() {
                out.set(r, c, v - lse);
            }
        }
        let t = self.tracked(a);
        self.push(out, Op::LogSoftmax(a), t)
    }

    /// Side-by-side concatenation; all parts share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let first = *parts.first().ok_or(AdError::Empty("concat_cols"))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), t))
    }

    /// Stacked concatenation; all parts share the column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let first = *parts.first().ok_or(AdError::Empty("concat_rows"))?;
        let cols = self.value(first).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(shape_err("concat_rows", self.value(first), self.value(p)));
            }
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let t = parts.iter().any(|&p| self.tracked(p));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), t))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AdError> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(index.len() * x.cols());
        for &i in index {
            if i >= x.rows() {
                return Err(AdError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: x.rows(),
                });
            }
            data.extend_from_slice(x.row_slice(i));
        }
        let out = Tensor::new(index.len(), x.cols(), data)?;
        let t = self.tracked(a);
        Ok(self.push(out, Op::GatherRows(a, index.to_vec()), t))
    }

    /// Adds row `k` of `a` into output row `index[k]` of an `n_out`-row result.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: &[usize],
        n_out: usize,
    ) -> Result<Var, AdError> {
        let x = self.value(a);
        if index.len() != x.rows() {
            return Err(AdError::Shape {
                op: "scatter_add_rows",
                lhs: x.shape(),
                rhs: [index.len(), 1],
            });
        }
        let mut out = Tensor::zeros(n_out, x.cols());
        for (k, &i) in index.iter().enumerate() {
            if i >= n_out {
                return Err(AdError::Index {
                    op: "scatter_add_rows",
                    index: i,
                    bound: n_out,
                });
            }
            let src = x.row_slice(k);
            let cols = x.cols();
            for (o, s) in out.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                *o += s;
            }
        }
        let t = self.tracked(a);
        Ok(self.push(out, Op::ScatterAddRows(a, index.to_vec()), t))
    }

    pub fn sum(&mut self, a: Var, axis: Axis) -> Var {
        let out = reduce(self.value(a), axis, |vals| vals.iter().sum());
        let t = self.tracked(a);
        self.push(out, Op::Sum(a, axis), t)
    }

    pub fn mean(&mut self, a: Var, axis: Axis) -> Var {
        let out = reduce(self.value(a), axis, |vals| {
            vals.iter().sum::<f64>() / vals.len() as f64
        });
        let t = self.tracked(a);
        self.push(out, Op::Mean(a, axis), t)
    }

    /// Maximum along `axis`. Ties resolve to the lowest index, which is also
    /// where the gradient is routed.
    pub fn max(&mut self, a: Var, axis: Axis) -> Result<Var, AdError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(AdError::Empty("max"));
        }
        let (r, c) = (x.rows(), x.cols());
        let groups: Vec<Vec<usize>> = match axis {
            Axis::All => vec![(0..r * c).collect()],
            Axis::Rows => (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect(),
            Axis::Cols => (0..r).map(|i| (0..c).map(|j| i * c + j).collect()).collect(),
        };
        let data = x.data();
        let argmax: Vec<usize> = groups
            .iter()
            .map(|g| {
                let mut best = g[0];
                for &k in &g[1..] {
                    if data[k] > data[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        let vals: Vec<f64> = argmax.iter().map(|&k| data[k]).collect();
        let out = match axis {
            Axis::All => Tensor::scalar(vals[0]),
            Axis::Rows => Tensor::row(vals),
            Axis::Cols => Tensor::column(vals),
        };
        let t = self.tracked(a);
        Ok(self.push(out, Op::Max(a, argmax), t))
    }

    /// Euclidean norm of all entries, as a `1×1` value.
    pub fn norm(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).l2_norm());
        let t = self.tracked(a);
        self.push(out, Op::Norm(a), t)
    }

    /// Repeats a `1×1`, `1×c` or `r×1` value to `rows×cols`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, AdError> {
        let x = self.value(a);
        let [r, c] = x.shape();
        if !((r == 1 || r == rows) && (c == 1 || c == cols)) {
            return Err(AdError::Shape {
                op: "broadcast",
                lhs: x.shape(),
                rhs: [rows, cols],
            });
        }
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.set(i, j, x.get(if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j }));
            }
        }
        let t = self.tracked(a);
        Ok(self.push(out, Op::Broadcast(a), t))
    }

    /// Per-row matrix-vector product. Row `k` of `m` (`E×(o·i)`) is read as a
    /// row-major `o×i` matrix and applied to row `k` of `v` (`E×i`), giving an
    /// `E×o` result. This is the message computation of an edge-conditioned
    /// convolution.
    pub fn edge_matvec(&mut self, m: Var, v: Var) -> Result<Var, AdError> {
        let (tm, tv) = (self.value(m), self.value(v));
        let din = tv.cols();
        if tm.rows() != tv.rows() || din == 0 || tm.cols() % din != 0 {
            return Err(shape_err("edge_matvec", tm, tv));
        }
        let dout = tm.cols() / din;
        let mut out = Tensor::zeros(tm.rows(), dout);
        for k in 0..tm.rows() {
            let mrow = tm.row_slice(k);
            let vrow = tv.row_slice(k);
            for o in 0..dout {
                let w = &mrow[o * din..(o + 1) * din];
                let s: f64 = w.iter().zip(vrow).map(|(a, b)| a * b).sum();
                out.set(k, o, s);
            }
        }
        let t = self.tracked(m) || self.tracked(v);
        Ok(self.push(out, Op::EdgeMatVec(m, v), t))
    }

    /// Reverse sweep from a scalar root. Gradients of repeated uses
    /// accumulate.
    pub fn backward(&self, root: Var) -> Result<Gradients, AdError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(AdError::NonScalarRoot(rv.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.tracked(root) {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::filled(rv.rows(), rv.cols(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let zip = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = a.data().iter().zip(g.data()).map(|(&x, &gy)| f(x, gy)).collect();
            Tensor::new(a.rows(), a.cols(), data).expect("shape preserved")
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    let ga = g.matmul(&tb.transpose()).expect("matmul backward");
                    self.accumulate(grads, *a, ga);
                }
                if self.tracked(*b) {
                    let gb = ta.transpose().matmul(g).expect("matmul backward");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip(tb, &|bv, gy| bv * gy));
                self.accumulate(grads, *b, zip(ta, &|av, gy| av * gy));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip(tb, &|bv, gy| gy / bv));
                let gb: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .zip(g.data())
                    .map(|((&av, &bv), &gy)| -gy * av / (bv * bv))
                    .collect();
                self.accumulate(grads, *b, Tensor::new(tb.rows(), tb.cols(), gb).unwrap());
            }
            Op::Scale(a, alpha) => self.accumulate(grads, *a, g.map(|x| alpha * x)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let ga = zip(self.value(*a), &|x, gy| if x > 0.0 { gy } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => self.accumulate(grads, *a, zip(y, &|t, gy| gy * (1.0 - t * t))),
            Op::Exp(a) => self.accumulate(grads, *a, zip(y, &|e, gy| gy * e)),
            Op::Log(a) => self.accumulate(grads, *a, zip(self.value(*a), &|x, gy| gy / x)),
            Op::Softmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let total: f64 = gr.iter().sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, gr[c] - yr[c].exp() * total);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), pc);
                    for r in 0..g.rows() {
                        gp.data_mut()[r * pc..(r + 1) * pc]
                            .copy_from_slice(&g.row_slice(r)[offset..offset + pc]);
                    }
                    offset += pc;
                    self.accumulate(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let [pr, pc] = self.shape(p);
                    let gp = Tensor::new(pr, pc, g.data()[offset..offset + n].to_vec()).unwrap();
                    offset += n;
                    self.accumulate(grads, p, gp);
                }
            }
            Op::GatherRows(a, index) => {
                let [r, c] = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in index.iter().enumerate() {
                    for (o, s) in ga.data_mut()[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                        *o += s;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ScatterAddRows(a, index) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(index.len() * c);
                for &i in index {
                    data.extend_from_slice(g.row_slice(i));
                }
                self.accumulate(grads, *a, Tensor::new(index.len(), c, data).unwrap());
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let [r, c] = self.shape(*a);
                let denom = match (&node.op, axis) {
                    (Op::Sum(..), _) => 1.0,
                    (_, Axis::All) => (r * c) as f64,
                    (_, Axis::Rows) => r as f64,
                    (_, Axis::Cols) => c as f64,
                };
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        let gy = match axis {
                            Axis::All => g.get(0, 0),
                            Axis::Rows => g.get(0, j),
                            Axis::Cols => g.get(i, 0),
                        };
                        ga.set(i, j, gy / denom);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Max(a, argmax) => {
                let [r, c] = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (&k, &gy) in argmax.iter().zip(g.data()) {
                    ga.data_mut()[k] += gy;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Norm(a) => {
                let n = y.get(0, 0);
                let gy = g.get(0, 0);
                let ga = if n > 0.0 {
                    self.value(*a).map(|x| gy * x / n)
                } else {
                    let [r, c] = self.shape(*a);
                    Tensor::zeros(r, c)
                };
                self.accumulate(grads, *a, ga);
            }
            Op::Broadcast(a) => {
                let [r, c] = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        let (si, sj) = (if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j });
                        ga.data_mut()[si * c + sj] += g.get(i, j);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::EdgeMatVec(m, v) => {
                let (tm, tv) = (self.value(*m), self.value(*v));
                let din = tv.cols();
                let dout = g.cols();
                if self.tracked(*m) {
                    let mut gm = Tensor::zeros(tm.rows(), tm.cols());
                    for k in 0..tm.rows() {
                        let vrow = tv.row_slice(k);
                        for o in 0..dout {
                            let gy = g.get(k, o);
                            for (c, &vc) in vrow.iter().enumerate() {
                                gm.set(k, o * din + c, gy * vc);
                            }
                        }
                    }
                    self.accumulate(grads, *m, gm);
                }
                if self.tracked(*v) {
                    let mut gv = Tensor::zeros(tv.rows(), din);
                    for k in 0..tm.rows() {
                        let mrow = tm.row_slice(k);
                        for o in 0..dout {
                            let gy = g.get(k, o);
                            for c in 0..din {
                                let cur = gv.get(k, c);
                                gv.set(k, c, cur + gy * mrow[o * din + c]);
                            }
                        }
                    }
                    self.accumulate(grads, *v, gv);
                }
            }
        }
    }
}

fn reduce(x: &Tensor, axis: Axis, f: impl Fn(&[f64]) -> f64) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    match axis {
        Axis::All => Tensor::scalar(f(x.data())),
        Axis::Rows => {
            let mut col = vec![0.0; r];
            Tensor::row(
                (0..c)
                    .map(|j| {
                        for (i, v) in col.iter_mut().enumerate() {
                            *v = x.get(i, j);
                        }
                        f(&col)
                    })
                    .collect(),
            )
        }
        Axis::Cols => Tensor::column((0..r).map(|i| f(x.row_slice(i))).collect()),
    }
}
