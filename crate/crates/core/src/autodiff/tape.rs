//! Wengert tape over small dense matrices.
//!
//! Every node holds a row-major `rows x cols` buffer. Operations are recorded
//! in creation order, so a single reverse sweep over the node list is a valid
//! topological order for backpropagation. Nodes that do not depend on a
//! trainable leaf are skipped during the sweep.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Slice { src: usize, offset: usize },
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Sum(usize),
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
    MeanSquaredError { pred: usize, target: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "scalar() on a non-scalar node");
        n.value[0]
    }

    /// Trainable leaf; gradients flow back into it.
    pub fn param(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(values, rows, cols, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(values, rows, cols, Op::Leaf, false)
    }

    /// Views `rows * cols` contiguous entries of `src` starting at `offset` as a matrix.
    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let s = self.node(src);
        assert!(offset + rows * cols <= s.value.len(), "slice out of bounds");
        let value = s.value[offset..offset + rows * cols].to_vec();
        let ng = s.needs_grad;
        self.push(value, rows, cols, Op::Slice { src: src.0, offset }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        assert_eq!(na.cols, nb.rows, "matmul shape mismatch");
        let (m, k, n) = (na.rows, na.cols, nb.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = na.value[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &nb.value[p * n..(p + 1) * n];
                for (o, b) in row.iter_mut().zip(brow) {
                    *o += aip * b;
                }
            }
        }
        let ng = na.needs_grad || nb.needs_grad;
        self.push(out, m, n, Op::MatMul(a.0, b.0), ng)
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (na, nr) = (self.node(a), self.node(row));
        assert_eq!(nr.value.len(), na.cols, "add_row width mismatch");
        let c = na.cols;
        let out = na.value.iter().enumerate().map(|(i, x)| x + nr.value[i % c]).collect();
        let (r, ng) = (na.rows, na.needs_grad || nr.needs_grad);
        self.push(out, r, c, Op::AddRow(a.0, row.0), ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        assert_eq!((na.rows, na.cols), (nb.rows, nb.cols), "elementwise shape mismatch");
        let out = na.value.iter().zip(&nb.value).map(|(x, y)| f(*x, *y)).collect();
        let (r, c, ng) = (na.rows, na.cols, na.needs_grad || nb.needs_grad);
        self.push(out, r, c, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let na = self.node(a);
        let out = na.value.iter().map(|x| f(*x)).collect();
        let (r, c, ng) = (na.rows, na.cols, na.needs_grad);
        self.push(out, r, c, op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a.0, s))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let s = na.value.iter().sum();
        let ng = na.needs_grad;
        self.push(vec![s], 1, 1, Op::Sum(a.0), ng)
    }

    /// Mean over rows of the softmax cross-entropy between `logits` and integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let nl = self.node(logits);
        let (n, c) = (nl.rows, nl.cols);
        assert_eq!(labels.len(), n, "one label per row");
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for i in 0..n {
            let row = &nl.value[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            let lse = m + z.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            total += lse - row[labels[i]];
        }
        let ng = nl.needs_grad;
        let op = Op::SoftmaxCrossEntropy { logits: logits.0, labels: labels.to_vec(), probs };
        self.push(vec![total / n as f64], 1, 1, op, ng)
    }

    /// Mean over all entries of `(pred - target)^2`.
    pub fn mean_squared_error(&mut self, pred: Var, target: &[f64]) -> Var {
        let np = self.node(pred);
        assert_eq!(np.value.len(), target.len(), "target shape mismatch");
        let n = target.len() as f64;
        let s: f64 = np.value.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
        let ng = np.needs_grad;
        let op = Op::MeanSquaredError { pred: pred.0, target: target.to_vec() };
        self.push(vec![s / n], 1, 1, op, ng)
    }

    /// Reverse sweep from the scalar `output`. Returns one adjoint buffer per node;
    /// nodes that do not need gradients keep an empty buffer.
    pub fn backward(&self, output: Var) -> Adjoints {
        assert_eq!(self.node(output).value.len(), 1, "backward from a non-scalar node");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[output.0] = vec![1.0];

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.propagate(node, &g, &mut grads);
            grads[idx] = g;
        }
        Adjoints { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Vec<f64>]) {
        let nodes = &self.nodes;
        let mut acc = |target: usize, f: &dyn Fn(usize) -> f64| {
            if !nodes[target].needs_grad {
                return;
            }
            let len = nodes[target].value.len();
            let buf = &mut grads[target];
            if buf.is_empty() {
                *buf = vec![0.0; len];
            }
            for (i, b) in buf.iter_mut().enumerate() {
                *b += f(i);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Slice { src, offset } => {
                if nodes[*src].needs_grad {
                    let len = nodes[*src].value.len();
                    let buf = &mut grads[*src];
                    if buf.is_empty() {
                        *buf = vec![0.0; len];
                    }
                    for (b, x) in buf[*offset..*offset + g.len()].iter_mut().zip(g) {
                        *b += x;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (na, nb) = (&nodes[*a], &nodes[*b]);
                let (m, k, n) = (na.rows, na.cols, nb.cols);
                if na.needs_grad {
                    // dA = dC * B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &nb.value[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*a, &|i| da[i]);
                }
                if nb.needs_grad {
                    // dB = A^T * dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = na.value[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, x) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * x;
                            }
                        }
                    }
                    acc(*b, &|i| db[i]);
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, &|i| g[i]);
                let c = node.cols;
                let mut dr = vec![0.0; c];
                for (i, x) in g.iter().enumerate() {
                    dr[i % c] += x;
                }
                acc(*row, &|j| dr[j]);
            }
            Op::Add(a, b) => {
                acc(*a, &|i| g[i]);
                acc(*b, &|i| g[i]);
            }
            Op::Sub(a, b) => {
                acc(*a, &|i| g[i]);
                acc(*b, &|i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                acc(*a, &|i| g[i] * vb[i]);
                acc(*b, &|i| g[i] * va[i]);
            }
            Op::Div(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                acc(*a, &|i| g[i] / vb[i]);
                acc(*b, &|i| -g[i] * va[i] / (vb[i] * vb[i]));
            }
            Op::Scale(a, s) => acc(*a, &|i| g[i] * s),
            Op::Offset(a) => acc(*a, &|i| g[i]),
            Op::Exp(a) => acc(*a, &|i| g[i] * node.value[i]),
            Op::Log(a) => {
                let va = &nodes[*a].value;
                acc(*a, &|i| g[i] / va[i])
            }
            Op::Tanh(a) => acc(*a, &|i| g[i] * (1.0 - node.value[i] * node.value[i])),
            Op::Relu(a) => {
                let va = &nodes[*a].value;
                acc(*a, &|i| if va[i] > 0.0 { g[i] } else { 0.0 })
            }
            Op::Sum(a) => acc(*a, &|_| g[0]),
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let c = nodes[*logits].cols;
                let n = labels.len() as f64;
                acc(*logits, &|i| {
                    let onehot = if labels[i / c] == i % c { 1.0 } else { 0.0 };
                    g[0] * (probs[i] - onehot) / n
                });
            }
            Op::MeanSquaredError { pred, target } => {
                let vp = &nodes[*pred].value;
                let n = target.len() as f64;
                acc(*pred, &|i| g[0] * 2.0 * (vp[i] - target[i]) / n);
            }
        }
    }
}

/// Adjoint buffers produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Vec<f64>>,
}

impl Adjoints {
    /// Gradient with respect to `v`, zero-filled when nothing flowed into it.
    pub fn wrt(&self, v: Var, len: usize) -> Vec<f64> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            vec![0.0; len]
        } else {
            g.clone()
        }
    }
}
