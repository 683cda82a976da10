//! Minimal reverse-mode automatic differentiation over `ndarray` matrices.
//!
//! A [`Tape`] records a single forward computation as a flat list of nodes;
//! [`Tape::backward`] then fills gradients in one reverse sweep. Every value
//! is a dense `f64` matrix — vectors are 1×d or d×1, scalars are 1×1. The op
//! set is deliberately small and shaped around this crate's models: GRU-style
//! gating, masked attention, layer norm, embedding-table gathers, and the two
//! classification losses.
//!
//! Tapes are cheap, single-use objects: build, run backward once, drop.

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    /// Matrix plus a broadcast 1×m row.
    AddRow(Var, Var),
    Sub(Var, Var),
    /// Elementwise product.
    Mul(Var, Var),
    /// Elementwise product with a constant (dropout masks and the like).
    MulConst(Var, Array2<f64>),
    /// `x * scale + shift` elementwise (shift vanishes in the gradient).
    AffineScalar { x: Var, scale: f64 },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Cos(Var),
    /// Row-wise softmax; entries where `mask == 0` get probability exactly 0
    /// and all-masked rows come out all-zero instead of uniform.
    MaskedSoftmaxRows { x: Var },
    /// Row-wise `(x - mean) / sqrt(var + eps)`.
    LayerNormRows {
        x: Var,
        eps: f64,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    /// Select rows of `x` (repeats allowed); gradients scatter-add back.
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    /// Row-select from a tape matrix where available, otherwise from a
    /// constant fallback: output row i is `patch[slot]` when `slots[i]` is
    /// `Some(slot)` and `base[i]` otherwise.
    GatherMixed {
        patch: Var,
        slots: Vec<Option<usize>>,
    },
    /// `base` with row `rows[i]` replaced by `patch` row i.
    ScatterRows {
        base: Var,
        patch: Var,
        rows: Vec<usize>,
    },
    /// Per-query dot products against a group of keys: with `q` of shape
    /// n×d and `k` of shape (n·g)×d, output[i][j] = q[i] · k[i*g + j].
    BatchedScores {
        q: Var,
        k: Var,
        group: usize,
    },
    /// Weighted sum of grouped value rows: with `p` of shape n×g and `v` of
    /// shape (n·g)×d, output[i] = Σ_j p[i][j] · v[i*g + j].
    BatchedWeightedSum {
        p: Var,
        v: Var,
    },
    /// Mean over all entries → 1×1.
    MeanAll(Var),
    /// Mean binary cross-entropy on logits → 1×1; numerically stable form.
    BceWithLogitsMean {
        logits: Var,
        targets: Array2<f64>,
    },
    /// Mean softmax cross-entropy against class indices → 1×1.
    SoftmaxCrossEntropyMean {
        logits: Var,
        classes: Vec<usize>,
    },
}

struct Node {
    op: Op,
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
}

/// Recorded forward computation; see module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if it received any.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    // ------------------------------------------------------------------
    // Node constructors
    // ------------------------------------------------------------------

    /// Enter a matrix onto the tape (constants and parameters alike).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a) + self.val(b);
        self.push(Op::Add(a, b), value)
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        assert_eq!(self.val(row).nrows(), 1, "add_row needs a 1×m bias row");
        let value = self.val(x) + &self.val(row).row(0);
        self.push(Op::AddRow(x, row), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a) - self.val(b);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a) * self.val(b);
        self.push(Op::Mul(a, b), value)
    }

    pub fn mul_const(&mut self, x: Var, c: Array2<f64>) -> Var {
        let value = self.val(x) * &c;
        self.push(Op::MulConst(x, c), value)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// `x * scale + shift` (e.g. `affine(x, -1, 1)` computes `1 - x`).
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.val(x).mapv(|t| t * scale + shift);
        self.push(Op::AffineScalar { x, scale }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).dot(self.val(b));
        self.push(
            Op::MatMul {
                a,
                b,
                trans_b: false,
            },
            value,
        )
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).dot(&self.val(b).t());
        self.push(
            Op::MatMul {
                a,
                b,
                trans_b: true,
            },
            value,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.val(x).mapv(|t| t.max(0.0));
        self.push(Op::Relu(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.val(x).mapv(sigmoid_scalar);
        self.push(Op::Sigmoid(x), value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.val(x).mapv(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let value = self.val(x).mapv(f64::cos);
        self.push(Op::Cos(x), value)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        self.masked_softmax_rows(x, None)
    }

    pub fn masked_softmax_rows(&mut self, x: Var, mask: Option<Array2<f64>>) -> Var {
        if let Some(m) = &mask {
            assert_eq!(m.dim(), self.val(x).dim(), "mask shape must match");
        }
        let value = masked_softmax(self.val(x), mask.as_ref());
        self.push(Op::MaskedSoftmaxRows { x }, value)
    }

    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let value = layer_norm(self.val(x), eps);
        self.push(Op::LayerNormRows { x, eps }, value)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.val(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.val(p).ncols()).sum();
        let mut value = Array2::zeros((n, total));
        let mut at = 0;
        for &p in parts {
            let v = self.val(p);
            assert_eq!(v.nrows(), n, "concat_cols rows must agree");
            value
                .slice_mut(ndarray::s![.., at..at + v.ncols()])
                .assign(v);
            at += v.ncols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self
            .val(x)
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        self.push(Op::SliceCols { x, start, len }, value)
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let src = self.val(x);
        let mut value = Array2::zeros((rows.len(), src.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).assign(&src.row(r));
        }
        self.push(
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            value,
        )
    }

    pub fn gather_mixed(&mut self, patch: Var, slots: Vec<Option<usize>>, base: Array2<f64>) -> Var {
        assert_eq!(slots.len(), base.nrows());
        let p = self.val(patch);
        assert_eq!(p.ncols(), base.ncols());
        let mut value = base.clone();
        for (i, slot) in slots.iter().enumerate() {
            if let Some(s) = slot {
                value.row_mut(i).assign(&p.row(*s));
            }
        }
        self.push(Op::GatherMixed { patch, slots }, value)
    }

    pub fn scatter_rows(&mut self, base: Var, patch: Var, rows: &[usize]) -> Var {
        assert_eq!(self.val(patch).nrows(), rows.len());
        let mut value = self.val(base).clone();
        let p = self.val(patch);
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(r).assign(&p.row(i));
        }
        self.push(
            Op::ScatterRows {
                base,
                patch,
                rows: rows.to_vec(),
            },
            value,
        )
    }

    pub fn batched_scores(&mut self, q: Var, k: Var, group: usize) -> Var {
        let qv = self.val(q);
        let kv = self.val(k);
        let n = qv.nrows();
        assert_eq!(kv.nrows(), n * group, "keys must come in groups per query");
        assert_eq!(kv.ncols(), qv.ncols());
        let mut value = Array2::zeros((n, group));
        for i in 0..n {
            let qi = qv.row(i);
            for j in 0..group {
                value[(i, j)] = qi.dot(&kv.row(i * group + j));
            }
        }
        self.push(Op::BatchedScores { q, k, group }, value)
    }

    pub fn batched_weighted_sum(&mut self, p: Var, v: Var) -> Var {
        let pv = self.val(p);
        let vv = self.val(v);
        let (n, group) = pv.dim();
        assert_eq!(vv.nrows(), n * group);
        let mut value = Array2::zeros((n, vv.ncols()));
        for i in 0..n {
            for j in 0..group {
                let w = pv[(i, j)];
                if w != 0.0 {
                    value
                        .row_mut(i)
                        .scaled_add(w, &vv.row(i * group + j));
                }
            }
        }
        self.push(Op::BatchedWeightedSum { p, v }, value)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.val(x);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(Op::MeanAll(x), value)
    }

    pub fn bce_with_logits_mean(&mut self, logits: Var, targets: Array2<f64>) -> Var {
        let x = self.val(logits);
        assert_eq!(x.dim(), targets.dim());
        let n = x.len() as f64;
        let total: f64 = x
            .iter()
            .zip(targets.iter())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let value = Array2::from_elem((1, 1), total / n);
        self.push(Op::BceWithLogitsMean { logits, targets }, value)
    }

    pub fn softmax_cross_entropy_mean(&mut self, logits: Var, classes: Vec<usize>) -> Var {
        let x = self.val(logits);
        assert_eq!(x.nrows(), classes.len());
        let probs = masked_softmax(x, None);
        let n = classes.len() as f64;
        let total: f64 = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| -probs[(i, c)].max(1e-300).ln())
            .sum();
        let value = Array2::from_elem((1, 1), total / n);
        self.push(Op::SoftmaxCrossEntropyMean { logits, classes }, value)
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse sweep from a 1×1 loss node. Gradients accumulate into every
    /// node that contributed; query them with [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.nodes[loss.0].value.dim(),
            (1, 1),
            "backward starts from a scalar"
        );
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let g = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.step_backward(i, &g);
            self.nodes[i].grad = Some(g);
        }
    }

    fn val(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn accum(&mut self, v: Var, delta: &Array2<f64>) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => *g += delta,
            None => node.grad = Some(delta.clone()),
        }
    }

    fn accum_owned(&mut self, v: Var, delta: Array2<f64>) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => *g += &delta,
            None => node.grad = Some(delta),
        }
    }

    fn step_backward(&mut self, i: usize, g: &Array2<f64>) {
        // The op is moved out and back to appease the borrow checker without
        // cloning payloads.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(*a, g);
                self.accum(*b, g);
            }
            Op::AddRow(x, row) => {
                self.accum(*x, g);
                let col_sum = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accum_owned(*row, col_sum);
            }
            Op::Sub(a, b) => {
                self.accum(*a, g);
                self.accum_owned(*b, g.mapv(|t| -t));
            }
            Op::Mul(a, b) => {
                let da = g * self.val(*b);
                let db = g * self.val(*a);
                self.accum_owned(*a, da);
                self.accum_owned(*b, db);
            }
            Op::MulConst(x, c) => {
                self.accum_owned(*x, g * c);
            }
            Op::AffineScalar { x, scale, .. } => {
                self.accum_owned(*x, g.mapv(|t| t * scale));
            }
            Op::MatMul { a, b, trans_b } => {
                if *trans_b {
                    let da = g.dot(self.val(*b));
                    let db = g.t().dot(self.val(*a));
                    self.accum_owned(*a, da);
                    self.accum_owned(*b, db);
                } else {
                    let da = g.dot(&self.val(*b).t());
                    let db = self.val(*a).t().dot(g);
                    self.accum_owned(*a, da);
                    self.accum_owned(*b, db);
                }
            }
            Op::Relu(x) => {
                let dx = g * &self.val(*x).mapv(|t| if t > 0.0 { 1.0 } else { 0.0 });
                self.accum_owned(*x, dx);
            }
            Op::Sigmoid(x) => {
                let s = &self.nodes[i].value;
                let dx = g * &s.mapv(|t| t * (1.0 - t));
                self.accum_owned(*x, dx);
            }
            Op::Tanh(x) => {
                let v = &self.nodes[i].value;
                let dx = g * &v.mapv(|t| 1.0 - t * t);
                self.accum_owned(*x, dx);
            }
            Op::Cos(x) => {
                let dx = g * &self.val(*x).mapv(|t| -t.sin());
                self.accum_owned(*x, dx);
            }
            Op::MaskedSoftmaxRows { x } => {
                let p = &self.nodes[i].value;
                let mut dx = Array2::zeros(p.dim());
                for r in 0..p.nrows() {
                    let pr = p.row(r);
                    let gr = g.row(r);
                    let dot: f64 = pr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                    for c in 0..p.ncols() {
                        dx[(r, c)] = pr[c] * (gr[c] - dot);
                    }
                }
                self.accum_owned(*x, dx);
            }
            Op::LayerNormRows { x, eps } => {
                let xv = self.val(*x);
                let y = &self.nodes[i].value;
                let m = xv.ncols() as f64;
                let mut dx = Array2::zeros(xv.dim());
                for r in 0..xv.nrows() {
                    let row = xv.row(r);
                    let mean = row.sum() / m;
                    let var = row.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / m;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let g_mean = gr.sum() / m;
                    let gy_mean: f64 = gr.iter().zip(yr.iter()).map(|(&a, &b)| a * b).sum::<f64>() / m;
                    for c in 0..xv.ncols() {
                        dx[(r, c)] = inv_std * (gr[c] - g_mean - yr[c] * gy_mean);
                    }
                }
                self.accum_owned(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.val(p).ncols();
                    let slice = g.slice(ndarray::s![.., at..at + w]).to_owned();
                    self.accum_owned(p, slice);
                    at += w;
                }
            }
            Op::SliceCols { x, start, len } => {
                let mut dx = Array2::zeros(self.val(*x).dim());
                dx.slice_mut(ndarray::s![.., *start..start + len]).assign(g);
                self.accum_owned(*x, dx);
            }
            Op::GatherRows { x, rows } => {
                let mut dx = Array2::zeros(self.val(*x).dim());
                for (i, &r) in rows.iter().enumerate() {
                    dx.row_mut(r).scaled_add(1.0, &g.row(i));
                }
                self.accum_owned(*x, dx);
            }
            Op::GatherMixed { patch, slots } => {
                let mut dp = Array2::zeros(self.val(*patch).dim());
                for (i, slot) in slots.iter().enumerate() {
                    if let Some(s) = slot {
                        dp.row_mut(*s).scaled_add(1.0, &g.row(i));
                    }
                }
                self.accum_owned(*patch, dp);
            }
            Op::ScatterRows { base, patch, rows } => {
                let mut db = g.clone();
                let mut dp = Array2::zeros(self.val(*patch).dim());
                for (i, &r) in rows.iter().enumerate() {
                    dp.row_mut(i).assign(&g.row(r));
                    db.row_mut(r).fill(0.0);
                }
                self.accum_owned(*base, db);
                self.accum_owned(*patch, dp);
            }
            Op::BatchedScores { q, k, group } => {
                let qv = self.val(*q);
                let kv = self.val(*k);
                let mut dq = Array2::zeros(qv.dim());
                let mut dk = Array2::zeros(kv.dim());
                for i in 0..qv.nrows() {
                    for j in 0..*group {
                        let gij = g[(i, j)];
                        if gij != 0.0 {
                            dq.row_mut(i).scaled_add(gij, &kv.row(i * group + j));
                            dk.row_mut(i * group + j).scaled_add(gij, &qv.row(i));
                        }
                    }
                }
                self.accum_owned(*q, dq);
                self.accum_owned(*k, dk);
            }
            Op::BatchedWeightedSum { p, v } => {
                let pv = self.val(*p);
                let vv = self.val(*v);
                let (n, group) = pv.dim();
                let mut dp = Array2::zeros(pv.dim());
                let mut dv = Array2::zeros(vv.dim());
                for i in 0..n {
                    let gi = g.row(i);
                    for j in 0..group {
                        dp[(i, j)] = gi.dot(&vv.row(i * group + j));
                        let w = pv[(i, j)];
                        if w != 0.0 {
                            dv.row_mut(i * group + j).scaled_add(w, &gi);
                        }
                    }
                }
                self.accum_owned(*p, dp);
                self.accum_owned(*v, dv);
            }
            Op::MeanAll(x) => {
                let v = self.val(*x);
                let scale = g[(0, 0)] / v.len() as f64;
                self.accum_owned(*x, Array2::from_elem(v.dim(), scale));
            }
            Op::BceWithLogitsMean { logits, targets } => {
                let x = self.val(*logits);
                let n = x.len() as f64;
                let scale = g[(0, 0)] / n;
                let mut dx = Array2::zeros(x.dim());
                for (d, (&xv, &yv)) in dx.iter_mut().zip(x.iter().zip(targets.iter())) {
                    *d = (sigmoid_scalar(xv) - yv) * scale;
                }
                self.accum_owned(*logits, dx);
            }
            Op::SoftmaxCrossEntropyMean { logits, classes } => {
                let x = self.val(*logits);
                let mut dx = masked_softmax(x, None);
                let scale = g[(0, 0)] / classes.len() as f64;
                for (i, &c) in classes.iter().enumerate() {
                    dx[(i, c)] -= 1.0;
                }
                dx.mapv_inplace(|t| t * scale);
                self.accum_owned(*logits, dx);
            }
        }
        self.nodes[i].op = op;
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn layer_norm(x: &Array2<f64>, eps: f64) -> Array2<f64> {
    let m = x.ncols() as f64;
    let mut out = Array2::zeros(x.dim());
    for r in 0..x.nrows() {
        let row = x.row(r);
        let mean = row.sum() / m;
        let var = row.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / m;
        let inv_std = 1.0 / (var + eps).sqrt();
        for c in 0..x.ncols() {
            out[(r, c)] = (x[(r, c)] - mean) * inv_std;
        }
    }
    out
}

fn masked_softmax(x: &Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for r in 0..x.nrows() {
        let valid = |c: usize| mask.map_or(true, |m| m[(r, c)] != 0.0);
        let mut max = f64::NEG_INFINITY;
        for c in 0..x.ncols() {
            if valid(c) {
                max = max.max(x[(r, c)]);
            }
        }
        if max == f64::NEG_INFINITY {
            continue; // fully masked row stays zero
        }
        let mut denom = 0.0;
        for c in 0..x.ncols() {
            if valid(c) {
                let e = (x[(r, c)] - max).exp();
                out[(r, c)] = e;
                denom += e;
            }
        }
        for c in 0..x.ncols() {
            out[(r, c)] /= denom;
        }
    }
    out
}
