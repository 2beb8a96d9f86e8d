//! A small define-by-run tape for reverse-mode differentiation.
//!
//! Values are row-major matrices; a vector is a `1 x d` matrix. Parameter
//! nodes borrow their data from the [`ParamSet`] and their gradients are
//! accumulated straight into a [`Gradients`] buffer.

use super::params::{Gradients, ParamId, ParamSet};
use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Gather {
        src: Var,
        rows: Vec<usize>,
    },
    /// `x W^T + b`
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    Reshape(Var),
    /// Output `[h; c]` from gate pre-activations `[i; f; g; o]`.
    LstmCell {
        gates: Var,
        c_prev: Option<Var>,
    },
    /// `-log softmax(logits)[target]` over a single row.
    Nll {
        logits: Var,
        target: usize,
    },
    LogSoftmax(Var),
    Sum(Vec<Var>),
    Mask {
        src: Var,
        mask: Vec<T>,
    },
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Graph { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the graph had `len` nodes.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        for slot in &mut self.param_nodes {
            if matches!(slot, Some(v) if v.0 >= len) {
                *slot = None;
            }
        }
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Var {
        assert_eq!(value.len(), rows * cols, "input shape");
        self.push(rows, cols, value, Op::Input)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.input(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        let t = self.params.get(id);
        let v = self.push(t.rows, t.cols, Vec::new(), Op::Param(id));
        self.param_nodes[id.index()] = Some(v);
        v
    }

    /// Selects rows of `src` (rows may repeat).
    pub fn gather(&mut self, src: Var, rows: &[usize]) -> Var {
        let (r, cols) = self.shape(src);
        let data = self.value(src);
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &i in rows {
            assert!(i < r, "gather row {i} out of {r}");
            out.extend_from_slice(&data[i * cols..(i + 1) * cols]);
        }
        self.push(rows.len(), cols, out, Op::Gather { src, rows: rows.to_vec() })
    }

    pub fn row(&mut self, src: Var, i: usize) -> Var {
        self.gather(src, &[i])
    }

    /// `x W^T + b` for `x: N x in`, `W: out x in`, `b: 1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, din) = self.shape(x);
        let (dout, win) = self.shape(w);
        assert_eq!(din, win, "affine: input {din} vs weight {win}");
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![T::zero(); n * dout];
        for r in 0..n {
            let xr = &xv[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &wv[o * din..(o + 1) * din];
                let mut acc = T::zero();
                for (a, b) in xr.iter().zip(wr) {
                    acc = acc + *a * *b;
                }
                out[r * dout + o] = acc;
            }
        }
        if let Some(b) = b {
            assert_eq!(self.shape(b), (1, dout), "affine bias");
            let bv = self.value(b);
            for r in 0..n {
                for o in 0..dout {
                    out[r * dout + o] = out[r * dout + o] + bv[o];
                }
            }
        }
        self.push(n, dout, out, Op::Affine { x, w, b })
    }

    /// `A B` for `A: r x k`, `B: k x c`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims");
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                let brow = &bv[p * c..(p + 1) * c];
                let orow = &mut out[i * c..(i + 1) * c];
                for (o, bb) in orow.iter_mut().zip(brow) {
                    *o = *o + aip * *bb;
                }
            }
        }
        self.push(r, c, out, Op::MatMul { a, b })
    }

    fn elementwise2(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let shape = self.shape(a);
        assert_eq!(shape, self.shape(b), "elementwise shapes");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(shape.0, shape.1, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.elementwise2(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.elementwise2(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.map(a, |x| if x > T::zero() { x } else { x * slope }, Op::LeakyRelu(a, slope))
    }

    /// Elementwise product with a constant mask.
    pub fn mask(&mut self, src: Var, mask: Vec<T>) -> Var {
        let (r, c) = self.shape(src);
        assert_eq!(mask.len(), r * c);
        let out = self.value(src).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.push(r, c, out, Op::Mask { src, mask })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let (pr, pc) = self.shape(p);
                assert_eq!(pr, rows, "concat_cols rows");
                out.extend_from_slice(&self.value(p)[r * pc..(r + 1) * pc]);
            }
        }
        self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pc, cols, "concat_rows cols");
            rows += pr;
            out.extend_from_slice(self.value(p));
        }
        self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.shape(src);
        assert!(start + len <= cols, "slice_cols out of range");
        let v = self.value(src);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + start + len]);
        }
        self.push(rows, len, out, Op::SliceCols { src, start })
    }

    pub fn reshape(&mut self, src: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(src);
        assert_eq!(r * c, rows * cols, "reshape size");
        let out = self.value(src).to_vec();
        self.push(rows, cols, out, Op::Reshape(src))
    }

    /// One LSTM cell update; returns `(h, c)`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Option<Var>) -> (Var, Var) {
        let (r, four_h) = self.shape(gates);
        assert_eq!(r, 1);
        let h = four_h / 4;
        let g = self.value(gates);
        let cp: Vec<T> = match c_prev {
            Some(c) => self.value(c).to_vec(),
            None => vec![T::zero(); h],
        };
        let mut out = vec![T::zero(); 2 * h];
        for u in 0..h {
            let i = sigmoid(g[u]);
            let f = sigmoid(g[h + u]);
            let gg = g[2 * h + u].tanh();
            let o = sigmoid(g[3 * h + u]);
            let c = f * cp[u] + i * gg;
            out[u] = o * c.tanh();
            out[h + u] = c;
        }
        let cell = self.push(1, 2 * h, out, Op::LstmCell { gates, c_prev });
        let hv = self.slice_cols(cell, 0, h);
        let cv = self.slice_cols(cell, h, h);
        (hv, cv)
    }

    /// Negative log-likelihood of `target` under a softmax over one row.
    pub fn nll(&mut self, logits: Var, target: usize) -> Var {
        let lp = log_softmax(self.value(logits));
        assert!(target < lp.len());
        let loss = -lp[target];
        self.push(1, 1, vec![loss], Op::Nll { logits, target })
    }

    pub fn log_softmax(&mut self, logits: Var) -> Var {
        let (r, c) = self.shape(logits);
        assert_eq!(r, 1);
        let lp = log_softmax(self.value(logits));
        self.push(1, c, lp, Op::LogSoftmax(logits))
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut acc = T::zero();
        for &p in parts {
            assert_eq!(self.shape(p), (1, 1), "sum of scalars");
            acc = acc + self.scalar(p);
        }
        self.push(1, 1, vec![acc], Op::Sum(parts.to_vec()))
    }

    /// Accumulates d(root)/d(param) into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Gradients<T>) {
        let mut g: Vec<Vec<T>> = Vec::with_capacity(root.0 + 1);
        g.resize_with(root.0 + 1, Vec::new);
        let size = self.nodes[root.0].value.len().max(1);
        g[root.0] = vec![T::one(); size];

        for idx in (0..=root.0).rev() {
            if g[idx].is_empty() {
                continue;
            }
            let gy = std::mem::take(&mut g[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Gather { src, rows } => {
                    let cols = node.cols;
                    let slot = self.slot(&mut g, grads, *src);
                    for (r, &i) in rows.iter().enumerate() {
                        for c in 0..cols {
                            slot[i * cols + c] = slot[i * cols + c] + gy[r * cols + c];
                        }
                    }
                }
                Op::Affine { x, w, b } => {
                    let (n, din) = self.shape(*x);
                    let dout = node.cols;
                    {
                        let wv = self.value(*w);
                        let slot = self.slot(&mut g, grads, *x);
                        for r in 0..n {
                            for o in 0..dout {
                                let d = gy[r * dout + o];
                                if d == T::zero() {
                                    continue;
                                }
                                let wr = &wv[o * din..(o + 1) * din];
                                let sr = &mut slot[r * din..(r + 1) * din];
                                for (s, ww) in sr.iter_mut().zip(wr) {
                                    *s = *s + d * *ww;
                                }
                            }
                        }
                    }
                    {
                        let xv = self.value(*x);
                        let slot = self.slot(&mut g, grads, *w);
                        for r in 0..n {
                            let xr = &xv[r * din..(r + 1) * din];
                            for o in 0..dout {
                                let d = gy[r * dout + o];
                                if d == T::zero() {
                                    continue;
                                }
                                let sr = &mut slot[o * din..(o + 1) * din];
                                for (s, xx) in sr.iter_mut().zip(xr) {
                                    *s = *s + d * *xx;
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let slot = self.slot(&mut g, grads, *b);
                        for r in 0..n {
                            for o in 0..dout {
                                slot[o] = slot[o] + gy[r * dout + o];
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (r, k) = self.shape(*a);
                    let c = node.cols;
                    {
                        let bv = self.value(*b);
                        let slot = self.slot(&mut g, grads, *a);
                        for i in 0..r {
                            for p in 0..k {
                                let mut acc = T::zero();
                                for j in 0..c {
                                    acc = acc + gy[i * c + j] * bv[p * c + j];
                                }
                                slot[i * k + p] = slot[i * k + p] + acc;
                            }
                        }
                    }
                    {
                        let av = self.value(*a);
                        let slot = self.slot(&mut g, grads, *b);
                        for i in 0..r {
                            for p in 0..k {
                                let aip = av[i * k + p];
                                for j in 0..c {
                                    slot[p * c + j] = slot[p * c + j] + aip * gy[i * c + j];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let slot = self.slot(&mut g, grads, v);
                        for (s, d) in slot.iter_mut().zip(&gy) {
                            *s = *s + *d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let bv = self.value(*b).to_vec();
                    let av = self.value(*a).to_vec();
                    let slot = self.slot(&mut g, grads, *a);
                    for ((s, d), y) in slot.iter_mut().zip(&gy).zip(&bv) {
                        *s = *s + *d * *y;
                    }
                    let slot = self.slot(&mut g, grads, *b);
                    for ((s, d), x) in slot.iter_mut().zip(&gy).zip(&av) {
                        *s = *s + *d * *x;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let slot = self.slot(&mut g, grads, *a);
                    for ((s, d), y) in slot.iter_mut().zip(&gy).zip(y) {
                        *s = *s + *d * *y * (T::one() - *y);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let slot = self.slot(&mut g, grads, *a);
                    for ((s, d), y) in slot.iter_mut().zip(&gy).zip(y) {
                        *s = *s + *d * (T::one() - *y * *y);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a).to_vec();
                    let slot = self.slot(&mut g, grads, *a);
                    for ((s, d), x) in slot.iter_mut().zip(&gy).zip(&x) {
                        let k = if *x > T::zero() { T::one() } else { *slope };
                        *s = *s + *d * k;
                    }
                }
                Op::Mask { src, mask } => {
                    let slot = self.slot(&mut g, grads, *src);
                    for ((s, d), m) in slot.iter_mut().zip(&gy).zip(mask) {
                        *s = *s + *d * *m;
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = node.rows;
                    let cols = node.cols;
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        let slot = self.slot(&mut g, grads, p);
                        for r in 0..rows {
                            for c in 0..pc {
                                slot[r * pc + c] = slot[r * pc + c] + gy[r * cols + offset + c];
                            }
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].rows * self.nodes[p.0].cols;
                        let slot = self.slot(&mut g, grads, p);
                        for (s, d) in slot.iter_mut().zip(&gy[offset..offset + len]) {
                            *s = *s + *d;
                        }
                        offset += len;
                    }
                }
                Op::SliceCols { src, start } => {
                    let (rows, len) = (node.rows, node.cols);
                    let cols = self.shape(*src).1;
                    let slot = self.slot(&mut g, grads, *src);
                    for r in 0..rows {
                        for c in 0..len {
                            slot[r * cols + start + c] = slot[r * cols + start + c] + gy[r * len + c];
                        }
                    }
                }
                Op::Reshape(src) => {
                    let slot = self.slot(&mut g, grads, *src);
                    for (s, d) in slot.iter_mut().zip(&gy) {
                        *s = *s + *d;
                    }
                }
                Op::LstmCell { gates, c_prev } => {
                    let h = node.cols / 2;
                    let gv = self.value(*gates).to_vec();
                    let cp: Vec<T> = match c_prev {
                        Some(c) => self.value(*c).to_vec(),
                        None => vec![T::zero(); h],
                    };
                    let mut dgates = vec![T::zero(); 4 * h];
                    let mut dcp = vec![T::zero(); h];
                    for u in 0..h {
                        let i = sigmoid(gv[u]);
                        let f = sigmoid(gv[h + u]);
                        let gg = gv[2 * h + u].tanh();
                        let o = sigmoid(gv[3 * h + u]);
                        let c = node.value[h + u];
                        let tc = c.tanh();
                        let dh = gy[u];
                        let dc = gy[h + u] + dh * o * (T::one() - tc * tc);
                        dgates[u] = dc * gg * i * (T::one() - i);
                        dgates[h + u] = dc * cp[u] * f * (T::one() - f);
                        dgates[2 * h + u] = dc * i * (T::one() - gg * gg);
                        dgates[3 * h + u] = dh * tc * o * (T::one() - o);
                        dcp[u] = dc * f;
                    }
                    let slot = self.slot(&mut g, grads, *gates);
                    for (s, d) in slot.iter_mut().zip(&dgates) {
                        *s = *s + *d;
                    }
                    if let Some(c) = c_prev {
                        let slot = self.slot(&mut g, grads, *c);
                        for (s, d) in slot.iter_mut().zip(&dcp) {
                            *s = *s + *d;
                        }
                    }
                }
                Op::Nll { logits, target } => {
                    let lp = log_softmax(self.value(*logits));
                    let d = gy[0];
                    let slot = self.slot(&mut g, grads, *logits);
                    for (c, s) in slot.iter_mut().enumerate() {
                        let p = lp[c].exp();
                        let onehot = if c == *target { T::one() } else { T::zero() };
                        *s = *s + d * (p - onehot);
                    }
                }
                Op::LogSoftmax(logits) => {
                    let total = gy.iter().fold(T::zero(), |a, &b| a + b);
                    let y = &node.value;
                    let slot = self.slot(&mut g, grads, *logits);
                    for ((s, d), y) in slot.iter_mut().zip(&gy).zip(y) {
                        *s = *s + *d - y.exp() * total;
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        let slot = self.slot(&mut g, grads, p);
                        slot[0] = slot[0] + gy[0];
                    }
                }
            }
        }
    }

    /// Gradient buffer for `v`: the parameter's accumulator for parameter
    /// nodes, a lazily allocated per-node buffer otherwise.
    fn slot<'a>(&self, g: &'a mut [Vec<T>], grads: &'a mut Gradients<T>, v: Var) -> &'a mut [T] {
        let node = &self.nodes[v.0];
        if let Op::Param(id) = node.op {
            return grads.get_mut(id);
        }
        let buf = &mut g[v.0];
        if buf.is_empty() {
            *buf = vec![T::zero(); node.rows * node.cols];
        }
        buf
    }
}

/// Numerically stable log-softmax of a slice.
pub fn log_softmax<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = x.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    let lse = max + sum.ln();
    x.iter().map(|&v| v - lse).collect()
}

pub fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    log_softmax(x).into_iter().map(|v| v.exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{ParamSet, Tensor};

    fn numeric_check(build: impl Fn(&mut Graph<f64>) -> Var, params: &mut ParamSet<f64>) {
        let mut grads = Gradients::zeros_like(params);
        {
            let mut g = Graph::new(params);
            let out = build(&mut g);
            g.backward(out, &mut grads);
        }
        let eps = 1e-6;
        for p in 0..params.len() {
            let id = ParamId::from_index(p);
            for e in 0..params.get(id).data.len() {
                let orig = params.get(id).data[e];
                params.get_mut(id).data[e] = orig + eps;
                let plus = {
                    let mut g = Graph::new(params);
                    let o = build(&mut g);
                    g.scalar(o)
                };
                params.get_mut(id).data[e] = orig - eps;
                let minus = {
                    let mut g = Graph::new(params);
                    let o = build(&mut g);
                    g.scalar(o)
                };
                params.get_mut(id).data[e] = orig;
                let num = (plus - minus) / (2.0 * eps);
                let ana = grads.get(id)[e];
                assert!((num - ana).abs() < 1e-6 * (1.0 + num.abs()), "param {p}[{e}]: {ana} vs {num}");
            }
        }
    }

    fn set(specs: &[(usize, usize)]) -> ParamSet<f64> {
        let mut s = ParamSet::new();
        let mut x = 0.37f64;
        for (i, &(r, c)) in specs.iter().enumerate() {
            let data = (0..r * c)
                .map(|_| {
                    x = (x * 7.13 + 0.11).fract();
                    x - 0.5
                })
                .collect();
            s.add(format!("p{i}"), Tensor { rows: r, cols: c, data });
        }
        s
    }

    #[test]
    fn affine_lstm_nll_gradients() {
        let mut ps = set(&[(2, 3), (8, 3), (8, 2), (1, 8), (2, 2)]);
        numeric_check(
            |g| {
                let x = g.param(ParamId::from_index(0));
                let w = g.param(ParamId::from_index(1));
                let wh = g.param(ParamId::from_index(2));
                let b = g.param(ParamId::from_index(3));
                let pre = g.affine(x, w, Some(b));
                let r0 = g.row(pre, 0);
                let (h, c) = g.lstm_cell(r0, None);
                let r1 = g.row(pre, 1);
                let rec = g.affine(h, wh, None);
                let gates = g.add(r1, rec);
                let (h2, _) = g.lstm_cell(gates, Some(c));
                let cat = g.concat_cols(&[h, h2]);
                let stacked = g.concat_rows(&[cat, cat]);
                let sl = g.slice_cols(stacked, 1, 2);
                let lr = g.leaky_relu(sl, 0.01);
                let w = g_param(g, 4);
                let out = g.matmul(lr, w);
                let flat = g.reshape(out, 1, 4);
                let t = g.tanh(flat);
                let s = g.sigmoid(t);
                let m = g.mul(s, flat);
                let a = g.nll(m, 2);
                let ls = g.log_softmax(m);
                let pick = g.gather(ls, &[0]);
                let mk = g.mask(pick, vec![0.5, -1.0, 2.0, 0.0]);
                let r = g.reshape(mk, 4, 1);
                let q = g.gather(r, &[1]);
                g.sum(&[a, q])
            },
            &mut ps,
        );
    }

    fn g_param(g: &mut Graph<f64>, i: usize) -> Var {
        g.param(ParamId::from_index(i))
    }

    #[test]
    fn log_softmax_is_normalized() {
        let lp = log_softmax(&[1.0f64, 2.0, 3.0, -50.0]);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
