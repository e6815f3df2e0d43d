//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and the ids of its inputs.
//! Inputs always precede outputs, so the tape is acyclic by construction and a
//! single reverse sweep visits every node once.
//!
//! Shape errors inside individual ops are programmer errors and panic; callers
//! that accept user data (`Mlp::forward`) validate shapes up front.

use super::tensor::{axpy, dot, matmul_bt, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    /// matrix plus a row vector broadcast over rows
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// tensor divided by a scalar node
    DivScalar(Var, Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    LogClamped(Var, f64),
    Sum(Var),
    ConcatCols(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-owner record of differentiable operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` if nothing flowed into it.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf (parameter or input we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` with gradient flow cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.rows());
        assert_eq!(k, bv.cols(), "matmul_bt inner dimension");
        let out = matmul_bt(av.data(), bv.data(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::matrix(n, m, out).expect("shape"),
            Op::MatMulBt(a, b),
            rg,
        )
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let c = av.cols();
        assert_eq!(c, rv.len(), "add_row width");
        let mut out = av.clone();
        for r in out.data_mut().chunks_mut(c) {
            for (x, b) in r.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shapes");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let out = self.value(a).map(|x| x / sv);
        let rg = self.rg(a) || self.rg(s);
        self.push(out, Op::DivScalar(a, s), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.clone();
        for r in out.data_mut().chunks_mut(c) {
            softmax_in_place(r);
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// `ln(max(x, eps))`; no gradient flows where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, eps: f64) -> Var {
        let out = self.value(a).map(|x| x.max(eps).ln());
        let rg = self.rg(a);
        self.push(out, Op::LogClamped(a, eps), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat rows");
        let (ca, cb) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(av.rows() * (ca + cb));
        for i in 0..av.rows() {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let out = Tensor::matrix(av.rows(), ca + cb, data).expect("shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::ConcatCols(a, b), rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self
            .nodes
            .get(output.0)
            .ok_or_else(|| Error::Contract("output is not on this tape".into()))?;
        if !out.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.value.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match node.op {
            Op::Leaf => {}
            Op::MatMulBt(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                if self.rg(a) {
                    let ga = acc(grads, a, av);
                    for i in 0..n {
                        let gr = g.row(i);
                        let dst = &mut ga.data_mut()[i * k..(i + 1) * k];
                        for (j, &gij) in gr.iter().enumerate() {
                            if gij != 0.0 {
                                axpy(gij, &bv.data()[j * k..(j + 1) * k], dst);
                            }
                        }
                    }
                }
                if self.rg(b) {
                    let gb = acc(grads, b, bv);
                    for i in 0..n {
                        let ar = &av.data()[i * k..(i + 1) * k];
                        for j in 0..m {
                            let gij = g.data()[i * m + j];
                            if gij != 0.0 {
                                axpy(gij, ar, &mut gb.data_mut()[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(a) {
                    add_into(acc(grads, a, self.value(a)), g);
                }
                if self.rg(row) {
                    let rv = self.value(row);
                    let c = rv.len();
                    let gr = acc(grads, row, rv);
                    for r in g.data().chunks(c) {
                        for (x, y) in gr.data_mut().iter_mut().zip(r) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.rg(a) {
                    add_into(acc(grads, a, self.value(a)), g);
                }
                if self.rg(b) {
                    add_into(acc(grads, b, self.value(b)), g);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(a) {
                    add_into(acc(grads, a, self.value(a)), g);
                }
                if self.rg(b) {
                    let gb = acc(grads, b, self.value(b));
                    for (x, y) in gb.data_mut().iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.rg(a) {
                    let ga = acc(grads, a, av);
                    for ((x, gi), bi) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *x += gi * bi;
                    }
                }
                if self.rg(b) {
                    let gb = acc(grads, b, bv);
                    for ((x, gi), ai) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = acc(grads, a, self.value(a));
                axpy(c, g.data(), ga.data_mut());
            }
            Op::DivScalar(a, s) => {
                let av = self.value(a);
                let sv = self.value(s).item();
                if self.rg(a) {
                    axpy(1.0 / sv, g.data(), acc(grads, a, av).data_mut());
                }
                if self.rg(s) {
                    let gs = -dot(g.data(), av.data()) / (sv * sv);
                    acc(grads, s, self.value(s)).data_mut()[0] += gs;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(a);
                let ga = acc(grads, a, av);
                for ((x, gi), ai) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *x += if *ai > 0.0 { *gi } else { slope * gi };
                }
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let c = s.cols();
                let ga = acc(grads, a, self.value(a));
                for ((dst, sr), gr) in ga
                    .data_mut()
                    .chunks_mut(c)
                    .zip(s.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let inner = dot(sr, gr);
                    for ((x, si), gi) in dst.iter_mut().zip(sr).zip(gr) {
                        *x += si * (gi - inner);
                    }
                }
            }
            Op::LogClamped(a, eps) => {
                let av = self.value(a);
                let ga = acc(grads, a, av);
                for ((x, gi), ai) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    if *ai > eps {
                        *x += gi / ai;
                    }
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                let ga = acc(grads, a, self.value(a));
                for x in ga.data_mut() {
                    *x += gv;
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(a).cols(), self.value(b).cols());
                if self.rg(a) {
                    let ga = acc(grads, a, self.value(a));
                    for (dst, src) in ga.data_mut().chunks_mut(ca).zip(g.data().chunks(ca + cb)) {
                        for (x, y) in dst.iter_mut().zip(&src[..ca]) {
                            *x += y;
                        }
                    }
                }
                if self.rg(b) {
                    let gb = acc(grads, b, self.value(b));
                    for (dst, src) in gb.data_mut().chunks_mut(cb).zip(g.data().chunks(ca + cb)) {
                        for (x, y) in dst.iter_mut().zip(&src[ca..]) {
                            *x += y;
                        }
                    }
                }
            }
        }
    }
}

fn acc<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (x, y) in dst.data_mut().iter_mut().zip(src.data()) {
        *x += y;
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
