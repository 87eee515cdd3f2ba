//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output value and whatever it
//! needs for the backward pass. Backward walks the tape in reverse, visiting
//! each node once, and sums gradient contributions for inputs that are used
//! more than once.

use std::sync::Arc;

use crate::compute::kernels;
use crate::compute::rng::RngState;
use crate::compute::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Additive attention bias applied to padded key positions.
pub const MASK_BIAS: f64 = -1e9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Multiply-accumulate counts executed by the dense kernels of a tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    /// MACs in the l×l part of attention (scores and weighted values).
    pub attention_macs: u64,
    /// MACs in every dense matrix product (projections, FFN, classifier).
    pub matmul_macs: u64,
}

impl FlopCounter {
    pub fn add(&mut self, other: &FlopCounter) {
        self.attention_macs += other.attention_macs;
        self.matmul_macs += other.matmul_macs;
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MaskMul(Var, Arc<Vec<T>>),
    AddConst(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<T>,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    Softmax(Var, T),
    LogSoftmax(Var, T),
    PickCols(Var, Vec<usize>),
    SymmetricKl(Var, Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::Mul(a, b)
            | Op::SymmetricKl(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::MaskMul(x, _)
            | Op::AddConst(x)
            | Op::Gelu(x)
            | Op::Softmax(x, _)
            | Op::LogSoftmax(x, _)
            | Op::PickCols(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x) => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Gather { table, .. } => vec![*table],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MaskMul(..) => "dropout",
            Op::AddConst(..) => "add_const",
            Op::Gelu(..) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "embedding_gather",
            Op::Attention { .. } => "attention",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::PickCols(..) => "pick_cols",
            Op::SymmetricKl(..) => "symmetric_kl",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Removes and returns the gradient of `var`.
    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Recording of executed primitives. Single-threaded; one tape per forward.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    flops: FlopCounter,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flops: FlopCounter::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn flops(&self) -> FlopCounter {
        self.flops
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Matrix product over the last axis of `a` with a 2-D `b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.ndim() != 2 || av.ndim() == 0 || av.cols() != bv.shape()[0] {
            return Err(Error::dim(format!(
                "matmul: {:?} @ {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            av.data(),
            k as isize,
            1,
            bv.data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
        );
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.flops.matmul_macs += (m * k * n) as u64;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::MatMul(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip_with(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip_with(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip_with(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.ndim() != 1 || bv.len() != xv.cols() {
            return Err(Error::dim(format!(
                "add_row: {:?} + {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s))
    }

    /// Adds a constant tensor; the gradient passes straight through to `x`.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != c.shape() {
            return Err(Error::dim(format!(
                "add_const: {:?} vs {:?}",
                xv.shape(),
                c.shape()
            )));
        }
        let data = xv.data().iter().zip(c.data()).map(|(&a, &b)| a + b).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::AddConst(x))
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `x` unchanged.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngState, training: bool) -> Result<Var> {
        let mask = kernels::dropout_mask::<T>(self.value(x).len(), rate, rng, training)?;
        match mask {
            None => Ok(x),
            Some(mask) => {
                let xv = self.value(x);
                let data = xv.data().iter().zip(mask.iter()).map(|(&a, &m)| a * m).collect();
                let value = Tensor::new(xv.shape().to_vec(), data)?;
                self.push(value, Op::MaskMul(x, Arc::new(mask)))
            }
        }
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(kernels::gelu);
        self.push(value, Op::Gelu(x))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        for p in [gamma, beta] {
            let pv = self.value(p);
            if pv.ndim() != 1 || pv.len() != c {
                return Err(Error::dim(format!(
                    "layer_norm: row width {c}, affine {:?}",
                    pv.shape()
                )));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.rows();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        let eps = T::from_f64_lossy(eps);
        for r in 0..rows {
            let row = xv.row(r);
            let s = kernels::normalize_row(row, eps, &mut xhat[r * c..(r + 1) * c]);
            inv_std[r] = s;
            for j in 0..c {
                out[r * c + j] = xhat[r * c + j] * g[j] + b[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Gathers rows of a 2-D table. Used for embedding lookups and for
    /// selecting the [CLS] rows of a batch.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(Error::dim(format!("gather: table {:?}", tv.shape())));
        }
        let (size, d) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= size {
                return Err(Error::Bounds {
                    what: "embedding table",
                    index: id,
                    size,
                });
            }
            out.extend_from_slice(tv.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(x))
    }

    /// Masked multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch, seq, heads·head_dim]`; `key_mask` has one
    /// entry per (batch, position) and `false` marks padding. Padded keys get
    /// an additive bias of [`MASK_BIAS`] before the softmax.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, key_mask: &[bool], heads: usize) -> Result<Var> {
        let qv = self.value(q);
        if qv.ndim() != 3 {
            return Err(Error::dim(format!("attention: q {:?}", qv.shape())));
        }
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        let (batch, seq, d) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::dim(format!("attention: width {d} not divisible by {heads} heads")));
        }
        if key_mask.len() != batch * seq {
            return Err(Error::dim(format!(
                "attention: mask has {} entries, expected {}",
                key_mask.len(),
                batch * seq
            )));
        }
        let (out, probs, macs) = kernels::attention_forward(
            qv.data(),
            self.value(k).data(),
            self.value(v).data(),
            key_mask,
            batch,
            seq,
            d,
            heads,
        );
        self.flops.attention_macs += macs;
        let value = Tensor::new(vec![batch, seq, d], out)?;
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                probs,
                batch,
                seq,
                heads,
            },
        )
    }

    /// Row-wise softmax of `tau·x`.
    pub fn softmax(&mut self, x: Var, tau: T) -> Result<Var> {
        let value = kernels::softmax(self.value(x), tau, false)?;
        self.push(value, Op::Softmax(x, tau))
    }

    /// Row-wise log-softmax of `tau·x`.
    pub fn log_softmax(&mut self, x: Var, tau: T) -> Result<Var> {
        let value = kernels::softmax(self.value(x), tau, true)?;
        self.push(value, Op::LogSoftmax(x, tau))
    }

    /// `out[r] = x[r, cols[r]]`.
    pub fn pick_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if xv.rows() != cols.len() {
            return Err(Error::dim(format!(
                "pick_cols: {} rows, {} indices",
                xv.rows(),
                cols.len()
            )));
        }
        let mut out = Vec::with_capacity(cols.len());
        for (r, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(Error::Bounds {
                    what: "row",
                    index: j,
                    size: c,
                });
            }
            out.push(xv.row(r)[j]);
        }
        let value = Tensor::new(vec![cols.len()], out)?;
        self.push(value, Op::PickCols(x, cols.to_vec()))
    }

    /// Per-row symmetric KL divergence `D(p‖q) + D(q‖p)` of two row-wise
    /// log-probability matrices, computed as `Σ (p−q)(log p − log q)`.
    pub fn symmetric_kl(&mut self, log_p: Var, log_q: Var) -> Result<Var> {
        self.same_shape(log_p, log_q, "symmetric_kl")?;
        let (a, b) = (self.value(log_p), self.value(log_q));
        let out = (0..a.rows())
            .map(|r| kernels::symmetric_kl_row(a.row(r), b.row(r)))
            .collect();
        let value = Tensor::new(vec![a.rows()], out)?;
        self.push(value, Op::SymmetricKl(log_p, log_q))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::contract("mean of empty tensor"));
        }
        let value = Tensor::scalar(xv.sum() / T::from_usize(xv.len()).unwrap());
        self.push(value, Op::Mean(x))
    }

    /// Mean negative log-likelihood of `labels` under the heated softmax of
    /// `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], tau: T) -> Result<Var> {
        let lp = self.log_softmax(logits, tau)?;
        let picked = self.pick_cols(lp, labels)?;
        let m = self.mean(picked)?;
        self.scale(m, -T::one())
    }

    /// Reverse pass from a scalar `loss` to every trainable leaf. Consumes
    /// the tape. Trainable leaves that do not influence `loss` receive zeros.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let needed: Vec<bool> = self.nodes.iter().map(|n| n.requires_grad).collect();
        let mut grads = self.propagate(loss, &needed)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                let keep = n.requires_grad && matches!(n.op, Op::Leaf);
                g.filter(|_| keep)
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Gradient of `loss` with respect to `wrt` only, leaving the tape intact
    /// so recording can continue. Parameter gradients are not computed.
    pub fn grad_wrt(&self, loss: Var, wrt: &[Var]) -> Result<Gradients<T>> {
        let mut needed = vec![false; self.nodes.len()];
        for v in wrt {
            needed[v.0] = true;
        }
        for i in 0..self.nodes.len() {
            if !needed[i] {
                needed[i] = self.nodes[i].op.inputs().iter().any(|v| needed[v.0]);
            }
        }
        let mut grads = self.propagate(loss, &needed)?;
        let mut out: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for v in wrt {
            out[v.0] = Some(
                grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape().to_vec())),
            );
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, loss: Var, needed: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if needed[loss.0] {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, needed, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape")))
            .collect())
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], needed: &[bool], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        // Lazily allocated accumulator for an input's gradient.
        fn acc<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut [T] {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }
        let len = |v: Var| self.nodes[v.0].value.len();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if needed[a.0] {
                    // dA = dC · Bᵀ
                    let ga = acc(grads, *a, m * k);
                    T::gemm(m, n, k, g, n as isize, 1, bv.data(), 1, n as isize, T::one(), ga);
                }
                if needed[b.0] {
                    // dB = Aᵀ · dC
                    let gb = acc(grads, *b, k * n);
                    T::gemm(k, m, n, av.data(), 1, k as isize, g, n as isize, 1, T::one(), gb);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, T::one())] {
                    if needed[v.0] {
                        let gv = acc(grads, v, g.len());
                        for (o, &x) in gv.iter_mut().zip(g) {
                            *o = *o + sign * x;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if needed[a.0] {
                    let ga = acc(grads, *a, g.len());
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o = *o + x;
                    }
                }
                if needed[b.0] {
                    let gb = acc(grads, *b, g.len());
                    for (o, &x) in gb.iter_mut().zip(g) {
                        *o = *o - x;
                    }
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                if needed[x.0] {
                    let gx = acc(grads, *x, g.len());
                    for (o, &y) in gx.iter_mut().zip(g) {
                        *o = *o + y;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if needed[x.0] {
                    let gx = acc(grads, *x, g.len());
                    for (o, &y) in gx.iter_mut().zip(g) {
                        *o = *o + y;
                    }
                }
                if needed[bias.0] {
                    let c = len(*bias);
                    let gb = acc(grads, *bias, c);
                    for row in g.chunks(c) {
                        for (o, &y) in gb.iter_mut().zip(row) {
                            *o = *o + y;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if needed[a.0] {
                    let bv = val(*b);
                    let ga = acc(grads, *a, g.len());
                    for ((o, &y), &w) in ga.iter_mut().zip(g).zip(bv) {
                        *o = *o + y * w;
                    }
                }
                if needed[b.0] {
                    let av = val(*a);
                    let gb = acc(grads, *b, g.len());
                    for ((o, &y), &w) in gb.iter_mut().zip(g).zip(av) {
                        *o = *o + y * w;
                    }
                }
            }
            Op::Scale(x, s) => {
                if needed[x.0] {
                    let gx = acc(grads, *x, g.len());
                    for (o, &y) in gx.iter_mut().zip(g) {
                        *o = *o + *s * y;
                    }
                }
            }
            Op::MaskMul(x, mask) => {
                if needed[x.0] {
                    let gx = acc(grads, *x, g.len());
                    for ((o, &y), &m) in gx.iter_mut().zip(g).zip(mask.iter()) {
                        *o = *o + y * m;
                    }
                }
            }
            Op::Gelu(x) => {
                if needed[x.0] {
                    let xv = val(*x);
                    let gx = acc(grads, *x, g.len());
                    for ((o, &y), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        *o = *o + y * kernels::gelu_grad(xi);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = len(*gamma);
                if needed[beta.0] {
                    let gb = acc(grads, *beta, c);
                    for row in g.chunks(c) {
                        for (o, &y) in gb.iter_mut().zip(row) {
                            *o = *o + y;
                        }
                    }
                }
                if needed[gamma.0] {
                    let gg = acc(grads, *gamma, c);
                    for (row, xh) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, &y), &h) in gg.iter_mut().zip(row).zip(xh) {
                            *o = *o + y * h;
                        }
                    }
                }
                if needed[x.0] {
                    let gamma_v = val(*gamma).to_vec();
                    let gx = acc(grads, *x, g.len());
                    kernels::layer_norm_backward(g, xhat, inv_std, &gamma_v, gx);
                }
            }
            Op::Gather { table, ids } => {
                if needed[table.0] {
                    let d = self.nodes[table.0].value.cols();
                    let gt = acc(grads, *table, len(*table));
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &y) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o = *o + y;
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                probs,
                batch,
                seq,
                heads,
            } => {
                let d = self.nodes[q.0].value.cols();
                let n = g.len();
                let mut gq = vec![T::zero(); if needed[q.0] { n } else { 0 }];
                let mut gk = vec![T::zero(); if needed[k.0] { n } else { 0 }];
                let mut gv = vec![T::zero(); if needed[v.0] { n } else { 0 }];
                kernels::attention_backward(
                    g,
                    val(*q),
                    val(*k),
                    val(*v),
                    probs,
                    *batch,
                    *seq,
                    d,
                    *heads,
                    &mut gq,
                    &mut gk,
                    &mut gv,
                );
                for (var, local) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if needed[var.0] {
                        let dst = acc(grads, var, n);
                        for (o, y) in dst.iter_mut().zip(local) {
                            *o = *o + y;
                        }
                    }
                }
            }
            Op::Softmax(x, tau) => {
                if needed[x.0] {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let gx = acc(grads, *x, g.len());
                    for ((gr, yr), or) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((o, &gi), &yi) in or.iter_mut().zip(gr).zip(yr) {
                            *o = *o + *tau * yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x, tau) => {
                if needed[x.0] {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let gx = acc(grads, *x, g.len());
                    for ((gr, yr), or) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                        let total: T = gr.iter().copied().sum();
                        for ((o, &gi), &yi) in or.iter_mut().zip(gr).zip(yr) {
                            *o = *o + *tau * (gi - yi.exp() * total);
                        }
                    }
                }
            }
            Op::PickCols(x, cols) => {
                if needed[x.0] {
                    let c = self.nodes[x.0].value.cols();
                    let gx = acc(grads, *x, len(*x));
                    for (r, &j) in cols.iter().enumerate() {
                        gx[r * c + j] = gx[r * c + j] + g[r];
                    }
                }
            }
            Op::SymmetricKl(a, b) => {
                let c = self.nodes[a.0].value.cols();
                let (av, bv) = (val(*a), val(*b));
                for (target, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if !needed[target.0] {
                        continue;
                    }
                    let gt = acc(grads, target, av.len());
                    for (r, &gr) in g.iter().enumerate() {
                        for j in r * c..(r + 1) * c {
                            let (la, lb) = (av[j], bv[j]);
                            let (pa, pb) = (la.exp(), lb.exp());
                            // ∂/∂la = pa(la−lb) + (pa−pb); ∂/∂lb = −pb(la−lb) − (pa−pb)
                            let own = if sign > T::zero() { pa } else { pb };
                            let dv = sign * (own * (la - lb) + (pa - pb));
                            gt[j] = gt[j] + gr * dv;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if needed[x.0] {
                    let gx = acc(grads, *x, len(*x));
                    for o in gx.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if needed[x.0] {
                    let n = len(*x);
                    let share = g[0] / T::from_usize(n).unwrap();
                    let gx = acc(grads, *x, n);
                    for o in gx.iter_mut() {
                        *o = *o + share;
                    }
                }
            }
        }
    }
}
