//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append nodes and return [`Var`] handles; [`Tape::backward`] walks the list
//! once in reverse, accumulating gradients for every node that depends on a
//! leaf created with `requires_grad`. A tape is single-use for gradients:
//! a second `backward` is rejected.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Relu { x: Var },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { a: Var, b: Var },
    Dropout { x: Var, mask: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    Reshape { x: Var },
    SplitHeads { x: Var, batch: usize, seq: usize, heads: usize },
    MergeHeads { x: Var, batch: usize, seq: usize, heads: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    Sum { x: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    grad_enabled: bool,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Tape<T> {
    /// Tape that records everything needed for `backward`.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), grad_enabled: true, backward_done: false }
    }

    /// Forward-only tape: no node requires a gradient, so backward data is never kept.
    pub fn inference() -> Self {
        Tape { grad_enabled: false, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// The node's value as a shared handle (no copy).
    pub fn shared_value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad has node shape"))
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Leaf node; `Arc` inputs are shared with the caller rather than copied.
    pub fn leaf(&mut self, value: impl Into<Arc<Tensor<T>>>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: impl Into<Arc<Tensor<T>>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: value.into(), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn result(&self, shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).expect("op output shape is consistent")
    }

    /// `a [..., k] x b [k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || *sa.last().unwrap() != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).len() / k;
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.any_grad(&[a, b]);
        let value = self.result(shape, out);
        Ok(self.push(value, Op::MatMul { a, b }, rg))
    }

    /// Batched product: `a [bt, m, k] x b [bt, k, n]`, or `b [bt, n, k]` transposed when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::shape("batch_matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let kb = if trans_b { sb[2] } else { sb[1] };
        if kb != k {
            return Err(bad());
        }
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![T::zero(); bt * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..bt {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    &av[i * m * k..(i + 1) * m * k],
                    k as isize,
                    1,
                    &bv[i * k * n..(i + 1) * k * n],
                    rsb,
                    csb,
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                    n as isize,
                    1,
                );
            }
        }
        let rg = self.any_grad(&[a, b]);
        let value = self.result(vec![bt, m, n], out);
        Ok(self.push(value, Op::BatchMatMul { a, b, trans_b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let rg = self.any_grad(&[a, b]);
        let value = self.result(self.shape(a).to_vec(), data);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Adds a `[n]` vector to every row of `x [..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", self.shape(x), self.shape(bias))));
        }
        let bv = self.value(bias).data();
        let data = self.value(x).data().chunks(n).flat_map(|row| row.iter().zip(bv).map(|(&u, &v)| u + v)).collect();
        let rg = self.any_grad(&[x, bias]);
        let value = self.result(self.shape(x).to_vec(), data);
        Ok(self.push(value, Op::AddBias { x, bias }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let rg = self.any_grad(&[a, b]);
        let value = self.result(self.shape(a).to_vec(), data);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * factor).collect();
        let rg = self.any_grad(&[x]);
        let value = self.result(self.shape(x).to_vec(), data);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let rg = self.any_grad(&[x]);
        let value = self.result(self.shape(x).to_vec(), data);
        self.push(value, Op::Relu { x }, rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = self.value(x).last_dim();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.any_grad(&[x]);
        let value = self.result(self.shape(x).to_vec(), data);
        self.push(value, Op::Softmax { x }, rg)
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let n = self.value(x).last_dim();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            log_softmax_in_place(row);
        }
        let rg = self.any_grad(&[x]);
        let value = self.result(self.shape(x).to_vec(), data);
        self.push(value, Op::LogSoftmax { x }, rg)
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta` of shape `[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gamma {:?}, beta {:?}", self.shape(x), self.shape(gamma), self.shape(beta)),
            ));
        }
        let nf = T::from_usize(n).unwrap();
        let rows = self.value(x).rows();
        let mut xhat = Vec::with_capacity(rows * n);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * n);
        {
            let (g, b) = (self.value(gamma).data(), self.value(beta).data());
            for row in self.value(x).data().chunks(n) {
                let mean = row.iter().copied().sum::<T>() / nf;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
                let r = T::one() / (var + eps).sqrt();
                rstd.push(r);
                for (i, &v) in row.iter().enumerate() {
                    let h = (v - mean) * r;
                    xhat.push(h);
                    out.push(h * g[i] + b[i]);
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        if !rg {
            xhat = Vec::new();
            rstd = Vec::new();
        }
        let value = self.result(self.shape(x).to_vec(), out);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Row lookup into `table [vocab, d]`; output shape is `prefix ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], prefix: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::shape("embedding", format!("table must be 2-D, got {st:?}")));
        }
        if prefix.iter().product::<usize>() != ids.len() || ids.is_empty() {
            return Err(Error::shape("embedding", format!("{} ids for prefix {prefix:?}", ids.len())));
        }
        let (vocab, d) = (st[0], st[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape("embedding", format!("id {bad} out of range for vocabulary {vocab}")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let mut shape = prefix.to_vec();
        shape.push(d);
        let rg = self.any_grad(&[table]);
        let value = self.result(shape, out);
        let ids = if rg { ids.to_vec() } else { Vec::new() };
        Ok(self.push(value, Op::Embedding { table, ids }, rg))
    }

    /// Concatenation along the last dimension.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat_last", format!("{sa:?} ++ {sb:?}")));
        }
        let (na, nb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let mut out = Vec::with_capacity(self.value(a).len() + self.value(b).len());
        for (ra, rb) in self.value(a).data().chunks(na).zip(self.value(b).data().chunks(nb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = na + nb;
        let rg = self.any_grad(&[a, b]);
        let value = self.result(shape, out);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Inverted dropout. Identity when not training or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> =
            (0..self.value(x).len()).map(|_| if rng.bernoulli(p) { T::zero() } else { keep }).collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.any_grad(&[x]);
        let value = self.result(self.shape(x).to_vec(), data);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Mean token cross entropy of `logits [rows, vocab]`; `None` targets are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let vocab = self.value(logits).last_dim();
        let rows = self.value(logits).rows();
        if targets.len() != rows {
            return Err(Error::shape("cross_entropy", format!("{rows} rows, {} targets", targets.len())));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::Empty { op: "cross_entropy" });
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= vocab) {
            return Err(Error::shape("cross_entropy", format!("target {bad} out of range for {vocab} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0f64;
        for (row, t) in probs.chunks_mut(vocab).zip(targets) {
            log_softmax_in_place(row);
            if let Some(t) = *t {
                total -= row[t].as_f64();
            }
            for v in row.iter_mut() {
                *v = v.exp();
            }
        }
        let loss = T::from_f64_lossy(total / count as f64);
        let rg = self.any_grad(&[logits]);
        if !rg {
            probs = Vec::new();
        }
        let value = Tensor::scalar(loss);
        Ok(self.push(value, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = (*self.nodes[x.0].value).clone().reshape(shape.to_vec())?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// `[batch, seq, heads * dh] -> [batch * heads, seq, dh]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || !s[2].is_multiple_of(heads) {
            return Err(Error::shape("split_heads", format!("{s:?} into {heads} heads")));
        }
        let (batch, seq, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let src = (b * seq + t) * d + h * dh;
                    let dst = ((b * heads + h) * seq + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&xv[src..src + dh]);
                }
            }
        }
        let rg = self.any_grad(&[x]);
        let value = self.result(vec![batch * heads, seq, dh], out);
        Ok(self.push(value, Op::SplitHeads { x, batch, seq, heads }, rg))
    }

    /// Inverse of [`split_heads`](Self::split_heads).
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || !s[0].is_multiple_of(heads) {
            return Err(Error::shape("merge_heads", format!("{s:?} from {heads} heads")));
        }
        let (batch, seq, dh) = (s[0] / heads, s[1], s[2]);
        let d = dh * heads;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let dst = (b * seq + t) * d + h * dh;
                    let src = ((b * heads + h) * seq + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&xv[src..src + dh]);
                }
            }
        }
        let rg = self.any_grad(&[x]);
        let value = self.result(vec![batch, seq, d], out);
        Ok(self.push(value, Op::MergeHeads { x, batch, seq, heads }, rg))
    }

    /// Selects rows of `x` viewed as `[rows, last_dim]`; output is `[rows.len(), last_dim]`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let d = self.value(x).last_dim();
        let total = self.value(x).rows();
        if rows.is_empty() {
            return Err(Error::Empty { op: "gather_rows" });
        }
        if let Some(bad) = rows.iter().find(|&&r| r >= total) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {total}")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&xv[r * d..(r + 1) * d]);
        }
        let rg = self.any_grad(&[x]);
        let value = self.result(vec![rows.len(), d], out);
        Ok(self.push(value, Op::GatherRows { x, rows: rows.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Populates gradients of every node reachable from `loss`, which must be a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward("gradients already computed on this tape; build a new tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Backward("loss does not depend on any parameter".into()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[idx].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.len() / k;
                if self.rg(*a) {
                    let da = accumulate(&mut grads[a.0], m * k);
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, bv.data(), 1, n as isize, T::one(), da, k as isize, 1);
                }
                if self.rg(*b) {
                    let db = accumulate(&mut grads[b.0], k * n);
                    T::gemm(k, m, n, T::one(), av.data(), 1, k as isize, g, n as isize, 1, T::one(), db, n as isize, 1);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bt, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = node.value.shape()[2];
                // Strides of B viewed as [k, n].
                let (rsb, csb) = if *trans_b { (1, k as isize) } else { (n as isize, 1) };
                if self.rg(*a) {
                    let da = accumulate(&mut grads[a.0], bt * m * k);
                    for i in 0..bt {
                        // dA = dC [m,n] * B^T [n,k]
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            &g[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            csb,
                            rsb,
                            T::one(),
                            &mut da[i * m * k..(i + 1) * m * k],
                            k as isize,
                            1,
                        );
                    }
                }
                if self.rg(*b) {
                    let db = accumulate(&mut grads[b.0], bt * k * n);
                    for i in 0..bt {
                        // dB [k,n] = A^T [k,m] * dC [m,n], written with B's own strides.
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            &av.data()[i * m * k..(i + 1) * m * k],
                            1,
                            k as isize,
                            &g[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            T::one(),
                            &mut db[i * k * n..(i + 1) * k * n],
                            rsb,
                            csb,
                        );
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.rg(*v) {
                        let d = accumulate(&mut grads[v.0], g.len());
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if self.rg(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
                if self.rg(*bias) {
                    let n = self.value(*bias).len();
                    let d = accumulate(&mut grads[bias.0], n);
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let d = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                }
                if self.rg(*b) {
                    let d = accumulate(&mut grads[b.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale { x, factor } => {
                let d = accumulate(&mut grads[x.0], g.len());
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *factor);
            }
            Op::Relu { x } => {
                let d = accumulate(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    if out[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }
            Op::Softmax { x } => {
                let n = node.value.last_dim();
                let d = accumulate(&mut grads[x.0], g.len());
                for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                    for i in 0..n {
                        drow[i] += yrow[i] * (grow[i] - dot);
                    }
                }
            }
            Op::LogSoftmax { x } => {
                let n = node.value.last_dim();
                let d = accumulate(&mut grads[x.0], g.len());
                for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let total: T = grow.iter().copied().sum();
                    for i in 0..n {
                        drow[i] += grow[i] - yrow[i].exp() * total;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = node.value.last_dim();
                let nf = T::from_usize(n).unwrap();
                let gv = self.value(*gamma).data();
                if self.rg(*gamma) {
                    let d = accumulate(&mut grads[gamma.0], n);
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for i in 0..n {
                            d[i] += grow[i] * hrow[i];
                        }
                    }
                }
                if self.rg(*beta) {
                    let d = accumulate(&mut grads[beta.0], n);
                    for grow in g.chunks(n) {
                        d.iter_mut().zip(grow).for_each(|(d, &g)| *d += g);
                    }
                }
                if self.rg(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    let mut dxhat = vec![T::zero(); n];
                    for (r, ((drow, grow), hrow)) in d.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for i in 0..n {
                            dxhat[i] = grow[i] * gv[i];
                            s1 += dxhat[i];
                            s2 += dxhat[i] * hrow[i];
                        }
                        let scale = rstd[r] / nf;
                        for i in 0..n {
                            drow[i] += scale * (nf * dxhat[i] - s1 - hrow[i] * s2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = self.value(*table).last_dim();
                let d = accumulate(&mut grads[table.0], self.value(*table).len());
                for (row, &id) in g.chunks(dim).zip(ids) {
                    d[id * dim..(id + 1) * dim].iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
            Op::Concat { a, b } => {
                let na = self.value(*a).last_dim();
                let nb = self.value(*b).last_dim();
                if self.rg(*a) {
                    let d = accumulate(&mut grads[a.0], self.value(*a).len());
                    for (drow, grow) in d.chunks_mut(na).zip(g.chunks(na + nb)) {
                        drow.iter_mut().zip(&grow[..na]).for_each(|(d, &g)| *d += g);
                    }
                }
                if self.rg(*b) {
                    let d = accumulate(&mut grads[b.0], self.value(*b).len());
                    for (drow, grow) in d.chunks_mut(nb).zip(g.chunks(na + nb)) {
                        drow.iter_mut().zip(&grow[na..]).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let d = accumulate(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * mask[i];
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let vocab = self.value(*logits).last_dim();
                let scale = g[0] / T::from_usize(*count).unwrap();
                let d = accumulate(&mut grads[logits.0], probs.len());
                for ((drow, prow), t) in d.chunks_mut(vocab).zip(probs.chunks(vocab)).zip(targets) {
                    if let Some(t) = *t {
                        for i in 0..vocab {
                            drow[i] += scale * prow[i];
                        }
                        drow[t] -= scale;
                    }
                }
            }
            Op::Reshape { x } => {
                let d = accumulate(&mut grads[x.0], g.len());
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            Op::SplitHeads { x, batch, seq, heads } => {
                let dh = node.value.last_dim();
                let dm = dh * heads;
                let d = accumulate(&mut grads[x.0], g.len());
                for b in 0..*batch {
                    for t in 0..*seq {
                        for h in 0..*heads {
                            let xi = (b * seq + t) * dm + h * dh;
                            let oi = ((b * heads + h) * seq + t) * dh;
                            d[xi..xi + dh].iter_mut().zip(&g[oi..oi + dh]).for_each(|(d, &g)| *d += g);
                        }
                    }
                }
            }
            Op::MergeHeads { x, batch, seq, heads } => {
                let dm = node.value.last_dim();
                let dh = dm / heads;
                let d = accumulate(&mut grads[x.0], g.len());
                for b in 0..*batch {
                    for t in 0..*seq {
                        for h in 0..*heads {
                            let oi = (b * seq + t) * dm + h * dh;
                            let xi = ((b * heads + h) * seq + t) * dh;
                            d[xi..xi + dh].iter_mut().zip(&g[oi..oi + dh]).for_each(|(d, &g)| *d += g);
                        }
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let dim = node.value.last_dim();
                let d = accumulate(&mut grads[x.0], self.value(*x).len());
                for (grow, &r) in g.chunks(dim).zip(rows) {
                    d[r * dim..(r + 1) * dim].iter_mut().zip(grow).for_each(|(d, &g)| *d += g);
                }
            }
            Op::Sum { x } => {
                let d = accumulate(&mut grads[x.0], self.value(*x).len());
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
    }
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Numerically stable in-place log-softmax of one row.
pub fn log_softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    for v in row.iter_mut() {
        *v -= lse;
    }
}
