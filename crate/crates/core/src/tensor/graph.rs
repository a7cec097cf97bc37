use super::kernels::{self, ConvDims};
use super::{Tensor, TensorError, GELU_COEFF};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let u = GELU_COEFF * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
        }
    }

    /// Derivative given the input `x` and the forward output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let u = GELU_COEFF * (x + 0.044715 * x * x * x);
                let th = u.tanh();
                0.5 * (1.0 + th)
                    + 0.5 * x * (1.0 - th * th) * GELU_COEFF * (1.0 + 3.0 * 0.044715 * x * x)
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    MatMulBias(usize, usize, usize),
    Conv1d { x: usize, k: usize, dims: ConvDims },
    ChannelBias(usize, usize),
    Act(usize, Activation),
    Attention { q: usize, k: usize, v: usize, probs: Vec<f64> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Narrow { x: usize, axis: usize, start: usize },
    MeanAxis(usize, usize),
    Sum(usize),
    Mse(usize, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only computation tape.
///
/// `backward` may run once per graph; a second call is rejected so that
/// accumulated gradients are never silently doubled.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies `t` into the graph; it is differentiated iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.grad = None;
        let rg = t.requires_grad;
        self.push_raw(Op::Leaf, value, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(Op::Leaf, t, false)
    }

    /// Leaf that always receives a gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.grad = None;
        self.push_raw(Op::Leaf, value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: usize) -> &[f64] {
        self.nodes[v].value.data()
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Gradient of the loss with respect to `v` after [`Graph::backward`].
    /// Nodes the loss does not depend on report zeros.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        if !self.backward_done {
            return None;
        }
        Some(
            self.grads[v.0]
                .clone()
                .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()]),
        )
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        op: Op,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[usize],
    ) -> Result<Var, TensorError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let value = Tensor::new(shape, data)?;
        let rg = inputs.iter().any(|&i| self.rg(i));
        Ok(self.push_raw(op, value, rg))
    }

    /// `b` must equal `a`'s shape or a trailing suffix of it.
    fn check_broadcast(&self, name: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb {
            Ok(())
        } else {
            Err(TensorError::shape(name, sa, sb))
        }
    }

    /// Elementwise sum; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_broadcast("add", a, b)?;
        let (da, db) = (self.data(a.0), self.data(b.0));
        let nb = db.len();
        let out = da.iter().enumerate().map(|(i, x)| x + db[i % nb]).collect();
        let shape = self.shape(a).to_vec();
        self.push("add", Op::Add(a.0, b.0), shape, out, &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape("sub", self.shape(a), self.shape(b)));
        }
        let out = self.data(a.0).iter().zip(self.data(b.0)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        self.push("sub", Op::Sub(a.0, b.0), shape, out, &[a.0, b.0])
    }

    /// Elementwise (Hadamard) product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_broadcast("mul", a, b)?;
        let (da, db) = (self.data(a.0), self.data(b.0));
        let nb = db.len();
        let out = da.iter().enumerate().map(|(i, x)| x * db[i % nb]).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", Op::Mul(a.0, b.0), shape, out, &[a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let out = self.data(a.0).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", Op::Scale(a.0, s), shape, out, &[a.0])
    }

    fn matmul_dims(&self, name: &'static str, x: Var, w: Var) -> Result<(usize, usize, usize), TensorError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(TensorError::shape(name, sx, sw));
        }
        Ok((sx[0], sx[1], sw[1]))
    }

    /// `x[B×I] · w[I×O]`
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (m, k, n) = self.matmul_dims("matmul", x, w)?;
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.data(x.0), self.data(w.0), &mut out, m, k, n);
        self.push("matmul", Op::MatMul(x.0, w.0), vec![m, n], out, &[x.0, w.0])
    }

    /// `x[B×I] · w[I×O] + b[O]`
    pub fn matmul_bias(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k, n) = self.matmul_dims("matmul_bias", x, w)?;
        if self.shape(b) != [n] {
            return Err(TensorError::shape("matmul_bias", &[m, n], self.shape(b)));
        }
        let bias = self.data(b.0);
        let mut out: Vec<f64> = (0..m * n).map(|i| bias[i % n]).collect();
        kernels::matmul_acc(self.data(x.0), self.data(w.0), &mut out, m, k, n);
        self.push(
            "matmul_bias",
            Op::MatMulBias(x.0, w.0, b.0),
            vec![m, n],
            out,
            &[x.0, w.0, b.0],
        )
    }

    /// Zero-padded cross-correlation of `x[B×C_in×L]` with `k[C_out×C_in×K]`.
    pub fn conv1d(&mut self, x: Var, k: Var, padding: usize) -> Result<Var, TensorError> {
        let (sx, sk) = (self.shape(x), self.shape(k));
        if sx.len() != 3 || sk.len() != 3 || sx[1] != sk[1] {
            return Err(TensorError::shape("conv1d", sx, sk));
        }
        let width = sk[2];
        if width % 2 == 0 {
            return Err(TensorError::contract("conv1d", format!("kernel width {width} must be odd")));
        }
        let span = sx[2] + 2 * padding;
        if span < width {
            return Err(TensorError::shape("conv1d", sx, sk));
        }
        let dims = ConvDims {
            batch: sx[0],
            c_in: sx[1],
            c_out: sk[0],
            len_in: sx[2],
            width,
            padding,
            len_out: span - width + 1,
        };
        let mut out = vec![0.0; dims.batch * dims.c_out * dims.len_out];
        kernels::conv1d_forward(self.data(x.0), self.data(k.0), &mut out, dims);
        self.push(
            "conv1d",
            Op::Conv1d { x: x.0, k: k.0, dims },
            vec![dims.batch, dims.c_out, dims.len_out],
            out,
            &[x.0, k.0],
        )
    }

    /// Adds `b[C]` to every position of channel `c` in `x[B×C×L]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 3 || sb != [sx[1]] {
            return Err(TensorError::shape("add_channel_bias", sx, sb));
        }
        let (c, l) = (sx[1], sx[2]);
        let bias = self.data(b.0);
        let out = self
            .data(x.0)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[(i / l) % c])
            .collect();
        let shape = sx.to_vec();
        self.push("add_channel_bias", Op::ChannelBias(x.0, b.0), shape, out, &[x.0, b.0])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var, TensorError> {
        let out = self.data(x.0).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("activation", Op::Act(x.0, kind), shape, out, &[x.0])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.activation(x, Activation::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.activation(x, Activation::Gelu)
    }

    /// `softmax(q·kᵀ/√D)·v` over the last two axes of `[B×H×T×D]` inputs.
    pub fn softmax_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, TensorError> {
        let sq = self.shape(q).to_vec();
        if sq.len() != 4 {
            return Err(TensorError::contract("softmax_attention", format!("expected B×H×T×D, got {sq:?}")));
        }
        for other in [k, v] {
            if self.shape(other) != sq.as_slice() {
                return Err(TensorError::shape("softmax_attention", &sq, self.shape(other)));
            }
        }
        let (t, d) = (sq[2], sq[3]);
        let slices = sq[0] * sq[1];
        let mut probs = vec![0.0; slices * t * t];
        let mut out = vec![0.0; slices * t * d];
        let (dq, dk, dv) = (self.data(q.0), self.data(k.0), self.data(v.0));
        for s in 0..slices {
            let r = s * t * d..(s + 1) * t * d;
            kernels::attention_forward(
                &dq[r.clone()],
                &dk[r.clone()],
                &dv[r.clone()],
                &mut probs[s * t * t..(s + 1) * t * t],
                &mut out[r],
                t,
                d,
            );
        }
        self.push(
            "softmax_attention",
            Op::Attention { q: q.0, k: k.0, v: v.0, probs },
            sq,
            out,
            &[q.0, k.0, v.0],
        )
    }

    /// Softmax weights recorded by an attention node, `[B×H×T×T]` row-major.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Normalizes over the last axis, then applies `gamma[D]` and `beta[D]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap();
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(TensorError::shape("layer_norm", &sx, self.shape(p)));
            }
        }
        let rows = self.data(x.0).len() / d;
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        let (xs, gs, bs) = (self.data(x.0), self.data(gamma.0), self.data(beta.0));
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gs[j] + bs[j];
            }
        }
        self.push(
            "layer_norm",
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std },
            sx,
            out,
            &[x.0, gamma.0, beta.0],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return Err(TensorError::shape("reshape", self.shape(x), shape));
        }
        let data = self.data(x.0).to_vec();
        self.push("reshape", Op::Reshape(x.0), shape.to_vec(), data, &[x.0])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if axes.len() != sx.len() || axes.iter().any(|&a| a >= sx.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::contract("permute", format!("{axes:?} is not a permutation of {sx:?}")));
        }
        let out = kernels::permute(self.data(x.0), &sx, axes);
        let shape = axes.iter().map(|&a| sx[a]).collect();
        self.push("permute", Op::Permute(x.0, axes.to_vec()), shape, out, &[x.0])
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || len == 0 || start + len > sx[axis] {
            return Err(TensorError::contract(
                "narrow",
                format!("range {start}..{} on axis {axis} of {sx:?}", start + len),
            ));
        }
        let (outer, n, inner) = outer_inner(&sx, axis);
        let src = self.data(x.0);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        self.push("narrow", Op::Narrow { x: x.0, axis, start }, shape, out, &[x.0])
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || sx.len() < 2 {
            return Err(TensorError::contract("mean_axis", format!("axis {axis} of {sx:?}")));
        }
        let (outer, n, inner) = outer_inner(&sx, axis);
        let src = self.data(x.0);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..][..inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        for v in out.iter_mut() {
            *v /= n as f64;
        }
        let mut shape = sx;
        shape.remove(axis);
        self.push("mean_axis", Op::MeanAxis(x.0, axis), shape, out, &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.data(x.0).iter().sum();
        self.push("sum", Op::Sum(x.0), vec![1], vec![s], &[x.0])
    }

    /// Mean squared error between two length-`B` vectors.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp.len() != 1 || sp != st {
            return Err(TensorError::shape("mse_loss", sp, st));
        }
        let n = sp[0] as f64;
        let s = self
            .data(pred.0)
            .iter()
            .zip(self.data(target.0))
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        self.push("mse_loss", Op::Mse(pred.0, target.0), vec![1], vec![s], &[pred.0, target.0])
    }

    fn acc(&mut self, id: usize) -> Option<&mut [f64]> {
        if !self.nodes[id].requires_grad {
            return None;
        }
        let n = self.nodes[id].value.numel();
        Some(self.grads[id].get_or_insert_with(|| vec![0.0; n]))
    }

    /// Propagates gradients from the scalar `loss` back to every node.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::contract("backward", "graph already differentiated; rebuild it"));
        }
        if !self.value(loss).is_scalar() {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        self.backward_done = true;
        if !self.rg(loss.0) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        // Temporarily move the op out so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(da) = self.acc(a) {
                    da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                }
                if let Some(db) = self.acc(b) {
                    let nb = db.len();
                    for (i, gv) in g.iter().enumerate() {
                        db[i % nb] += sign * gv;
                    }
                }
            }
            &Op::Mul(a, b) => {
                let av = self.data(a).to_vec();
                let bv = self.data(b).to_vec();
                let nb = bv.len();
                if let Some(da) = self.acc(a) {
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[i] * bv[i % nb];
                    }
                }
                if let Some(db) = self.acc(b) {
                    for (i, x) in av.iter().enumerate() {
                        db[i % nb] += g[i] * x;
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(da) = self.acc(a) {
                    da.iter_mut().zip(g).for_each(|(d, gv)| *d += s * gv);
                }
            }
            &Op::MatMul(x, w) | &Op::MatMulBias(x, w, _) => {
                let (m, k) = (self.shape(Var(x))[0], self.shape(Var(x))[1]);
                let n = self.shape(Var(w))[1];
                if self.rg(x) {
                    let wv = self.data(w).to_vec();
                    let dx = self.acc(x).unwrap();
                    kernels::matmul_grad_lhs(g, &wv, dx, m, k, n);
                }
                if self.rg(w) {
                    let xv = self.data(x).to_vec();
                    let dw = self.acc(w).unwrap();
                    kernels::matmul_grad_rhs(&xv, g, dw, m, k, n);
                }
                if let &Op::MatMulBias(_, _, b) = &op {
                    if let Some(db) = self.acc(b) {
                        for row in g.chunks(n) {
                            db.iter_mut().zip(row).for_each(|(d, gv)| *d += gv);
                        }
                    }
                }
            }
            &Op::Conv1d { x, k, dims } => {
                let xv = self.data(x).to_vec();
                let kv = self.data(k).to_vec();
                if let Some(dx) = self.acc(x) {
                    kernels::conv1d_backward(&xv, &kv, g, Some(dx), None, dims);
                }
                if let Some(dk) = self.acc(k) {
                    kernels::conv1d_backward(&xv, &kv, g, None, Some(dk), dims);
                }
            }
            &Op::ChannelBias(x, b) => {
                let sx = self.shape(Var(x)).to_vec();
                let (c, l) = (sx[1], sx[2]);
                if let Some(dx) = self.acc(x) {
                    dx.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                }
                if let Some(db) = self.acc(b) {
                    for (i, gv) in g.iter().enumerate() {
                        db[(i / l) % c] += gv;
                    }
                }
            }
            &Op::Act(x, kind) => {
                let xv = self.data(x).to_vec();
                let yv = self.nodes[id].value.data().to_vec();
                if let Some(dx) = self.acc(x) {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * kind.derivative(xv[i], yv[i]);
                    }
                }
            }
            Op::Attention { q, k, v, probs } => {
                let (q, k, v) = (*q, *k, *v);
                let s = self.shape(Var(q)).to_vec();
                let (t, d) = (s[2], s[3]);
                let n = s.iter().product::<usize>();
                let mut dq = vec![0.0; n];
                let mut dk = vec![0.0; n];
                let mut dv = vec![0.0; n];
                {
                    let (qs, ks, vs) = (self.data(q), self.data(k), self.data(v));
                    for sl in 0..s[0] * s[1] {
                        let r = sl * t * d..(sl + 1) * t * d;
                        kernels::attention_backward(
                            &qs[r.clone()],
                            &ks[r.clone()],
                            &vs[r.clone()],
                            &probs[sl * t * t..(sl + 1) * t * t],
                            &g[r.clone()],
                            &mut dq[r.clone()],
                            &mut dk[r.clone()],
                            &mut dv[r],
                            t,
                            d,
                        );
                    }
                }
                for (node, part) in [(q, dq), (k, dk), (v, dv)] {
                    if let Some(acc) = self.acc(node) {
                        acc.iter_mut().zip(&part).for_each(|(a, p)| *a += p);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let d = self.data(gamma).len();
                let gs = self.data(gamma).to_vec();
                if let Some(dgam) = self.acc(gamma) {
                    for (i, gv) in g.iter().enumerate() {
                        dgam[i % d] += gv * xhat[i];
                    }
                }
                if let Some(dbeta) = self.acc(beta) {
                    for (i, gv) in g.iter().enumerate() {
                        dbeta[i % d] += gv;
                    }
                }
                if let Some(dx) = self.acc(x) {
                    let mut dxhat = vec![0.0; d];
                    for (r, is) in inv_std.iter().enumerate() {
                        let base = r * d;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            dxhat[j] = g[base + j] * gs[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xhat[base + j];
                        }
                        for j in 0..d {
                            dx[base + j] += is / d as f64
                                * (d as f64 * dxhat[j] - s1 - xhat[base + j] * s2);
                        }
                    }
                }
            }
            &Op::Reshape(x) => {
                if let Some(dx) = self.acc(x) {
                    dx.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                }
            }
            Op::Permute(x, axes) => {
                let x = *x;
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let out_shape = self.nodes[id].value.shape().to_vec();
                let back = kernels::permute(g, &out_shape, &inverse);
                if let Some(dx) = self.acc(x) {
                    dx.iter_mut().zip(&back).for_each(|(d, gv)| *d += gv);
                }
            }
            &Op::Narrow { x, axis, start } => {
                let sx = self.shape(Var(x)).to_vec();
                let len = self.nodes[id].value.shape()[axis];
                let (outer, n, inner) = outer_inner(&sx, axis);
                if let Some(dx) = self.acc(x) {
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dx[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, gv)| *d += gv);
                    }
                }
            }
            &Op::MeanAxis(x, axis) => {
                let sx = self.shape(Var(x)).to_vec();
                let (outer, n, inner) = outer_inner(&sx, axis);
                if let Some(dx) = self.acc(x) {
                    let f = 1.0 / n as f64;
                    for o in 0..outer {
                        let grow = &g[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            dx[(o * n + j) * inner..][..inner]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(d, gv)| *d += f * gv);
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(dx) = self.acc(x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mse(p, t) => {
                let diff: Vec<f64> = self.data(p).iter().zip(self.data(t)).map(|(a, b)| a - b).collect();
                let f = 2.0 * g[0] / diff.len() as f64;
                if let Some(dp) = self.acc(p) {
                    dp.iter_mut().zip(&diff).for_each(|(d, e)| *d += f * e);
                }
                if let Some(dt) = self.acc(t) {
                    dt.iter_mut().zip(&diff).for_each(|(d, e)| *d -= f * e);
                }
            }
        }
        self.nodes[id].op = op;
    }
}
