use crate::error::{Result, TensorError};
use crate::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Tensor, MAX_RANK};

/// Arguments of `log` are clamped here before evaluation.
const LOG_FLOOR: f64 = 1e-300;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Softmax(usize),
    Concat(Vec<usize>),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    ReduceSum(usize),
    ReduceMean(usize),
    MaskedFill {
        input: usize,
        mask: Vec<bool>,
    },
    MaskedSquaredError {
        pred: usize,
        target: usize,
        mask: Vec<f64>,
        denom: f64,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
        denom: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
///
/// Node ids are assigned in creation order, so every node's inputs have
/// smaller ids and the record is topologically sorted by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to the nodes of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node did not influence the output or was a constant.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros shaped like `like` when it has none.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    a == b || (b.len() < a.len() && a.ends_with(b))
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

/// Folds a gradient shaped like the broadcast result back onto an operand
/// whose shape is a trailing suffix of it.
fn reduce_broadcast(grad: &[f64], operand_len: usize) -> Vec<f64> {
    if grad.len() == operand_len {
        return grad.to_vec();
    }
    let mut out = vec![0.0; operand_len];
    for chunk in grad.chunks(operand_len) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    out
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input (data).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (va, vb) = (self.value(a), self.value(b));
        if !broadcastable(va.shape(), vb.shape()) {
            return Err(TensorError::shape(name, va.shape(), vb.shape()));
        }
        let blen = vb.len();
        let bd = vb.data();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % blen]))
            .collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok((out, self.needs(&[a.0, b.0])))
    }

    /// Elementwise `a + b`; `b` may be a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a.0, b.0), g))
    }

    /// Elementwise `a - b`; `b` may be a trailing suffix of `a`'s shape.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.elementwise("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a.0, b.0), g))
    }

    /// Elementwise `a * b`; `b` may be a trailing suffix of `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a.0, b.0), g))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * factor).collect();
        let v = Tensor::from_parts(va.shape().to_vec(), data);
        let g = self.needs(&[a.0]);
        self.push(v, Op::Scale(a.0, factor), g)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x + c).collect();
        let v = Tensor::from_parts(va.shape().to_vec(), data);
        let g = self.needs(&[a.0]);
        self.push(v, Op::AddScalar(a.0), g)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Matrix product. Supported shapes: `[m,k]·[k,n]`, `[B,m,k]·[k,n]`
    /// (shared right operand) and `[B,m,k]·[B,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        let err = || TensorError::shape("matmul", sa, sb);
        let out = match (sa.len(), sb.len()) {
            (2, 2) | (3, 2) => {
                let k = sa[sa.len() - 1];
                if sb[0] != k {
                    return Err(err());
                }
                let n = sb[1];
                let m = va.len() / k;
                let mut c = vec![0.0; m * n];
                gemm_nn(va.data(), vb.data(), &mut c, m, k, n);
                let mut shape = sa.to_vec();
                *shape.last_mut().unwrap() = n;
                Tensor::from_parts(shape, c)
            }
            (3, 3) => {
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                if sb[0] != batch || sb[1] != k {
                    return Err(err());
                }
                let n = sb[2];
                let mut c = vec![0.0; batch * m * n];
                for bi in 0..batch {
                    gemm_nn(
                        &va.data()[bi * m * k..(bi + 1) * m * k],
                        &vb.data()[bi * k * n..(bi + 1) * k * n],
                        &mut c[bi * m * n..(bi + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                Tensor::from_parts(vec![batch, m, n], c)
            }
            _ => return Err(err()),
        };
        let g = self.needs(&[a.0, b.0]);
        Ok(self.push(out, Op::MatMul(a.0, b.0), g))
    }

    /// Swaps the last two axes (rank 2 or 3).
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let s = va.shape();
        if s.len() < 2 {
            return Err(TensorError::shape("transpose", s, &[]));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = va.len() / (rows * cols);
        let data = kernels::transpose_last(va.data(), batch, rows, cols);
        let mut shape = s.to_vec();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let g = self.needs(&[a.0]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Transpose(a.0), g))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let v = Tensor::from_parts(va.shape().to_vec(), data);
        let g = self.needs(&[a.0]);
        self.push(v, op, g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    /// Natural log with the argument clamped below at 1e-300.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a.0))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = kernels::softmax_rows(va.data(), va.last_dim());
        let v = Tensor::from_parts(va.shape().to_vec(), data);
        let g = self.needs(&[a.0]);
        self.push(v, Op::Softmax(a.0), g)
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidInput("concat of zero tensors".into()))?;
        let lead = {
            let s = self.shape(*first);
            s[..s.len() - 1].to_vec()
        };
        let mut width = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(TensorError::shape("concat", self.shape(*first), s));
            }
            width += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                let v = self.value(*p);
                let w = v.last_dim();
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(width);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let g = self.needs(&ids);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(ids), g))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let s = va.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(TensorError::InvalidInput(format!(
                "slice axis {axis} [{start}, {}) out of bounds for shape {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let mid = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * mid * inner + start * inner;
            data.extend_from_slice(&va.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let g = self.needs(&[a.0]);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                input: a.0,
                axis,
                start,
            },
            g,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let len: usize = shape.iter().product();
        if len != va.len() || shape.is_empty() || shape.len() > MAX_RANK {
            return Err(TensorError::shape("reshape", va.shape(), shape));
        }
        let v = Tensor::from_parts(shape.to_vec(), va.data().to_vec());
        let g = self.needs(&[a.0]);
        Ok(self.push(v, Op::Reshape(a.0), g))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let g = self.needs(&[a.0]);
        self.push(Tensor::scalar(s), Op::ReduceSum(a.0), g)
    }

    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let g = self.needs(&[a.0]);
        self.push(Tensor::scalar(s), Op::ReduceMean(a.0), g)
    }

    /// Replaces entries where `mask` is nonzero by `fill`. The mask may be a
    /// trailing suffix of the input shape.
    pub fn masked_fill(&mut self, a: Var, mask: &Tensor, fill: f64) -> Result<Var> {
        let va = self.value(a);
        if !broadcastable(va.shape(), mask.shape()) {
            return Err(TensorError::shape("masked_fill", va.shape(), mask.shape()));
        }
        let bits: Vec<bool> = mask.data().iter().map(|&m| m != 0.0).collect();
        let n = bits.len();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| if bits[i % n] { fill } else { x })
            .collect();
        let v = Tensor::from_parts(va.shape().to_vec(), data);
        let g = self.needs(&[a.0]);
        Ok(self.push(
            v,
            Op::MaskedFill {
                input: a.0,
                mask: bits,
            },
            g,
        ))
    }

    /// `Σ mask·(pred−target)² / Σ mask`.
    pub fn masked_mse(&mut self, pred: Var, target: Var, mask: &Tensor) -> Result<Var> {
        let total: f64 = mask.data().iter().sum();
        if total == 0.0 {
            return Err(TensorError::InvalidInput(
                "masked_mse needs at least one nonzero mask entry".into(),
            ));
        }
        self.masked_squared_error(pred, target, mask, total)
    }

    /// `Σ mask·(pred−target)² / denom`. Lets a shard of a batch contribute
    /// its share of a loss normalized over the whole batch.
    pub fn masked_squared_error(
        &mut self,
        pred: Var,
        target: Var,
        mask: &Tensor,
        denom: f64,
    ) -> Result<Var> {
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(TensorError::shape("masked_mse", vp.shape(), vt.shape()));
        }
        if vp.shape() != mask.shape() {
            return Err(TensorError::shape("masked_mse", vp.shape(), mask.shape()));
        }
        if denom.is_nan() || denom <= 0.0 {
            return Err(TensorError::InvalidInput(format!(
                "masked squared error needs a positive normalizer, got {denom}"
            )));
        }
        let sse: f64 = vp
            .data()
            .iter()
            .zip(vt.data())
            .zip(mask.data())
            .map(|((p, t), m)| m * (p - t) * (p - t))
            .sum();
        let g = self.needs(&[pred.0, target.0]);
        Ok(self.push(
            Tensor::scalar(sse / denom),
            Op::MaskedSquaredError {
                pred: pred.0,
                target: target.0,
                mask: mask.data().to_vec(),
                denom,
            },
            g,
        ))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let rows = self.shape(logits)[0];
        self.cross_entropy_sum(logits, targets, rows as f64)
    }

    /// `Σ_i −log softmax(logits_i)[target_i] / denom`, computed from
    /// max-shifted log-sum-exp.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize], denom: f64) -> Result<Var> {
        let v = self.value(logits);
        let s = v.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::shape("cross_entropy", s, &[targets.len()]));
        }
        let classes = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(TensorError::InvalidInput(format!(
                "target class {bad} out of range for {classes} classes"
            )));
        }
        if denom.is_nan() || denom <= 0.0 {
            return Err(TensorError::InvalidInput(format!(
                "cross entropy needs a positive normalizer, got {denom}"
            )));
        }
        let probs = kernels::softmax_rows(v.data(), classes);
        let mut total = 0.0;
        for (row, &t) in v.data().chunks(classes).zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let g = self.needs(&[logits.0]);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
                denom,
            },
            g,
        ))
    }

    /// Gradients of the scalar `output` with respect to every recorded node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(TensorError::InvalidInput(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.map(|g| Tensor::from_parts(self.nodes[id].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn val(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[*a], g.to_vec());
                }
                if self.wants(*b) {
                    let blen = self.val(*b).len();
                    accumulate(&mut grads[*b], reduce_broadcast(g, blen));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[*a], g.to_vec());
                }
                if self.wants(*b) {
                    let blen = self.val(*b).len();
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads[*b], reduce_broadcast(&neg, blen));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                let blen = vb.len();
                if self.wants(*a) {
                    let ga = g
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi * vb[i % blen])
                        .collect();
                    accumulate(&mut grads[*a], ga);
                }
                if self.wants(*b) {
                    let full: Vec<f64> = g.iter().zip(va).map(|(gi, x)| gi * x).collect();
                    accumulate(&mut grads[*b], reduce_broadcast(&full, blen));
                }
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[*a], g.iter().map(|x| x * c).collect());
            }
            Op::AddScalar(a) => accumulate(&mut grads[*a], g.to_vec()),
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads),
            Op::Transpose(a) => {
                let s = node.value.shape();
                let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = g.len() / (rows * cols);
                accumulate(
                    &mut grads[*a],
                    kernels::transpose_last(g, batch, rows, cols),
                );
            }
            Op::Sigmoid(a) => {
                let ga = g
                    .iter()
                    .zip(out)
                    .map(|(gi, y)| gi * y * (1.0 - y))
                    .collect();
                accumulate(&mut grads[*a], ga);
            }
            Op::Tanh(a) => {
                let ga = g
                    .iter()
                    .zip(out)
                    .map(|(gi, y)| gi * (1.0 - y * y))
                    .collect();
                accumulate(&mut grads[*a], ga);
            }
            Op::Relu(a) => {
                let x = self.val(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(&mut grads[*a], ga);
            }
            Op::Exp(a) => {
                let ga = g.iter().zip(out).map(|(gi, y)| gi * y).collect();
                accumulate(&mut grads[*a], ga);
            }
            Op::Log(a) => {
                let x = self.val(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(gi, &xi)| if xi > LOG_FLOOR { gi / xi } else { 0.0 })
                    .collect();
                accumulate(&mut grads[*a], ga);
            }
            Op::Softmax(a) => {
                let width = node.value.last_dim();
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), dr) in g
                    .chunks(width)
                    .zip(out.chunks(width))
                    .zip(ga.chunks_mut(width))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yi * (gi - dot);
                    }
                }
                accumulate(&mut grads[*a], ga);
            }
            Op::Concat(parts) => {
                let width = node.value.last_dim();
                let rows = g.len() / width;
                let mut offset = 0;
                for &p in parts {
                    let w = self.val(p).last_dim();
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * width + offset..r * width + offset + w]);
                        }
                        accumulate(&mut grads[p], gp);
                    }
                    offset += w;
                }
            }
            Op::Slice { input, axis, start } => {
                let s = self.val(*input).shape();
                let outer: usize = s[..*axis].iter().product();
                let mid = s[*axis];
                let inner: usize = s[axis + 1..].iter().product();
                let len = node.value.shape()[*axis];
                let mut ga = vec![0.0; self.val(*input).len()];
                for o in 0..outer {
                    let dst = o * mid * inner + start * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(&mut grads[*input], ga);
            }
            Op::Reshape(a) => accumulate(&mut grads[*a], g.to_vec()),
            Op::ReduceSum(a) => {
                let n = self.val(*a).len();
                accumulate(&mut grads[*a], vec![g[0]; n]);
            }
            Op::ReduceMean(a) => {
                let n = self.val(*a).len();
                accumulate(&mut grads[*a], vec![g[0] / n as f64; n]);
            }
            Op::MaskedFill { input, mask } => {
                let n = mask.len();
                let ga = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| if mask[i % n] { 0.0 } else { *gi })
                    .collect();
                accumulate(&mut grads[*input], ga);
            }
            Op::MaskedSquaredError {
                pred,
                target,
                mask,
                denom,
            } => {
                let (p, t) = (self.val(*pred).data(), self.val(*target).data());
                let coef = 2.0 * g[0] / denom;
                let diff: Vec<f64> = p
                    .iter()
                    .zip(t)
                    .zip(mask)
                    .map(|((p, t), m)| coef * m * (p - t))
                    .collect();
                if self.wants(*target) {
                    accumulate(&mut grads[*target], diff.iter().map(|d| -d).collect());
                }
                if self.wants(*pred) {
                    accumulate(&mut grads[*pred], diff);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                denom,
            } => {
                let classes = self.val(*logits).last_dim();
                let scale = g[0] / denom;
                let mut ga: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &t) in targets.iter().enumerate() {
                    ga[row * classes + t] -= scale;
                }
                accumulate(&mut grads[*logits], ga);
            }
        }
    }

    fn matmul_backward(&self, a: usize, b: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (va, vb) = (self.val(a), self.val(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sb.len() == 2 {
            let k = sa[sa.len() - 1];
            let n = sb[1];
            let m = va.len() / k;
            if self.wants(a) {
                let mut ga = vec![0.0; va.len()];
                gemm_nt(g, vb.data(), &mut ga, m, n, k);
                accumulate(&mut grads[a], ga);
            }
            if self.wants(b) {
                let mut gb = vec![0.0; vb.len()];
                gemm_tn(va.data(), g, &mut gb, m, k, n);
                accumulate(&mut grads[b], gb);
            }
        } else {
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let n = sb[2];
            if self.wants(a) {
                let mut ga = vec![0.0; va.len()];
                for bi in 0..batch {
                    gemm_nt(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &vb.data()[bi * k * n..(bi + 1) * k * n],
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                accumulate(&mut grads[a], ga);
            }
            if self.wants(b) {
                let mut gb = vec![0.0; vb.len()];
                for bi in 0..batch {
                    gemm_tn(
                        &va.data()[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                accumulate(&mut grads[b], gb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.softmax(x);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn masked_mse_arithmetic() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let t = tape.constant(Tensor::vector(vec![2.0, 4.0, 3.0]));
        let m = Tensor::vector(vec![1.0, 1.0, 0.0]);
        let l = tape.masked_mse(p, t, &m).unwrap();
        assert_eq!(tape.value(l).item(), Some(2.5));
    }

    #[test]
    fn masked_mse_rejects_empty_mask() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let t = tape.constant(Tensor::vector(vec![2.0, 4.0]));
        let err = tape.masked_mse(p, t, &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, TensorError::InvalidInput(_)));
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::matrix(3, 3, vec![0.3, -1.2, 2.0, 4.5, 0.0, 1.1, -0.7, 0.9, 3.3]).unwrap();
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(3));
        let av = tape.constant(a.clone());
        let c = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(c), &a);
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b).unwrap_err() {
            TensorError::Shape { op, lhs, rhs } => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn add_rejects_non_suffix_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::Shape { op: "add", .. })
        ));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0]));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.reduce_sum(sq);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(x);
        let y = tape.reduce_sum(s);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn shared_input_gradients_accumulate() {
        // x·x through two consumers must match the analytic 2x.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.5, -2.0]));
        let a = tape.scale(x, 1.0);
        let b = tape.add_scalar(x, 0.0);
        let prod = tape.mul(a, b).unwrap();
        let y = tape.reduce_sum(prod);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::InvalidInput(_))
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let y = tape.reduce_sum(p);
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn masked_fill_with_large_negative_zeroes_softmax() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::matrix(2, 2, vec![0.3, 0.1, -0.4, 2.0]).unwrap());
        let diag = Tensor::identity(2);
        let f = tape.masked_fill(s, &diag, -1e9).unwrap();
        let a = tape.softmax(f);
        assert_eq!(tape.value(a).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn slice_and_concat_shapes() {
        let mut tape = Tape::new();
        let x =
            tape.constant(Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap());
        let s = tape.slice(x, 1, 1, 1).unwrap();
        assert_eq!(tape.shape(s), &[2, 1, 2]);
        assert_eq!(tape.value(s).data(), &[2.0, 3.0, 8.0, 9.0]);
        let c = tape.concat(&[x, x]).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 4]);
        assert_eq!(&tape.value(c).data()[..4], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::zeros(&[2, 4]));
        let ce = tape.cross_entropy(l, &[0, 3]).unwrap();
        assert!(close(tape.value(ce).item().unwrap(), 4f64.ln(), 1e-15));
    }
}
