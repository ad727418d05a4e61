use std::sync::Arc;

use super::{AdError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside the built-in primitive set.
///
/// `backward` receives the forward inputs, the forward output and the
/// upstream gradient, and returns one gradient per input (or `None` for
/// inputs that carry no gradient, such as index tables).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AdError>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Elu(Var),
    Softplus(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    GatherRows { input: Var, index: Arc<Vec<usize>> },
    SoftmaxLast(Var),
    Det3(Var),
    Trace3(Var),
    QuatNormalize(Var),
    Custom { op: Arc<dyn CustomOp>, inputs: Vec<Var> },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Recip(..) => "reciprocal",
            Op::Elu(..) => "elu",
            Op::Softplus(..) => "softplus",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::GatherRows { .. } => "gather_rows",
            Op::SoftmaxLast(..) => "softmax",
            Op::Det3(..) => "det3",
            Op::Trace3(..) => "trace3",
            Op::QuatNormalize(..) => "quat_normalize",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Node ids increase in creation order, so the graph is
/// acyclic by construction and backward walks ids in reverse.
///
/// An untaped tape evaluates the same forward code but records every
/// result as a constant, so backward returns nothing.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, detail: String) -> AdError {
    AdError::Shape { op, detail }
}

/// Output shape for elementwise binary ops: equal shapes, or one shape is
/// a trailing suffix of the other (repeated along the leading axes).
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, AdError> {
    if a == b {
        return Ok(a.to_vec());
    }
    let a_n: usize = a.iter().product();
    let b_n: usize = b.iter().product();
    if a.len() >= b.len() && a.ends_with(b) || b_n == 1 {
        return Ok(a.to_vec());
    }
    if b.len() >= a.len() && b.ends_with(a) || a_n == 1 {
        return Ok(b.to_vec());
    }
    Err(shape_err(op, format!("cannot broadcast {:?} with {:?}", a, b)))
}

/// Folds a gradient of the broadcast output back onto an operand of
/// `len` elements.
fn reduce_to(grad: &[f64], len: usize) -> Vec<f64> {
    if grad.len() == len {
        return grad.to_vec();
    }
    let mut out = vec![0.0; len];
    for (i, g) in grad.iter().enumerate() {
        out[i % len] += g;
    }
    out
}

fn binary_map(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (al, bl) = (ad.len(), bd.len());
    let data = if al == n && bl == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(ad[i % al], bd[i % bl])).collect()
    };
    Tensor::from_parts(shape, data)
}

pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    // Row-major strides; a transposed operand is read through swapped strides.
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn det3(m: &[f64]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// Cofactor matrix of a row-major 3×3, equal to d det / dM.
pub(crate) fn cofactor3(m: &[f64]) -> [f64; 9] {
    [
        m[4] * m[8] - m[5] * m[7],
        m[5] * m[6] - m[3] * m[8],
        m[3] * m[7] - m[4] * m[6],
        m[2] * m[7] - m[1] * m[8],
        m[0] * m[8] - m[2] * m[6],
        m[1] * m[6] - m[0] * m[7],
        m[1] * m[5] - m[2] * m[4],
        m[2] * m[3] - m[0] * m[5],
        m[0] * m[4] - m[1] * m[3],
    ]
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// A tape that evaluates forward values only.
    pub fn untaped() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = self.recording;
        self.push_raw(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Constant, false)
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, requires_grad });
        Var(id)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, AdError> {
        if !value.all_finite() {
            return Err(AdError::NonFinite { op: op.kind() });
        }
        let rg = self.recording && self.op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Constant };
        Ok(self.push_raw(value, op, rg))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Recip(a)
            | Op::Elu(a)
            | Op::Softplus(a)
            | Op::SoftmaxLast(a)
            | Op::Det3(a)
            | Op::Trace3(a)
            | Op::QuatNormalize(a) => vec![*a],
            Op::Slice { input, .. } | Op::GatherRows { input, .. } => vec![*input],
            Op::Concat(vs) => vs.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AdError> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let out = binary_map(self.value(a), self.value(b), shape, f);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `c * a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Offset(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut c, 0.0);
        self.push(Tensor::from_parts(vec![m, n], c), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AdError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("rank-2 input required, got {:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AdError> {
        let t = self.value(a).reshape(shape)?;
        self.push(t, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(shape_err("mean", "empty input".into()));
        }
        let s = t.sum() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a);
        let c = t.last_dim();
        let shape = t.shape()[..t.rank().saturating_sub(1)].to_vec();
        let data = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        self.push(Tensor::from_parts(shape, data), Op::SumLast(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| 1.0 / x);
        self.push(out, Op::Recip(a))
    }

    /// ELU with unit alpha.
    pub fn elu(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let lead = self.shape(parts[0])[..self.value(parts[0]).rank() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat", format!("leading dims {:?} vs {:?}", lead, s)));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AdError> {
        let t = self.value(a);
        let c = t.last_dim();
        if t.rank() == 0 || start >= end || end > c {
            return Err(shape_err("slice", format!("range {}..{} of last dim {}", start, end, c)));
        }
        let w = end - start;
        let data: Vec<f64> = t.data().chunks(c).flat_map(|r| r[start..end].iter().copied()).collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        self.push(Tensor::from_parts(shape, data), Op::Slice { input: a, start })
    }

    /// Selects rows (first-axis entries) by index.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var, AdError> {
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(shape_err("gather_rows", "scalar input".into()));
        }
        let n = t.shape()[0];
        let row: usize = t.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(index.len() * row);
        for &i in index.iter() {
            if i >= n {
                return Err(shape_err("gather_rows", format!("index {} out of {}", i, n)));
            }
            data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        self.push(Tensor::from_parts(shape, data), Op::GatherRows { input: a, index })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a);
        let c = t.last_dim();
        let mut data = Vec::with_capacity(t.numel());
        for r in t.data().chunks(c) {
            let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut z = 0.0;
            for &x in r {
                let e = (x - mx).exp();
                z += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= z;
            }
        }
        self.push(Tensor::from_parts(t.shape().to_vec(), data), Op::SoftmaxLast(a))
    }

    fn check_trailing(&self, op: &'static str, a: Var, trailing: &[usize]) -> Result<Vec<usize>, AdError> {
        let s = self.shape(a);
        if s.len() < trailing.len() || !s.ends_with(trailing) {
            return Err(shape_err(op, format!("expected trailing dims {:?}, got {:?}", trailing, s)));
        }
        Ok(s[..s.len() - trailing.len()].to_vec())
    }

    /// Determinant of each trailing 3×3 block.
    pub fn det3(&mut self, a: Var) -> Result<Var, AdError> {
        let lead = self.check_trailing("det3", a, &[3, 3])?;
        let data = self.value(a).data().chunks(9).map(det3).collect();
        self.push(Tensor::from_parts(lead, data), Op::Det3(a))
    }

    /// Trace of each trailing 3×3 block.
    pub fn trace3(&mut self, a: Var) -> Result<Var, AdError> {
        let lead = self.check_trailing("trace3", a, &[3, 3])?;
        let data = self.value(a).data().chunks(9).map(|m| m[0] + m[4] + m[8]).collect();
        self.push(Tensor::from_parts(lead, data), Op::Trace3(a))
    }

    /// Scales each trailing 4-vector to unit length.
    pub fn quat_normalize(&mut self, a: Var) -> Result<Var, AdError> {
        self.check_trailing("quat_normalize", a, &[4])?;
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.numel());
        for q in t.data().chunks(4) {
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(AdError::NonFinite { op: "quat_normalize" });
            }
            data.extend(q.iter().map(|x| x / n));
        }
        self.push(Tensor::from_parts(t.shape().to_vec(), data), Op::QuatNormalize(a))
    }

    pub fn apply(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var, AdError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&vals)?;
        self.push(out, Op::Custom { op, inputs: inputs.to_vec() })
    }

    /// Reverse sweep from a scalar root. Every node that depends on a leaf
    /// receives its gradient; contributions are accumulated in reverse
    /// creation order.
    pub fn backward(&self, root: Var) -> Result<Gradients, AdError> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(AdError::NotScalar(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        }
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let contributions = self.node_backward(node, &g);
            for (v, cg) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&cg),
                    slot @ None => *slot = Some(cg),
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let out = &node.value;
        let gd = g.data();
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(val(v).shape().to_vec(), data);
        match &node.op {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) => vec![
                (*a, like(*a, reduce_to(gd, val(*a).numel()))),
                (*b, like(*b, reduce_to(gd, val(*b).numel()))),
            ],
            Op::Sub(a, b) => {
                let nb: Vec<f64> = gd.iter().map(|x| -x).collect();
                vec![
                    (*a, like(*a, reduce_to(gd, val(*a).numel()))),
                    (*b, like(*b, reduce_to(&nb, val(*b).numel()))),
                ]
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let (al, bl) = (ad.len(), bd.len());
                let ga: Vec<f64> = gd.iter().enumerate().map(|(i, g)| g * bd[i % bl]).collect();
                let gb: Vec<f64> = gd.iter().enumerate().map(|(i, g)| g * ad[i % al]).collect();
                vec![(*a, like(*a, reduce_to(&ga, al))), (*b, like(*b, reduce_to(&gb, bl)))]
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let (al, bl) = (ad.len(), bd.len());
                let ga: Vec<f64> = gd.iter().enumerate().map(|(i, g)| g / bd[i % bl]).collect();
                let gb: Vec<f64> = gd
                    .iter()
                    .enumerate()
                    .map(|(i, g)| -g * ad[i % al] / (bd[i % bl] * bd[i % bl]))
                    .collect();
                vec![(*a, like(*a, reduce_to(&ga, al))), (*b, like(*b, reduce_to(&gb, bl)))]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|x| c * x))],
            Op::Offset(a) => vec![(*a, g.clone())],
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, gd, false, val(*b).data(), true, &mut ga, 0.0);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, val(*a).data(), true, gd, false, &mut gb, 0.0);
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Transpose(a) => {
                let s = out.shape();
                let (r, c) = (s[0], s[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] = gd[i * c + j];
                    }
                }
                vec![(*a, like(*a, ga))]
            }
            Op::Reshape(a) => vec![(*a, like(*a, gd.to_vec()))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), gd[0]))],
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                vec![(*a, Tensor::full(val(*a).shape(), gd[0] / n))]
            }
            Op::SumLast(a) => {
                let c = val(*a).last_dim();
                let ga = gd.iter().flat_map(|&x| std::iter::repeat(x).take(c)).collect();
                vec![(*a, like(*a, ga))]
            }
            Op::Square(a) => {
                let ga = val(*a).data().iter().zip(gd).map(|(x, g)| 2.0 * x * g).collect();
                vec![(*a, like(*a, ga))]
            }
            Op::Sqrt(a) => {
                let ga = out.data().iter().zip(gd).map(|(y, g)| 0.5 * g / y).collect();
                vec![(*a, like(*a, ga))]
            }
            Op::Exp(a) => {
                let ga = out.data().iter().zip(gd).map(|(y, g)| y * g).collect();
                vec![(*a, like(*a, ga))]
            }
            Op::Log(a) => {
                let ga = val(*a).data().iter().zip(gd).map(|(x, g)| g / x).collect();
                vec![(*a, like(*a, ga))]
            }
            Op::Recip(a) => {
                let ga = out.data().iter().zip(gd).map(|(y, g)| -g * y * y).collect();
                vec![(*a, like(*a, ga))]
            }
            Op::Elu(a) => {
                let ga = val(*a)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&x, g)| if x > 0.0 { *g } else { g * x.exp() })
                    .collect();
                vec![(*a, like(*a, ga))]
            }
            Op::Softplus(a) => {
                let ga = val(*a).data().iter().zip(gd).map(|(&x, g)| g * sigmoid(x)).collect();
                vec![(*a, like(*a, ga))]
            }
            Op::Concat(parts) => {
                let total = out.last_dim();
                let rows = out.numel() / total.max(1);
                let mut off = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = val(p).last_dim();
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&gd[r * total + off..r * total + off + w]);
                    }
                    off += w;
                    res.push((p, like(p, gp)));
                }
                res
            }
            Op::Slice { input, start } => {
                let c = val(*input).last_dim();
                let w = out.last_dim();
                let mut ga = vec![0.0; val(*input).numel()];
                for (r, gr) in gd.chunks(w).enumerate() {
                    ga[r * c + start..r * c + start + w].copy_from_slice(gr);
                }
                vec![(*input, like(*input, ga))]
            }
            Op::GatherRows { input, index } => {
                let t = val(*input);
                let row: usize = t.shape()[1..].iter().product();
                let mut ga = vec![0.0; t.numel()];
                for (k, &i) in index.iter().enumerate() {
                    for c in 0..row {
                        ga[i * row + c] += gd[k * row + c];
                    }
                }
                vec![(*input, like(*input, ga))]
            }
            Op::SoftmaxLast(a) => {
                let c = out.last_dim();
                let mut ga = Vec::with_capacity(out.numel());
                for (y, gr) in out.data().chunks(c).zip(gd.chunks(c)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    ga.extend(y.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                }
                vec![(*a, like(*a, ga))]
            }
            Op::Det3(a) => {
                let mut ga = Vec::with_capacity(val(*a).numel());
                for (m, gi) in val(*a).data().chunks(9).zip(gd) {
                    ga.extend(cofactor3(m).iter().map(|c| c * gi));
                }
                vec![(*a, like(*a, ga))]
            }
            Op::Trace3(a) => {
                let mut ga = vec![0.0; val(*a).numel()];
                for (b, gi) in gd.iter().enumerate() {
                    ga[b * 9] = *gi;
                    ga[b * 9 + 4] = *gi;
                    ga[b * 9 + 8] = *gi;
                }
                vec![(*a, like(*a, ga))]
            }
            Op::QuatNormalize(a) => {
                let mut ga = Vec::with_capacity(val(*a).numel());
                for ((q, y), gr) in val(*a).data().chunks(4).zip(out.data().chunks(4)).zip(gd.chunks(4)) {
                    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    ga.extend(y.iter().zip(gr).map(|(yi, gi)| (gi - yi * dot) / n));
                }
                vec![(*a, like(*a, ga))]
            }
            Op::Custom { op, inputs } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                op.backward(&vals, out, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(gi, &v)| gi.map(|t| (v, t)))
                    .collect()
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
    fn matmul_by_identity() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let i = t.constant(Tensor::eye(2));
        let c = t.matmul(a, i).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.softplus(x).unwrap();
        assert!(close(t.value(y).item(), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn det_of_diagonal() {
        let mut t = Tape::new();
        let m = t.constant(Tensor::new(vec![1, 3, 3], vec![2., 0., 0., 0., 3., 0., 0., 0., 4.]).unwrap());
        let d = t.det3(m).unwrap();
        assert_eq!(t.value(d).shape(), &[1]);
        assert_eq!(t.value(d).data(), &[24.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let xx = t.mul(x, x).unwrap();
        let s = t.sum(xx).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn det_grad_at_identity_is_identity() {
        let mut t = Tape::new();
        let f = t.leaf(Tensor::new(vec![3, 3], Tensor::eye(3).into_data()).unwrap());
        let d = t.det3(f).unwrap();
        let g = t.backward(d).unwrap();
        assert_eq!(g.get(f).unwrap().data(), Tensor::eye(3).data());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.square(x).unwrap();
        assert!(matches!(t.backward(y), Err(AdError::NotScalar(_))));
    }

    #[test]
    fn non_finite_names_op() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1.0]));
        assert_eq!(t.log(x).unwrap_err(), AdError::NonFinite { op: "log" });
        let z = t.leaf(Tensor::vector(vec![0.0; 4]));
        assert_eq!(t.quat_normalize(z).unwrap_err(), AdError::NonFinite { op: "quat_normalize" });
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(AdError::Shape { op: "matmul", .. })));
        let c = t.constant(Tensor::zeros(&[2]));
        assert!(matches!(t.add(a, c), Err(AdError::Shape { op: "add", .. })));
    }

    #[test]
    fn bias_broadcast_reduces_gradient() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = t.leaf(Tensor::vector(vec![0.5, -0.5]));
        let y = t.add(x, b).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0]);
    }

    fn graph(t: &mut Tape) -> Var {
        let x = t.leaf(Tensor::matrix(2, 3, vec![0.1, -0.4, 2.0, 1.3, 0.7, -2.2]).unwrap());
        let w = t.leaf(Tensor::matrix(3, 2, vec![0.3, 0.2, -0.1, 0.5, 0.9, -0.7]).unwrap());
        let h = t.matmul(x, w).unwrap();
        let e = t.elu(h).unwrap();
        let s = t.softplus(e).unwrap();
        t.mean(s).unwrap()
    }

    #[test]
    fn untaped_forward_is_bit_identical() {
        let mut a = Tape::new();
        let mut b = Tape::untaped();
        let ya = graph(&mut a);
        let yb = graph(&mut b);
        assert_eq!(a.value(ya).item().to_bits(), b.value(yb).item().to_bits());
        assert!(!b.requires_grad(yb));
    }

    #[test]
    fn gradients_are_additive() {
        let x0 = Tensor::vector(vec![0.3, -1.2, 0.8]);
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone());
            let f = {
                let e = t.exp(x).unwrap();
                t.sum(e).unwrap()
            };
            let g = {
                let s = t.square(x).unwrap();
                let s3 = t.scale(s, 3.0).unwrap();
                t.sum(s3).unwrap()
            };
            let root = match which {
                0 => f,
                1 => g,
                _ => t.add(f, g).unwrap(),
            };
            t.backward(root).unwrap().get(x).unwrap().clone()
        };
        let (gf, gg, gs) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..3 {
            assert!(close(gs.data()[i], gf.data()[i] + gg.data()[i], 1e-14));
        }
    }
}
