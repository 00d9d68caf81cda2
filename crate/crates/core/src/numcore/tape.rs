//! Reverse-mode differentiation over a linear tape.
//!
//! Values are computed eagerly as ops are applied. An op is recorded (with
//! whatever it needs for its vector-Jacobian product) only when one of its
//! inputs requires a gradient; otherwise the node is stored as a plain value.

use std::collections::HashMap;

use rand::Rng;

use super::array::{gemm, split_axis, strides, DArray};
use super::params::{ParamId, ParamStore};
use super::rng::{standard_normal, RngStreams, StreamRng};
use crate::error::{Error, Result};

/// Fill value for masked attention scores. Finite, and far enough below any
/// real score that `exp` of it underflows to exactly zero.
pub const MASK_VALUE: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param { store: u64, id: usize },
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Minimum { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    AddScalar { a: usize },
    Relu { a: usize },
    Tanh { a: usize },
    Exp { a: usize },
    Log { a: usize },
    Clamp { a: usize, lo: f64, hi: f64 },
    Softmax { a: usize, axis: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    Sum { a: usize },
    Mean { a: usize },
    SumAxis { a: usize, axis: usize },
    Reshape { a: usize },
    Permute { a: usize, perm: Vec<usize> },
    Dropout { a: usize, mask: Vec<f64> },
    GaussianSample { mean: usize, log_std: usize, noise: Vec<f64> },
    CausalMask { a: usize },
}

#[derive(Debug)]
struct Node {
    value: DArray,
    op: Op,
    requires_grad: bool,
}

/// Primitive operation selector for [`Tape::forward`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Minimum,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Tanh,
    Exp,
    Log,
    Clamp { lo: f64, hi: f64 },
    Softmax { axis: usize },
    LayerNorm { eps: f64 },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Sum,
    Mean,
    SumAxis { axis: usize },
    Reshape(Vec<usize>),
    Permute(Vec<usize>),
    Dropout { p: f64, train: bool },
    GaussianSample,
    CausalMask,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Minimum => "minimum",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Clamp { .. } => "clamp",
            OpKind::Softmax { .. } => "softmax",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumAxis { .. } => "sum_axis",
            OpKind::Reshape(_) => "reshape",
            OpKind::Permute(_) => "permute",
            OpKind::Dropout { .. } => "dropout",
            OpKind::GaussianSample => "gaussian_sample",
            OpKind::CausalMask => "causal_mask",
        }
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    retain: bool,
    consumed: bool,
    rng: Option<StreamRng>,
    input_grads: HashMap<usize, DArray>,
    frozen: Vec<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape whose graph is released by the first `backward` call.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), retain: false, consumed: false, rng: None, input_grads: HashMap::new(), frozen: Vec::new() }
    }

    /// A tape that allows repeated `backward` calls; gradients accumulate.
    pub fn retaining() -> Self {
        Self { retain: true, ..Self::new() }
    }

    pub fn with_rng(mut self, rng: StreamRng) -> Self {
        self.rng = Some(rng);
        self
    }

    /// Tape whose stochastic ops draw from the `"tape"` stream of `seed`.
    pub fn seeded(seed: u64) -> Self {
        Self::new().with_rng(RngStreams::new(seed).stream("tape"))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of an input leaf created with [`Tape::input_grad`].
    pub fn grad(&self, v: Var) -> Option<&DArray> {
        self.input_grads.get(&v.0)
    }

    fn push(&mut self, value: DArray, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Input };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: DArray, op: Op, rg: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(self.push(value, op, rg))
    }

    fn rg(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn input(&mut self, value: DArray) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn input_grad(&mut self, value: DArray) -> Var {
        self.nodes.push(Node { value, op: Op::Input, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.input(DArray::scalar(v))
    }

    /// Treats every parameter of `store` as a constant on this tape.
    pub fn freeze(&mut self, store: &ParamStore) {
        self.frozen.push(store.uid());
    }

    /// Leaf for a stored parameter; differentiable iff the parameter is
    /// trainable and its store has not been frozen on this tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.param(id);
        let rg = p.requires_grad && !self.frozen.contains(&store.uid());
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param { store: store.uid(), id: id.index() },
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter that is held fixed on this tape.
    pub fn param_const(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.input(store.value(id).clone())
    }

    /// Applies a primitive by kind. Arity follows the op: binary ops take two
    /// inputs, `layer_norm` takes (x, gain, bias), `concat` takes any number.
    pub fn forward(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let need = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::shape(kind.name(), format!("expected {n} inputs, got {}", inputs.len())));
            }
            Ok(())
        };
        match kind {
            OpKind::Concat { axis } => return self.concat(inputs, *axis),
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Minimum | OpKind::GaussianSample => {
                need(2)?
            }
            OpKind::LayerNorm { .. } => need(3)?,
            _ => need(1)?,
        }
        let x = inputs[0];
        match kind {
            OpKind::MatMul => self.matmul(x, inputs[1]),
            OpKind::Add => self.add(x, inputs[1]),
            OpKind::Sub => self.sub(x, inputs[1]),
            OpKind::Mul => self.mul(x, inputs[1]),
            OpKind::Minimum => self.minimum(x, inputs[1]),
            OpKind::Scale(c) => self.scale(x, *c),
            OpKind::AddScalar(c) => self.add_scalar(x, *c),
            OpKind::Relu => self.relu(x),
            OpKind::Tanh => self.tanh(x),
            OpKind::Exp => self.exp(x),
            OpKind::Log => self.log(x),
            OpKind::Clamp { lo, hi } => self.clamp(x, *lo, *hi),
            OpKind::Softmax { axis } => self.softmax(x, *axis),
            OpKind::LayerNorm { eps } => self.layer_norm(x, inputs[1], inputs[2], *eps),
            OpKind::Slice { axis, start, end } => self.slice(x, *axis, *start, *end),
            OpKind::Sum => self.sum(x),
            OpKind::Mean => self.mean(x),
            OpKind::SumAxis { axis } => self.sum_axis(x, *axis),
            OpKind::Reshape(shape) => self.reshape(x, shape.clone()),
            OpKind::Permute(perm) => self.permute(x, perm),
            OpKind::Dropout { p, train } => self.dropout(x, *p, *train),
            OpKind::GaussianSample => self.gaussian_sample(x, inputs[1]),
            OpKind::CausalMask => self.causal_mask(x),
            OpKind::Concat { .. } => unreachable!(),
        }
    }

    // ---- linear algebra -------------------------------------------------

    /// `[.., m, k] × [k, n]` or batched `[B.., m, k] × [B.., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![0.0; out_shape.iter().product()];
        if sb.len() == 2 {
            let rows = av.len() / k.max(1);
            let rows = if k == 0 { sa[..sa.len() - 1].iter().product() } else { rows };
            gemm(rows, k, n, av, false, bv, false, &mut out, false);
        } else {
            if sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(Error::shape("matmul", format!("batch dims {sa:?} x {sb:?}")));
            }
            let batch: usize = sa[..sa.len() - 2].iter().product();
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let rg = self.rg(&[a.0, b.0]);
        self.push_checked("matmul", DArray::new(out_shape, out)?, Op::MatMul { a: a.0, b: b.0 }, rg)
    }

    // ---- elementwise binary ---------------------------------------------

    /// Shape check for binary ops: `b` equals `a`, is a suffix of `a`
    /// (broadcast over leading dims), or holds a single value.
    fn broadcast_len(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let nb = self.nodes[b.0].value.len();
        if sa == sb || nb == 1 || (sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb) {
            Ok(nb.max(1))
        } else {
            Err(Error::shape(op, format!("{sa:?} vs {sb:?}")))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let nb = self.broadcast_len(name, a, b)?;
        let av = &self.nodes[a.0].value;
        let bv = self.nodes[b.0].value.data();
        let data: Vec<f64> = av.data().iter().enumerate().map(|(i, &x)| f(x, bv[i % nb])).collect();
        let value = DArray::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a.0, b.0]);
        self.push_checked(name, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("minimum", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        self.binary("minimum", a, b, f64::min, Op::Minimum { a: a.0, b: b.0 })
    }

    // ---- elementwise unary ----------------------------------------------

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let value = DArray::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect())?;
        let rg = self.rg(&[a.0]);
        self.push_checked(name, value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| c * x, Op::Scale { a: a.0, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar { a: a.0 })
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu { a: a.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh { a: a.0 })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp { a: a.0 })
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        self.unary("log", a, f64::ln, Op::Log { a: a.0 })
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary("clamp", a, |x| x.clamp(lo, hi), Op::Clamp { a: a.0, lo, hi })
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    // ---- normalisation --------------------------------------------------

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.nodes[a.0].value.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    y[at(j)] /= z;
                }
            }
        }
        let rg = self.rg(&[a.0]);
        self.push_checked("softmax", DArray::new(shape, y)?, Op::Softmax { a: a.0, axis }, rg)
    }

    /// Layer normalisation over the last axis with per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("x {shape:?}, gain {:?}, bias {:?}", self.shape(gain), self.shape(bias)),
            ));
        }
        let xv = self.nodes[x.0].value.data();
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let rows = xv.len() / d.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x.0, gain.0, bias.0]);
        let op = Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, rstd };
        self.push_checked("layer_norm", DArray::new(shape, y)?, op, rg)
    }

    // ---- structural -----------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let same_rank = s.len() == base.len();
            if !same_rank || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                let src = self.nodes[p.0].value.data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&idx);
        self.push_checked("concat", DArray::new(shape, out)?, Op::Concat { parts: idx, axis }, rg)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let src_shape = self.shape(a).to_vec();
        if axis >= src_shape.len() || start >= end || end > src_shape[axis] {
            return Err(Error::shape("slice", format!("[{start}, {end}) on axis {axis} of {src_shape:?}")));
        }
        let (outer, len, inner) = split_axis(&src_shape, axis);
        let src = self.nodes[a.0].value.data();
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = src_shape;
        shape[axis] = w;
        let rg = self.rg(&[a.0]);
        self.push_checked("slice", DArray::new(shape, out)?, Op::Slice { a: a.0, axis, start }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshaped(shape)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::Reshape { a: a.0 }, rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} for shape {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = permute_data(self.nodes[a.0].value.data(), &shape, perm);
        let rg = self.rg(&[a.0]);
        Ok(self.push(DArray::new(out_shape, out)?, Op::Permute { a: a.0, perm: perm.to_vec() }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::shape("transpose", format!("{:?}", self.shape(a))));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a.0]);
        self.push_checked("sum", DArray::scalar(s), Op::Sum { a: a.0 }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::shape("mean", "empty input"));
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a.0]);
        self.push_checked("mean", DArray::scalar(m), Op::Mean { a: a.0 }, rg)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.rg(&[a.0]);
        self.push_checked("sum_axis", DArray::new(out_shape, out)?, Op::SumAxis { a: a.0, axis }, rg)
    }

    // ---- stochastic -----------------------------------------------------

    fn rng(&mut self) -> Result<&mut StreamRng> {
        self.rng.as_mut().ok_or_else(|| Error::invalid("stochastic op on a tape without an rng"))
    }

    /// Inverted dropout: identity when `train` is false or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p}")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let n = self.value(a).len();
        let keep = 1.0 / (1.0 - p);
        let rng = self.rng()?;
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = DArray::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::Dropout { a: a.0, mask }, rg))
    }

    /// Reparameterised draw `mean + exp(log_std) · ε` with ε from the tape rng.
    pub fn gaussian_sample(&mut self, mean: Var, log_std: Var) -> Result<Var> {
        let n = self.value(mean).len();
        let rng = self.rng()?;
        let noise: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        self.gaussian_sample_with(mean, log_std, noise)
    }

    /// [`Tape::gaussian_sample`] with caller-supplied standard-normal noise.
    pub fn gaussian_sample_with(&mut self, mean: Var, log_std: Var, noise: Vec<f64>) -> Result<Var> {
        if self.shape(mean) != self.shape(log_std) || noise.len() != self.value(mean).len() {
            return Err(Error::shape(
                "gaussian_sample",
                format!("mean {:?}, log_std {:?}, noise {}", self.shape(mean), self.shape(log_std), noise.len()),
            ));
        }
        let m = self.value(mean).data();
        let ls = self.value(log_std).data();
        let data = (0..noise.len()).map(|i| m[i] + ls[i].exp() * noise[i]).collect();
        let value = DArray::new(self.shape(mean).to_vec(), data)?;
        let rg = self.rg(&[mean.0, log_std.0]);
        self.push_checked("gaussian_sample", value, Op::GaussianSample { mean: mean.0, log_std: log_std.0, noise }, rg)
    }

    /// Replaces entries above the diagonal of the last two axes with
    /// [`MASK_VALUE`], so query `i` only sees keys `j <= i` after softmax.
    pub fn causal_mask(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let r = shape.len();
        if r < 2 || shape[r - 1] != shape[r - 2] {
            return Err(Error::shape("causal_mask", format!("{shape:?}")));
        }
        let t = shape[r - 1];
        let mut data = self.value(a).data().to_vec();
        for block in data.chunks_mut(t * t) {
            for i in 0..t {
                for j in i + 1..t {
                    block[i * t + j] = MASK_VALUE;
                }
            }
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(DArray::new(shape, data)?, Op::CausalMask { a: a.0 }, rg))
    }

    // ---- backward -------------------------------------------------------

    /// Back-propagates from a scalar `loss`, adding ∂loss/∂p into the gradient
    /// buffer of every trainable parameter of `stores` used on this tape, and
    /// into the input-leaf gradients readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var, stores: &mut [&mut ParamStore]) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        if !self.retain {
            self.consumed = true;
        }
        let mut grads: Vec<Option<DArray>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(DArray::filled(lv.shape().to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Input => {
                    self.input_grads
                        .entry(i)
                        .and_modify(|acc| acc.add_assign(&g))
                        .or_insert_with(|| g.clone());
                }
                Op::Param { store, id } => {
                    if let Some(s) = stores.iter_mut().find(|s| s.uid() == *store) {
                        s.accumulate_grad(*id, &g);
                    }
                }
                _ => self.node_backward(i, &g, &mut grads)?,
            }
        }
        if !self.retain {
            // release saved intermediates; values stay readable
            for n in &mut self.nodes {
                if !matches!(n.op, Op::Input | Op::Param { .. }) {
                    n.op = Op::Input;
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &DArray, grads: &mut [Option<DArray>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let gd = g.data();
        let val = |j: usize| &self.nodes[j].value;
        let wants = |j: usize| self.nodes[j].requires_grad;
        let mut send = |j: usize, data: Vec<f64>| {
            let shape = self.nodes[j].value.shape().to_vec();
            let d = DArray::new(shape, data).expect("gradient shape");
            match &mut grads[j] {
                Some(acc) => acc.add_assign(&d),
                None => grads[j] = Some(d),
            }
        };
        match &node.op {
            Op::Input | Op::Param { .. } => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = val(a).shape();
                let sb = val(b).shape();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let av = val(a).data();
                let bv = val(b).data();
                if sb.len() == 2 {
                    let rows = av.len() / k.max(1);
                    if wants(a) {
                        let mut da = vec![0.0; av.len()];
                        gemm(rows, n, k, gd, false, bv, true, &mut da, false);
                        send(a, da);
                    }
                    if wants(b) {
                        let mut db = vec![0.0; bv.len()];
                        gemm(k, rows, n, av, true, gd, false, &mut db, false);
                        send(b, db);
                    }
                } else {
                    let batch = av.len() / (m * k).max(1);
                    if wants(a) {
                        let mut da = vec![0.0; av.len()];
                        for t in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &gd[t * m * n..(t + 1) * m * n],
                                false,
                                &bv[t * k * n..(t + 1) * k * n],
                                true,
                                &mut da[t * m * k..(t + 1) * m * k],
                                false,
                            );
                        }
                        send(a, da);
                    }
                    if wants(b) {
                        let mut db = vec![0.0; bv.len()];
                        for t in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &av[t * m * k..(t + 1) * m * k],
                                true,
                                &gd[t * m * n..(t + 1) * m * n],
                                false,
                                &mut db[t * k * n..(t + 1) * k * n],
                                false,
                            );
                        }
                        send(b, db);
                    }
                }
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if wants(*a) {
                    send(*a, gd.to_vec());
                }
                if wants(*b) {
                    let nb = val(*b).len();
                    let mut db = vec![0.0; nb];
                    for (idx, gv) in gd.iter().enumerate() {
                        db[idx % nb] += sign * gv;
                    }
                    send(*b, db);
                }
            }
            Op::Mul { a, b } => {
                let av = val(*a).data();
                let bv = val(*b).data();
                let nb = bv.len();
                if wants(*a) {
                    send(*a, gd.iter().enumerate().map(|(idx, gv)| gv * bv[idx % nb]).collect());
                }
                if wants(*b) {
                    let mut db = vec![0.0; nb];
                    for (idx, gv) in gd.iter().enumerate() {
                        db[idx % nb] += gv * av[idx];
                    }
                    send(*b, db);
                }
            }
            Op::Minimum { a, b } => {
                let av = val(*a).data();
                let bv = val(*b).data();
                if wants(*a) {
                    send(*a, gd.iter().zip(av.iter().zip(bv)).map(|(g, (x, y))| if x <= y { *g } else { 0.0 }).collect());
                }
                if wants(*b) {
                    send(*b, gd.iter().zip(av.iter().zip(bv)).map(|(g, (x, y))| if x <= y { 0.0 } else { *g }).collect());
                }
            }
            Op::Scale { a, c } => send(*a, gd.iter().map(|g| g * c).collect()),
            Op::AddScalar { a } | Op::Reshape { a } => send(*a, gd.to_vec()),
            Op::Relu { a } => {
                let x = val(*a).data();
                send(*a, gd.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Tanh { a } => send(*a, gd.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Exp { a } => send(*a, gd.iter().zip(out).map(|(g, y)| g * y).collect()),
            Op::Log { a } => {
                let x = val(*a).data();
                send(*a, gd.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Clamp { a, lo, hi } => {
                let x = val(*a).data();
                send(*a, gd.iter().zip(x).map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 }).collect());
            }
            Op::Softmax { a, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![0.0; out.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + ii;
                        let dot: f64 = (0..len).map(|j| gd[at(j)] * out[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = out[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                send(*a, dx);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = val(*gain).len();
                let gv = val(*gain).data();
                let rows = xhat.len() / d.max(1);
                if wants(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gd[r * d + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = gd[r * d + j] * gv[j];
                            dx[r * d + j] = rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                    send(*x, dx);
                }
                if wants(*gain) {
                    let mut dg = vec![0.0; d];
                    for (idx, gv) in gd.iter().enumerate() {
                        dg[idx % d] += gv * xhat[idx];
                    }
                    send(*gain, dg);
                }
                if wants(*bias) {
                    let mut db = vec![0.0; d];
                    for (idx, gv) in gd.iter().enumerate() {
                        db[idx % d] += gv;
                    }
                    send(*bias, db);
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if wants(p) {
                        let mut dp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            dp.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        send(p, dp);
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, len, inner) = split_axis(val(*a).shape(), *axis);
                let w = node.value.shape()[*axis];
                let mut da = vec![0.0; val(*a).len()];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    da[dst..dst + w * inner].copy_from_slice(&gd[o * w * inner..(o + 1) * w * inner]);
                }
                send(*a, da);
            }
            Op::Sum { a } => send(*a, vec![gd[0]; val(*a).len()]),
            Op::Mean { a } => {
                let n = val(*a).len();
                send(*a, vec![gd[0] / n as f64; n]);
            }
            Op::SumAxis { a, axis } => {
                let (outer, len, inner) = split_axis(val(*a).shape(), *axis);
                let mut da = vec![0.0; val(*a).len()];
                for o in 0..outer {
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        da[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                send(*a, da);
            }
            Op::Permute { a, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                send(*a, permute_data(gd, node.value.shape(), &inv));
            }
            Op::Dropout { a, mask } => send(*a, gd.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::GaussianSample { mean, log_std, noise } => {
                if wants(*mean) {
                    send(*mean, gd.to_vec());
                }
                if wants(*log_std) {
                    let ls = val(*log_std).data();
                    send(*log_std, (0..gd.len()).map(|k| gd[k] * ls[k].exp() * noise[k]).collect());
                }
            }
            Op::CausalMask { a } => {
                let shape = node.value.shape();
                let t = shape[shape.len() - 1];
                let mut da = gd.to_vec();
                for block in da.chunks_mut(t * t) {
                    for r in 0..t {
                        for c in r + 1..t {
                            block[r * t + c] = 0.0;
                        }
                    }
                }
                send(*a, da);
            }
        }
        Ok(())
    }
}

fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let r = shape.len();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; r];
    for _ in 0..src.len() {
        let mut off = 0;
        for d in 0..r {
            off += idx[d] * in_strides[perm[d]];
        }
        out.push(src[off]);
        for d in (0..r).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i3 = t.input(DArray::eye(3));
        let a = t.input(DArray::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = t.matmul(i3, a).unwrap();
        assert_eq!(t.value(y).data(), t.value(a).data());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.input(DArray::vector(vec![0.0; 3]));
        let y = t.softmax(x, 0).unwrap();
        assert!(close(t.value(y).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn layer_norm_matches_hand_computation() {
        let eps = 1e-5;
        let mut t = Tape::new();
        let x = t.input(DArray::vector(vec![1.0, 2.0, 3.0]));
        let g = t.input(DArray::vector(vec![1.0; 3]));
        let b = t.input(DArray::vector(vec![0.0; 3]));
        let y = t.layer_norm(x, g, b, eps).unwrap();
        // mean 2, population variance 2/3
        let s = (2.0f64 / 3.0 + eps).sqrt();
        assert!(close(t.value(y).data(), &[-1.0 / s, 0.0, 1.0 / s], 1e-12));
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut t = Tape::new();
        let x = t.input_grad(DArray::new(vec![2, 3], vec![0.5; 6]).unwrap());
        let s = t.sum(x).unwrap();
        t.backward(s, &mut []).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn relu_subgradient() {
        let mut t = Tape::new();
        let x = t.input_grad(DArray::vector(vec![-1.0, 2.0]));
        let r = t.relu(x).unwrap();
        let s = t.sum(r).unwrap();
        t.backward(s, &mut []).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        assert!(matches!(t.backward(Var(0), &mut []), Err(Error::EmptyTape)));
        let x = t.input_grad(DArray::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x, &mut []), Err(Error::NotScalar(_))));
        let s = t.sum(x).unwrap();
        t.backward(s, &mut []).unwrap();
        assert!(matches!(t.backward(s, &mut []), Err(Error::TapeConsumed)));
    }

    #[test]
    fn retaining_tape_accumulates() {
        let mut t = Tape::retaining();
        let x = t.input_grad(DArray::vector(vec![1.0, 2.0]));
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s, &mut []).unwrap();
        t.backward(s, &mut []).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn param_grads_accumulate_until_zeroed() {
        let mut store = ParamStore::new();
        let w = store.add("w", DArray::vector(vec![3.0])).unwrap();
        for _ in 0..2 {
            let mut t = Tape::new();
            let p = t.param(&store, w);
            let s = t.sum(p).unwrap();
            t.backward(s, &mut [&mut store]).unwrap();
        }
        assert_eq!(store.grad(w).unwrap().data(), &[2.0]);
        store.zero_grads();
        assert_eq!(store.grad(w).unwrap().data(), &[0.0]);
    }

    #[test]
    fn log_domain_and_exp_overflow_are_errors() {
        let mut t = Tape::new();
        let x = t.input(DArray::vector(vec![0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain(_))));
        let big = t.input(DArray::vector(vec![1000.0]));
        assert!(matches!(t.exp(big), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = t.input(DArray::zeros(vec![2, 3]));
        let b = t.input(DArray::zeros(vec![2, 3]));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
        let c = t.input(DArray::zeros(vec![2]));
        assert!(matches!(t.add(a, c), Err(Error::Shape { .. })));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut t = Tape::seeded(1);
        let x = t.input(DArray::vector(vec![1.0, 2.0, 3.0]));
        let y = t.dropout(x, 0.5, false).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn permute_roundtrip() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = t.input(DArray::new(vec![2, 3, 4], data.clone()).unwrap());
        let y = t.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(t.shape(y), &[4, 2, 3]);
        // element (i, j, k) of x lands at (k, i, j)
        assert_eq!(t.value(y).data()[3 * 6 + 3 + 2], data[12 + 2 * 4 + 3]);
        let z = t.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(t.value(z).data(), &data[..]);
    }

    #[test]
    fn causal_mask_blocks_future() {
        let mut t = Tape::new();
        let x = t.input(DArray::zeros(vec![2, 2]));
        let m = t.causal_mask(x).unwrap();
        let s = t.softmax(m, 1).unwrap();
        assert_eq!(t.value(s).data(), &[1.0, 0.0, 0.5, 0.5]);
    }
}
