//! The gradient tape and the differentiable primitives recorded on it.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends one node to the
//! tape; node ids are therefore already in topological order and
//! [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::tensor::{axis_extents, Tensor};

/// Inputs to `log` are clamped from below at this value.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(Binary, usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Unary(Unary, usize),
    Elementwise {
        input: usize,
        derivative: fn(f64) -> f64,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    Transpose(usize),
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    Sum {
        input: usize,
        axis: usize,
    },
    SumAll(usize),
    Mean(usize),
    Mse(usize, usize),
    Bce(usize, usize),
    Conv1d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of evaluated operations. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id].value;
        if out.numel() != 1 {
            return Err(AutodiffError::NonScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::full(out.shape(), 1.0));
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if nodes[id].needs_grad {
                propagate(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape when it did not influence the output.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, contrib: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.add_assign(&contrib),
        slot @ None => *slot = Some(contrib),
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

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let y = &nodes[id].value;
    let gd = g.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if nodes[*a].needs_grad {
                let bt = transpose_raw(bv.data(), k, m);
                let da = matmul_raw(gd, &bt, n, m, k);
                accumulate(nodes, grads, *a, Tensor::new(av.shape(), da).unwrap());
            }
            if nodes[*b].needs_grad {
                let at = transpose_raw(av.data(), n, k);
                let db = matmul_raw(&at, gd, k, n, m);
                accumulate(nodes, grads, *b, Tensor::new(bv.shape(), db).unwrap());
            }
        }
        Op::Binary(kind, a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let rn = bv.numel();
            let (l, r) = (av.data(), bv.data());
            if nodes[*a].needs_grad {
                let da: Vec<f64> = match kind {
                    Binary::Add | Binary::Sub => gd.to_vec(),
                    Binary::Mul => gd.iter().enumerate().map(|(i, g)| g * r[i % rn]).collect(),
                    Binary::Div => gd.iter().enumerate().map(|(i, g)| g / r[i % rn]).collect(),
                };
                accumulate(nodes, grads, *a, Tensor::new(av.shape(), da).unwrap());
            }
            if nodes[*b].needs_grad {
                let mut db = vec![0.0; rn];
                for (i, g) in gd.iter().enumerate() {
                    let j = i % rn;
                    db[j] += match kind {
                        Binary::Add => *g,
                        Binary::Sub => -g,
                        Binary::Mul => g * l[i],
                        Binary::Div => -g * l[i] / (r[j] * r[j]),
                    };
                }
                accumulate(nodes, grads, *b, Tensor::new(bv.shape(), db).unwrap());
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|x| x * c)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Unary(kind, a) => {
            let x = val(*a).data();
            let yd = y.data();
            let d: Vec<f64> = (0..gd.len())
                .map(|i| {
                    let local = match kind {
                        Unary::Sigmoid => yd[i] * (1.0 - yd[i]),
                        Unary::Tanh => 1.0 - yd[i] * yd[i],
                        Unary::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Softplus => sigmoid(x[i]),
                        Unary::Exp => yd[i],
                        Unary::Log => {
                            if x[i] > LOG_CLAMP {
                                1.0 / x[i]
                            } else {
                                0.0
                            }
                        }
                    };
                    gd[i] * local
                })
                .collect();
            accumulate(nodes, grads, *a, Tensor::new(y.shape(), d).unwrap());
        }
        Op::Elementwise { input, derivative } => {
            let x = val(*input).data();
            let d = gd.iter().zip(x).map(|(g, &x)| g * derivative(x)).collect();
            accumulate(nodes, grads, *input, Tensor::new(y.shape(), d).unwrap());
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_extents(y.shape(), *axis);
            let mut offset = 0;
            for &inp in inputs {
                let len = val(inp).shape()[*axis];
                if nodes[inp].needs_grad {
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        d.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    accumulate(nodes, grads, inp, Tensor::new(val(inp).shape(), d).unwrap());
                }
                offset += len;
            }
        }
        Op::Slice { input, axis, start } => {
            let src = val(*input);
            let (outer, total, inner) = axis_extents(src.shape(), *axis);
            let len = y.shape()[*axis];
            let mut d = vec![0.0; src.numel()];
            for o in 0..outer {
                let dst = o * total * inner + start * inner;
                let s = o * len * inner;
                d[dst..dst + len * inner].copy_from_slice(&gd[s..s + len * inner]);
            }
            accumulate(nodes, grads, *input, Tensor::new(src.shape(), d).unwrap());
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, Tensor::new(val(*a).shape(), gd.to_vec()).unwrap());
        }
        Op::Transpose(a) => {
            let (r, c) = (y.shape()[0], y.shape()[1]);
            let d = transpose_raw(gd, r, c);
            accumulate(nodes, grads, *a, Tensor::new(val(*a).shape(), d).unwrap());
        }
        Op::GatherRows { table, ids } => {
            let t = val(*table);
            let width = t.shape()[1];
            let mut d = vec![0.0; t.numel()];
            for (row, &id) in ids.iter().enumerate() {
                for c in 0..width {
                    d[id * width + c] += gd[row * width + c];
                }
            }
            accumulate(nodes, grads, *table, Tensor::new(t.shape(), d).unwrap());
        }
        Op::Softmax { input, axis } => {
            let (outer, len, inner) = axis_extents(y.shape(), *axis);
            let yd = y.data();
            let mut d = vec![0.0; yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| o * len * inner + k * inner + i;
                    let dot: f64 = (0..len).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                    for k in 0..len {
                        d[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *input, Tensor::new(y.shape(), d).unwrap());
        }
        Op::Sum { input, axis } => {
            let src = val(*input);
            let (outer, len, inner) = axis_extents(src.shape(), *axis);
            let mut d = vec![0.0; src.numel()];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        d[o * len * inner + k * inner + i] = gd[o * inner + i];
                    }
                }
            }
            accumulate(nodes, grads, *input, Tensor::new(src.shape(), d).unwrap());
        }
        Op::SumAll(a) => {
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), gd[0]));
        }
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), gd[0] / n));
        }
        Op::Mse(p, t) => {
            let (pv, tv) = (val(*p), val(*t));
            let n = pv.numel() as f64;
            let d: Vec<f64> = pv
                .data()
                .iter()
                .zip(tv.data())
                .map(|(a, b)| 2.0 * (a - b) / n * gd[0])
                .collect();
            if nodes[*t].needs_grad {
                let neg = d.iter().map(|x| -x).collect();
                accumulate(nodes, grads, *t, Tensor::new(tv.shape(), neg).unwrap());
            }
            accumulate(nodes, grads, *p, Tensor::new(pv.shape(), d).unwrap());
        }
        Op::Bce(x, t) => {
            let (xv, tv) = (val(*x), val(*t));
            let n = xv.numel() as f64;
            if nodes[*x].needs_grad {
                let d = xv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(&x, &t)| (sigmoid(x) - t) / n * gd[0])
                    .collect();
                accumulate(nodes, grads, *x, Tensor::new(xv.shape(), d).unwrap());
            }
            if nodes[*t].needs_grad {
                let d = xv.data().iter().map(|&x| -x / n * gd[0]).collect();
                accumulate(nodes, grads, *t, Tensor::new(tv.shape(), d).unwrap());
            }
        }
        Op::Conv1d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => {
            let (xv, wv) = (val(*input), val(*weight));
            let (t_in, c_in) = (xv.shape()[0], xv.shape()[1]);
            let (k, c_out) = (wv.shape()[0], wv.shape()[2]);
            let t_out = y.shape()[0];
            let (x, w) = (xv.data(), wv.data());
            let want_x = nodes[*input].needs_grad;
            let want_w = nodes[*weight].needs_grad;
            let mut dx = vec![0.0; if want_x { x.len() } else { 0 }];
            let mut dw = vec![0.0; if want_w { w.len() } else { 0 }];
            for t in 0..t_out {
                let grow = &gd[t * c_out..(t + 1) * c_out];
                for kk in 0..k {
                    let pos = (t * stride + kk) as isize - *padding as isize;
                    if pos < 0 || pos as usize >= t_in {
                        continue;
                    }
                    let pos = pos as usize;
                    for c in 0..c_in {
                        let wbase = (kk * c_in + c) * c_out;
                        if want_x {
                            let wrow = &w[wbase..wbase + c_out];
                            dx[pos * c_in + c] += grow.iter().zip(wrow).map(|(g, w)| g * w).sum::<f64>();
                        }
                        if want_w {
                            let xval = x[pos * c_in + c];
                            for (dwv, g) in dw[wbase..wbase + c_out].iter_mut().zip(grow) {
                                *dwv += xval * g;
                            }
                        }
                    }
                }
            }
            if want_x {
                accumulate(nodes, grads, *input, Tensor::new(xv.shape(), dx).unwrap());
            }
            if want_w {
                accumulate(nodes, grads, *weight, Tensor::new(wv.shape(), dw).unwrap());
            }
            if let Some(b) = bias {
                let mut db = vec![0.0; c_out];
                for t in 0..t_out {
                    for o in 0..c_out {
                        db[o] += gd[t * c_out + o];
                    }
                }
                accumulate(nodes, grads, *b, Tensor::new(&[c_out], db).unwrap());
            }
        }
    }
}

/// `rhs` broadcasts over `lhs` when its shape is a suffix of `lhs`'s shape.
fn suffix_broadcast(lhs: &[usize], rhs: &[usize]) -> bool {
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary_op(self, kind: Unary) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| match kind {
            Unary::Sigmoid => sigmoid(v),
            Unary::Tanh => v.tanh(),
            Unary::Relu => v.max(0.0),
            Unary::Softplus => softplus(v),
            Unary::Exp => v.exp(),
            Unary::Log => v.max(LOG_CLAMP).ln(),
        });
        self.tape.push(out, Op::Unary(kind, self.id), self.requires_grad())
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary_op(Unary::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary_op(Unary::Tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary_op(Unary::Relu)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary_op(Unary::Softplus)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary_op(Unary::Exp)
    }

    /// Natural log with inputs clamped at [`LOG_CLAMP`].
    pub fn log(self) -> Var<'t> {
        self.unary_op(Unary::Log)
    }

    /// Applies a user-supplied elementwise function whose derivative is `derivative`.
    pub fn map_elementwise(self, forward: fn(f64) -> f64, derivative: fn(f64) -> f64) -> Var<'t> {
        let out = self.value().map(forward);
        self.tape.push(
            out,
            Op::Elementwise {
                input: self.id,
                derivative,
            },
            self.requires_grad(),
        )
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v * c);
        self.tape.push(out, Op::Scale(self.id, c), self.requires_grad())
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v + c);
        self.tape.push(out, Op::AddScalar(self.id), self.requires_grad())
    }

    fn binary_op(self, rhs: Var<'t>, kind: Binary, name: &'static str) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        if !suffix_broadcast(a.shape(), b.shape()) {
            return Err(AutodiffError::shape(name, a.shape(), b.shape()));
        }
        let rn = b.numel();
        let (l, r) = (a.data(), b.data());
        let data = l
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = r[i % rn];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            })
            .collect();
        let out = Tensor::new(a.shape(), data)?;
        let needs = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(out, Op::Binary(kind, self.id, rhs.id), needs))
    }

    /// Elementwise sum; `rhs` may broadcast over leading dimensions.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_op(rhs, Binary::Add, "add")
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_op(rhs, Binary::Sub, "sub")
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_op(rhs, Binary::Mul, "mul")
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_op(rhs, Binary::Div, "div")
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(AutodiffError::shape("matmul", a.shape(), b.shape()));
        }
        let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let out = Tensor::new(&[n, m], matmul_raw(a.data(), b.data(), n, k, m))?;
        let needs = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(out, Op::MatMul(self.id, rhs.id), needs))
    }

    /// `x W + b` for `x: [n, k]`, `W: [k, m]`, `b: [m]`.
    pub fn linear(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.matmul(weight)?.add(bias)
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(AutodiffError::invalid("transpose", format!("rank {} input", a.rank())));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let out = Tensor::new(&[c, r], transpose_raw(a.data(), r, c))?;
        Ok(self.tape.push(out, Op::Transpose(self.id), self.requires_grad()))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape.push(out, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Joins `parts` along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::invalid("concat", "no inputs"))?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(AutodiffError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let needs = parts.iter().any(|p| p.requires_grad());
        let op = Op::Concat {
            inputs: parts.iter().map(|p| p.id).collect(),
            axis,
        };
        Ok(tape.push(Tensor::new(&shape, data)?, op, needs))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.rank() || start + len > a.shape()[axis] || len == 0 {
            return Err(AutodiffError::invalid(
                "slice",
                format!("{start}+{len} along axis {axis} of {:?}", a.shape()),
            ));
        }
        let (outer, total, inner) = axis_extents(a.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * total * inner + start * inner;
            data.extend_from_slice(&a.data()[base..base + len * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = len;
        let op = Op::Slice {
            input: self.id,
            axis,
            start,
        };
        Ok(self.tape.push(Tensor::new(&shape, data)?, op, self.requires_grad()))
    }

    /// Row lookup into a `[vocab, width]` table.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>> {
        let t = self.value();
        if t.rank() != 2 {
            return Err(AutodiffError::invalid("gather_rows", "table must be rank 2"));
        }
        let (vocab, width) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= vocab {
                return Err(AutodiffError::invalid("gather_rows", format!("id {id} >= {vocab}")));
            }
            data.extend_from_slice(&t.data()[id * width..(id + 1) * width]);
        }
        let op = Op::GatherRows {
            table: self.id,
            ids: ids.to_vec(),
        };
        Ok(self
            .tape
            .push(Tensor::new(&[ids.len(), width], data)?, op, self.requires_grad()))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(AutodiffError::invalid("softmax", format!("axis {axis} out of range")));
        }
        let (outer, len, inner) = axis_extents(a.shape(), axis);
        let x = a.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (x[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[idx(k)] /= z;
                }
            }
        }
        let op = Op::Softmax {
            input: self.id,
            axis,
        };
        Ok(self.tape.push(Tensor::new(a.shape(), out)?, op, self.requires_grad()))
    }

    /// Sum over `axis`, which is removed from the shape.
    pub fn sum(self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(AutodiffError::invalid("sum", format!("axis {axis} out of range")));
        }
        let (outer, len, inner) = axis_extents(a.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += a.data()[o * len * inner + k * inner + i];
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        let op = Op::Sum {
            input: self.id,
            axis,
        };
        Ok(self.tape.push(Tensor::new(&shape, out)?, op, self.requires_grad()))
    }

    pub fn sum_all(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape
            .push(Tensor::scalar(s), Op::SumAll(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.value();
        let s = a.data().iter().sum::<f64>() / a.numel() as f64;
        self.tape
            .push(Tensor::scalar(s), Op::Mean(self.id), self.requires_grad())
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(self, target: Var<'t>) -> Result<Var<'t>> {
        let (p, t) = (self.value(), target.value());
        if p.shape() != t.shape() {
            return Err(AutodiffError::shape("mse", p.shape(), t.shape()));
        }
        let n = p.numel() as f64;
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let needs = self.requires_grad() || target.requires_grad();
        Ok(self
            .tape
            .push(Tensor::scalar(s), Op::Mse(self.id, target.id), needs))
    }

    /// Mean binary cross-entropy of `self` as logits against targets in [0, 1].
    pub fn bce_with_logits(self, target: Var<'t>) -> Result<Var<'t>> {
        let (x, t) = (self.value(), target.value());
        if x.shape() != t.shape() {
            return Err(AutodiffError::shape("bce", x.shape(), t.shape()));
        }
        let n = x.numel() as f64;
        let s = x
            .data()
            .iter()
            .zip(t.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let needs = self.requires_grad() || target.requires_grad();
        Ok(self
            .tape
            .push(Tensor::scalar(s), Op::Bce(self.id, target.id), needs))
    }

    /// Convolution over time: `self: [T, C_in]`, `weight: [K, C_in, C_out]`,
    /// `bias: [C_out]`, zero padding on both ends.
    pub fn conv1d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        if x.rank() != 2 || w.rank() != 3 || w.shape()[1] != x.shape()[1] {
            return Err(AutodiffError::shape("conv1d", x.shape(), w.shape()));
        }
        if stride == 0 {
            return Err(AutodiffError::invalid("conv1d", "stride must be >= 1"));
        }
        let (t_in, c_in) = (x.shape()[0], x.shape()[1]);
        let (k, c_out) = (w.shape()[0], w.shape()[2]);
        if t_in + 2 * padding < k {
            return Err(AutodiffError::invalid("conv1d", "kernel longer than padded input"));
        }
        let t_out = (t_in + 2 * padding - k) / stride + 1;
        let bias_val = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != [c_out] {
                    return Err(AutodiffError::shape("conv1d bias", bv.shape(), &[c_out]));
                }
                Some(bv)
            }
            None => None,
        };
        let mut out = vec![0.0; t_out * c_out];
        for t in 0..t_out {
            let row = &mut out[t * c_out..(t + 1) * c_out];
            if let Some(b) = &bias_val {
                row.copy_from_slice(b.data());
            }
            for kk in 0..k {
                let pos = (t * stride + kk) as isize - padding as isize;
                if pos < 0 || pos as usize >= t_in {
                    continue;
                }
                let pos = pos as usize;
                for c in 0..c_in {
                    let xv = x.data()[pos * c_in + c];
                    if xv == 0.0 {
                        continue;
                    }
                    let wbase = (kk * c_in + c) * c_out;
                    for (o, wv) in row.iter_mut().zip(&w.data()[wbase..wbase + c_out]) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let needs = self.requires_grad()
            || weight.requires_grad()
            || bias.is_some_and(|b| b.requires_grad());
        let op = Op::Conv1d {
            input: self.id,
            weight: weight.id,
            bias: bias.map(|b| b.id),
            stride,
            padding,
        };
        Ok(self.tape.push(Tensor::new(&[t_out, c_out], out)?, op, needs))
    }
}
