use crate::error::{Error, Result};
use crate::kernels::{self, MatRef};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Log,
    Tanh,
    Relu,
    Negate,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    All,
    Dim(usize),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Computed from inputs none of which require a gradient.
    Detached,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Conv1d(Var, Var, Var),
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Clamp(Var, f64, f64),
    Reduce(Reduce, Var, Axis),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize, usize),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation, replayed in reverse by
/// [`Tape::backward`].
///
/// Records are stored in creation order, so every record's inputs precede
/// it. A tape supports exactly one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of records on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Detached };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::Contract("tape already consumed by backward".into()))
        } else {
            Ok(())
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            MatRef::new(av.data(), m, k),
            MatRef::new(bv.data(), k, n),
            &mut out,
            0.0,
        );
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Fully-connected layer `x[batch, n] * w[n, p] + bias[p]`.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        self.check_live()?;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        if xv.rank() != 2
            || wv.rank() != 2
            || xv.shape()[1] != wv.shape()[0]
            || bv.shape() != [wv.shape()[1]]
        {
            return Err(Error::Dimension(format!(
                "affine {:?} x {:?} + {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        kernels::gemm(
            MatRef::new(xv.data(), m, k),
            MatRef::new(wv.data(), k, n),
            &mut out,
            1.0,
        );
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, Op::Affine(x, w, bias), &[x, w, bias]))
    }

    /// Same-padded 1-D cross-correlation.
    ///
    /// `x` is `[c_in, len]` or `[batch, c_in, len]`, `kernels` is
    /// `[c_out, c_in, width]` with odd `width`, `bias` is `[c_out]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        self.check_live()?;
        let (xv, kv, bv) = (self.value(x), self.value(kernels), self.value(bias));
        if kv.rank() != 3 {
            return Err(Error::Dimension(format!("conv kernel shape {:?}", kv.shape())));
        }
        let (c_out, c_in, width) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        if width % 2 == 0 {
            return Err(Error::Config(format!("conv kernel width {width} must be odd")));
        }
        let (batch, xc, len, batched) = match xv.shape() {
            [c, l] => (1, *c, *l, false),
            [b, c, l] => (*b, *c, *l, true),
            s => return Err(Error::Dimension(format!("conv input shape {s:?}"))),
        };
        if xc != c_in || bv.shape() != [c_out] {
            return Err(Error::Dimension(format!(
                "conv input {:?}, kernels {:?}, bias {:?}",
                xv.shape(),
                kv.shape(),
                bv.shape()
            )));
        }
        let cols = kernels::im2col(xv.data(), batch, c_in, len, width);
        let ncols = batch * len;
        let mut y = Vec::with_capacity(c_out * ncols);
        for &b in bv.data() {
            y.extend(std::iter::repeat_n(b, ncols));
        }
        kernels::gemm(
            MatRef::new(kv.data(), c_out, c_in * width),
            MatRef::new(&cols, c_in * width, ncols),
            &mut y,
            1.0,
        );
        let out = kernels::channel_major_to_batch_major(&y, batch, c_out, len);
        let shape = if batched {
            vec![batch, c_out, len]
        } else {
            vec![c_out, len]
        };
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::Conv1d(x, kernels, bias), &[x, kernels, bias]))
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        self.check_live()?;
        let xv = self.value(x);
        let value = match op {
            Unary::Exp => xv.map(f64::exp),
            Unary::Log => {
                if let Some(bad) = xv.data().iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                xv.map(f64::ln)
            }
            Unary::Tanh => xv.map(f64::tanh),
            Unary::Relu => xv.map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 }),
            Unary::Negate => xv.map(|v| -v),
            Unary::Square => xv.map(|v| v * v),
        };
        Ok(self.push(value, Op::Unary(op, x), &[x]))
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (av, bv) = (self.value(a), self.value(b));
        let shape = broadcast_shape(av, bv)?;
        let n: usize = shape.iter().product();
        let (sa, sb) = (av.numel() == 1, bv.numel() == 1);
        let (ad, bd) = (av.data(), bv.data());
        let f = |x: f64, y: f64| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let out: Vec<f64> = (0..n)
            .map(|i| f(ad[if sa { 0 } else { i }], bd[if sb { 0 } else { i }]))
            .collect();
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::Binary(op, a, b), &[a, b]))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.check_live()?;
        if lo > hi {
            return Err(Error::Config(format!("clamp interval [{lo}, {hi}] is empty")));
        }
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        Ok(self.push(value, Op::Clamp(x, lo, hi), &[x]))
    }

    pub fn reduce(&mut self, op: Reduce, x: Var, axis: Axis) -> Result<Var> {
        self.check_live()?;
        let xv = self.value(x);
        let (value, count) = match axis {
            Axis::All => {
                let s: f64 = xv.data().iter().sum();
                (Tensor::scalar(s), xv.numel())
            }
            Axis::Dim(d) => {
                if d >= xv.rank() {
                    return Err(Error::Dimension(format!(
                        "reduce axis {d} for shape {:?}",
                        xv.shape()
                    )));
                }
                let (outer, n, inner) = split_axis(xv.shape(), d);
                let data = xv.data();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let row = &data[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                let mut shape = xv.shape().to_vec();
                shape.remove(d);
                (Tensor::from_parts(shape, out), n)
            }
        };
        let value = match op {
            Reduce::Sum => value,
            Reduce::Mean => value.map(|v| v / count as f64),
        };
        Ok(self.push(value, Op::Reduce(op, x, axis), &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.check_live()?;
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !agrees {
                return Err(Error::Dimension(format!("concat {s:?} with {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let n = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check_live()?;
        let xv = self.value(x);
        if axis >= xv.rank() || start >= end || end > xv.shape()[axis] {
            return Err(Error::Dimension(format!(
                "slice {start}..{end} on axis {axis} of {:?}",
                xv.shape()
            )));
        }
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv.data()[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = width;
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::Slice(x, axis, start, end), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check_live()?;
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Negate, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let c = self.constant(Tensor::scalar(factor));
        self.mul(x, c)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var> {
        let c = self.constant(Tensor::scalar(offset));
        self.add(x, c)
    }

    pub fn sum(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.reduce(Reduce::Sum, x, axis)
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.reduce(Reduce::Mean, x, axis)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Afterwards every value that requires a gradient has one (zeros when
    /// it is not connected to `loss`). The tape accepts no further
    /// operations and no second backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_live()?;
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut accumulate = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Detached => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(
                        MatRef::new(g.data(), m, n),
                        MatRef::new(bv.data(), k, n).t(),
                        &mut da,
                        0.0,
                    );
                    accumulate(*a, Tensor::from_parts(vec![m, k], da));
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(
                        MatRef::new(av.data(), m, k).t(),
                        MatRef::new(g.data(), m, n),
                        &mut db,
                        0.0,
                    );
                    accumulate(*b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Affine(x, w, bias) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k, n) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                if wants(*x) {
                    let mut dx = vec![0.0; m * k];
                    kernels::gemm(
                        MatRef::new(g.data(), m, n),
                        MatRef::new(wv.data(), k, n).t(),
                        &mut dx,
                        0.0,
                    );
                    accumulate(*x, Tensor::from_parts(vec![m, k], dx));
                }
                if wants(*w) {
                    let mut dw = vec![0.0; k * n];
                    kernels::gemm(
                        MatRef::new(xv.data(), m, k).t(),
                        MatRef::new(g.data(), m, n),
                        &mut dw,
                        0.0,
                    );
                    accumulate(*w, Tensor::from_parts(vec![k, n], dw));
                }
                if wants(*bias) {
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(*bias, Tensor::from_parts(vec![n], db));
                }
            }
            Op::Conv1d(x, kern, bias) => {
                let (xv, kv) = (self.value(*x), self.value(*kern));
                let (c_out, c_in, width) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
                let (batch, len) = match xv.shape() {
                    [_, l] => (1, *l),
                    [b, _, l] => (*b, *l),
                    _ => unreachable!(),
                };
                let ncols = batch * len;
                let gy = kernels::batch_major_to_channel_major(g.data(), batch, c_out, len);
                if wants(*kern) {
                    let cols = kernels::im2col(xv.data(), batch, c_in, len, width);
                    let mut dk = vec![0.0; c_out * c_in * width];
                    kernels::gemm(
                        MatRef::new(&gy, c_out, ncols),
                        MatRef::new(&cols, c_in * width, ncols).t(),
                        &mut dk,
                        0.0,
                    );
                    accumulate(*kern, Tensor::from_parts(kv.shape().to_vec(), dk));
                }
                if wants(*x) {
                    let mut dcols = vec![0.0; c_in * width * ncols];
                    kernels::gemm(
                        MatRef::new(kv.data(), c_out, c_in * width).t(),
                        MatRef::new(&gy, c_out, ncols),
                        &mut dcols,
                        0.0,
                    );
                    let mut dx = vec![0.0; xv.numel()];
                    kernels::col2im(&dcols, &mut dx, batch, c_in, len, width);
                    accumulate(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                if wants(*bias) {
                    let db = gy.chunks_exact(ncols).map(|r| r.iter().sum()).collect();
                    accumulate(*bias, Tensor::from_parts(vec![c_out], db));
                }
            }
            Op::Unary(op, x) => {
                let xv = self.value(*x);
                let y = &node.value;
                let gd = g.data();
                let dx: Vec<f64> = match op {
                    Unary::Exp => gd.iter().zip(y.data()).map(|(g, y)| g * y).collect(),
                    Unary::Log => gd.iter().zip(xv.data()).map(|(g, x)| g / x).collect(),
                    Unary::Tanh => gd
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect(),
                    Unary::Relu => gd
                        .iter()
                        .zip(xv.data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Unary::Negate => gd.iter().map(|g| -g).collect(),
                    Unary::Square => gd.iter().zip(xv.data()).map(|(g, x)| 2.0 * g * x).collect(),
                };
                accumulate(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Binary(op, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = g.numel();
                let (sa, sb) = (av.numel() == 1 && n > 1, bv.numel() == 1 && n > 1);
                let at = |i: usize| av.data()[if sa { 0 } else { i }];
                let bt = |i: usize| bv.data()[if sb { 0 } else { i }];
                let gd = g.data();
                let fold = |t: &Tensor, full: Vec<f64>, scalar: bool| {
                    if scalar {
                        Tensor::from_parts(t.shape().to_vec(), vec![full.iter().sum()])
                    } else {
                        Tensor::from_parts(t.shape().to_vec(), full)
                    }
                };
                if wants(*a) {
                    let da: Vec<f64> = match op {
                        Binary::Add | Binary::Sub => gd.to_vec(),
                        Binary::Mul => (0..n).map(|i| gd[i] * bt(i)).collect(),
                        Binary::Div => (0..n).map(|i| gd[i] / bt(i)).collect(),
                    };
                    accumulate(*a, fold(av, da, sa));
                }
                if wants(*b) {
                    let db: Vec<f64> = match op {
                        Binary::Add => gd.to_vec(),
                        Binary::Sub => gd.iter().map(|g| -g).collect(),
                        Binary::Mul => (0..n).map(|i| gd[i] * at(i)).collect(),
                        Binary::Div => (0..n)
                            .map(|i| -gd[i] * at(i) / (bt(i) * bt(i)))
                            .collect(),
                    };
                    accumulate(*b, fold(bv, db, sb));
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                let dx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                    .collect();
                accumulate(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Reduce(op, x, axis) => {
                let xv = self.value(*x);
                let dx = match axis {
                    Axis::All => {
                        let scale = match op {
                            Reduce::Sum => 1.0,
                            Reduce::Mean => 1.0 / xv.numel() as f64,
                        };
                        vec![g.item() * scale; xv.numel()]
                    }
                    Axis::Dim(d) => {
                        let (outer, n, inner) = split_axis(xv.shape(), *d);
                        let scale = match op {
                            Reduce::Sum => 1.0,
                            Reduce::Mean => 1.0 / n as f64,
                        };
                        let mut dx = vec![0.0; xv.numel()];
                        for o in 0..outer {
                            let src = &g.data()[o * inner..(o + 1) * inner];
                            for j in 0..n {
                                let dst = &mut dx[(o * n + j) * inner..(o * n + j + 1) * inner];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d = s * scale;
                                }
                            }
                        }
                        dx
                    }
                };
                accumulate(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let n = pv.shape()[*axis];
                    if wants(*p) {
                        let mut dp = Vec::with_capacity(pv.numel());
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            dp.extend_from_slice(&g.data()[start..start + n * inner]);
                        }
                        accumulate(*p, Tensor::from_parts(pv.shape().to_vec(), dp));
                    }
                    offset += n;
                }
            }
            Op::Slice(x, axis, start, end) => {
                let xv = self.value(*x);
                let (outer, n, inner) = split_axis(xv.shape(), *axis);
                let width = end - start;
                let mut dx = vec![0.0; xv.numel()];
                for o in 0..outer {
                    dx[(o * n + start) * inner..(o * n + end) * inner]
                        .copy_from_slice(&g.data()[o * width * inner..(o + 1) * width * inner]);
                }
                accumulate(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Reshape(x) => {
                let xv = self.value(*x);
                accumulate(*x, Tensor::from_parts(xv.shape().to_vec(), g.data().to_vec()));
            }
        }
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::Dimension(format!(
            "elementwise shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )))
    }
}
