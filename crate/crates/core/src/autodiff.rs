//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node holding its forward value. Nodes are
//! appended in dependency order, so a single reverse sweep over the tape
//! visits each node after all of its consumers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Floor applied to the argument of [`Tape::log`].
pub const LOG_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulTN(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Softplus(Var),
    Sigmoid(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    Norm(Var),
    DivScalar(Var, Var),
    Reshape(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    GaussianBank { centers: Var, widths: Var, mid: Vec<T>, sigma: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation record for one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Adjoints<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Adjoints<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn elementwise_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulNT(..) => "matmul_nt",
        Op::MatMulTN(..) => "matmul_tn",
        Op::Transpose(..) => "transpose",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Tanh(..) => "tanh",
        Op::Relu(..) => "relu",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Softplus(..) => "softplus",
        Op::Sigmoid(..) => "sigmoid",
        Op::Square(..) => "square",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::SumRows(..) => "sum_rows",
        Op::MeanRows(..) => "mean_rows",
        Op::MaxRows(..) => "max_rows",
        Op::Norm(..) => "norm",
        Op::DivScalar(..) => "div_scalar",
        Op::Reshape(..) => "reshape",
        Op::SliceRows(..) => "slice_rows",
        Op::ConcatRows(..) => "concat_rows",
        Op::GaussianBank { .. } => "gaussian_bank",
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::zero() { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: elementwise_name(&op).to_string() });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a * b^T` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k, n) = (va.rows(), va.cols(), vb.rows());
        if vb.cols() != k {
            return Err(Error::shape("matmul_nt", format!("{m}x{k} by ({}x{})^T", vb.rows(), vb.cols())));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_into(va.data(), vb.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b), rg)
    }

    /// `a^T * b` without materialising the transpose.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (k, m, n) = (va.rows(), va.cols(), vb.cols());
        if vb.rows() != k {
            return Err(Error::shape("matmul_tn", format!("({k}x{m})^T by {}x{n}", vb.rows())));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_tn_into(va.data(), vb.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulTN(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    /// `a (m x n) + b (1 x n)`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let n = va.cols();
        let mut value = va.clone();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x = *x + vb.data()[i % n];
        }
        let rg = self.rg(&[a, b]);
        self.push(value, Op::AddRow(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    /// Natural log with the argument clamped to at least [`LOG_CLAMP`].
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let floor = T::of(LOG_CLAMP);
        self.unary(a, Op::Log(a), |x| x.max(floor).ln())
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * slope })
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let value = Tensor::scalar(va.sum() / T::from_usize(va.len()).unwrap());
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Sum over the leading axis, `1 x cols`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let r = T::from_usize(va.rows()).unwrap();
        let value = va.mean_rows().map(|x| x * r);
        let rg = self.rg(&[a]);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Mean over the leading axis, `1 x cols`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mean_rows();
        let rg = self.rg(&[a]);
        self.push(value, Op::MeanRows(a), rg)
    }

    /// Column-wise max over rows; gradient routes to the first maximal row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut arg = vec![0usize; c];
        let mut best: Vec<T> = va.row_slice(0).to_vec();
        for i in 1..r {
            for (j, &x) in va.row_slice(i).iter().enumerate() {
                if x > best[j] {
                    best[j] = x;
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::row(best), Op::MaxRows(a, arg), rg)
    }

    /// Euclidean (Frobenius) norm as a `1 x 1` tensor.
    pub fn norm(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).norm());
        let rg = self.rg(&[a]);
        self.push(value, Op::Norm(a), rg)
    }

    /// `a / s` for a `1 x 1` tensor `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("div_scalar", format!("divisor {:?}", self.value(s).shape())));
        }
        let d = self.value(s).item();
        let value = self.value(a).map(|x| x / d);
        let rg = self.rg(&[a, s]);
        self.push(value, Op::DivScalar(a, s), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start >= end || end > va.rows() {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {}", va.rows())));
        }
        let c = va.cols();
        let value = Tensor::new(vec![end - start, c], va.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != c {
                return Err(Error::shape("concat_rows", format!("{} vs {c} columns", v.cols())));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(vec![rows, c], data)?, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Row-normalized Gaussian attention weights, `N x len`.
    ///
    /// `centers_raw` and `widths_raw` are `1 x N`. Filter `n` sits at
    /// `0.5 * len * (centers_raw[n] + 1)` with width
    /// `softplus(widths_raw[n]) + width_floor`; each row sums to one.
    pub fn gaussian_bank(
        &mut self,
        centers_raw: Var,
        widths_raw: Var,
        len: usize,
        width_floor: T,
    ) -> Result<Var> {
        let (c, w) = (self.value(centers_raw), self.value(widths_raw));
        if c.len() != w.len() || len == 0 {
            return Err(Error::shape("gaussian_bank", format!("{} centers, {} widths, len {len}", c.len(), w.len())));
        }
        let n = c.len();
        let half_len = T::of(0.5) * T::from_usize(len).unwrap();
        let mid: Vec<T> = c.data().iter().map(|&g| half_len * (g + T::one())).collect();
        let sigma: Vec<T> = w.data().iter().map(|&s| softplus(s) + width_floor).collect();
        let value = gaussian_rows(&mid, &sigma, len);
        debug_assert_eq!(value.rows(), n);
        let rg = self.rg(&[centers_raw, widths_raw]);
        self.push(
            value,
            Op::GaussianBank { centers: centers_raw, widths: widths_raw, mid, sigma },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`. The tape may be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Adjoints<T>> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed; run a new forward pass".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Adjoints { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adjoint buffer of `v`, created as zeros on first use; `None` when
    /// `v` takes no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                // dA = G * B^T, dB = A^T * G
                if let Some(d) = self.slot(grads, *a) {
                    matmul_nt_into(g.data(), vb.data(), d.data_mut(), m, n, k);
                }
                if let Some(d) = self.slot(grads, *b) {
                    matmul_tn_into(va.data(), g.data(), d.data_mut(), k, m, n);
                }
            }
            Op::MatMulNT(a, b) => {
                // out = A B^T with A: m x k, B: n x k
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                if let Some(d) = self.slot(grads, *a) {
                    matmul_into(g.data(), vb.data(), d.data_mut(), m, n, k);
                }
                if let Some(d) = self.slot(grads, *b) {
                    matmul_tn_into(g.data(), va.data(), d.data_mut(), n, m, k);
                }
            }
            Op::MatMulTN(a, b) => {
                // out = A^T B with A: k x m, B: k x n
                let (va, vb) = (val(*a), val(*b));
                let (k, m, n) = (va.rows(), va.cols(), vb.cols());
                if let Some(d) = self.slot(grads, *a) {
                    matmul_nt_into(vb.data(), g.data(), d.data_mut(), k, n, m);
                }
                if let Some(d) = self.slot(grads, *b) {
                    matmul_into(va.data(), g.data(), d.data_mut(), k, m, n);
                }
            }
            Op::Transpose(a) => {
                let d = g.transpose().reshape(val(*a).shape()).unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[b.0].requires_grad {
                    let r = T::from_usize(g.rows()).unwrap();
                    let d = g.mean_rows().map(|x| x * r);
                    self.accumulate(grads, *b, d.reshape(val(*b).shape()).unwrap());
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y).unwrap());
                self.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y).unwrap());
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, y| x * y).unwrap()),
            Op::Log(a) => {
                let floor = T::of(LOG_CLAMP);
                let d = g
                    .zip_map(val(*a), |x, y| if y > floor { x / y } else { T::zero() })
                    .unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(out, |x, y| x * (T::one() - y * y)).unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = g
                    .zip_map(val(*a), |x, y| if y > T::zero() { x } else { T::zero() })
                    .unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let d = g.zip_map(val(*a), |x, y| if y > T::zero() { x } else { x * s }).unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = g.zip_map(val(*a), |x, y| x * sigmoid(y)).unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(out, |x, y| x * y * (T::one() - y)).unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(val(*a), |x, y| x * (y + y)).unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let gi = g.item();
                self.accumulate(grads, *a, Tensor::filled(val(*a).shape(), gi));
            }
            Op::Mean(a) => {
                let va = val(*a);
                let gi = g.item() / T::from_usize(va.len()).unwrap();
                self.accumulate(grads, *a, Tensor::filled(va.shape(), gi));
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let va = val(*a);
                let scale = if matches!(node.op, Op::MeanRows(_)) {
                    T::one() / T::from_usize(va.rows()).unwrap()
                } else {
                    T::one()
                };
                let c = va.cols();
                let d = Tensor::from_fn(va.rows(), c, |_, j| g.data()[j] * scale);
                self.accumulate(grads, *a, d.reshape(va.shape()).unwrap());
            }
            Op::MaxRows(a, arg) => {
                let va = val(*a);
                let c = va.cols();
                let mut d = Tensor::zeros(va.shape());
                for (j, &r) in arg.iter().enumerate() {
                    d.data_mut()[r * c + j] = g.data()[j];
                }
                self.accumulate(grads, *a, d);
            }
            Op::Norm(a) => {
                let n = out.item();
                let va = val(*a);
                let d = if n > T::zero() {
                    let s = g.item() / n;
                    va.map(|x| x * s)
                } else {
                    Tensor::zeros(va.shape())
                };
                self.accumulate(grads, *a, d);
            }
            Op::DivScalar(a, s) => {
                let d = val(*s).item();
                let inv = T::one() / d;
                self.accumulate(grads, *a, g.map(|x| x * inv));
                if self.nodes[s.0].requires_grad {
                    let dot: T = g.data().iter().zip(val(*a).data()).map(|(&x, &y)| x * y).sum();
                    self.accumulate(grads, *s, Tensor::scalar(-dot / (d * d)));
                }
            }
            Op::Reshape(a) => {
                let d = g.clone().reshape(val(*a).shape()).unwrap();
                self.accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let va = val(*a);
                let c = va.cols();
                let mut d = Tensor::zeros(va.shape());
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let vp = val(*p);
                    let n = vp.len();
                    let d = Tensor::new(vp.shape().to_vec(), g.data()[offset..offset + n].to_vec()).unwrap();
                    offset += n;
                    self.accumulate(grads, *p, d);
                }
            }
            Op::GaussianBank { centers, widths, mid, sigma } => {
                let len = out.cols();
                let half_len = T::of(0.5) * T::from_usize(len).unwrap();
                let mut dc = vec![T::zero(); mid.len()];
                let mut dw = vec![T::zero(); mid.len()];
                let wv = val(*widths);
                for n in 0..mid.len() {
                    let f = out.row_slice(n);
                    let gr = g.row_slice(n);
                    // softmax backward: dL/da = F * (G - <G, F>)
                    let inner: T = f.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    let s2 = sigma[n] * sigma[n];
                    let mut d_mid = T::zero();
                    let mut d_sigma = T::zero();
                    for t in 0..len {
                        let da = f[t] * (gr[t] - inner);
                        let diff = T::from_usize(t).unwrap() - mid[n];
                        d_mid = d_mid + da * diff / s2;
                        d_sigma = d_sigma + da * diff * diff / (s2 * sigma[n]);
                    }
                    dc[n] = d_mid * half_len;
                    dw[n] = d_sigma * sigmoid(wv.data()[n]);
                }
                let cs = val(*centers).shape().to_vec();
                self.accumulate(grads, *centers, Tensor::new(cs, dc).unwrap());
                self.accumulate(grads, *widths, Tensor::new(wv.shape().to_vec(), dw).unwrap());
            }
        }
    }
}

/// `F[n,t] ∝ exp(-(t - mid_n)^2 / (2 sigma_n^2))`, each row normalized.
pub(crate) fn gaussian_rows<T: Scalar>(mid: &[T], sigma: &[T], len: usize) -> Tensor<T> {
    let two = T::of(2.0);
    let mut data = Vec::with_capacity(mid.len() * len);
    for (&g, &s) in mid.iter().zip(sigma) {
        let logits: Vec<T> = (0..len)
            .map(|t| {
                let d = T::from_usize(t).unwrap() - g;
                -(d * d) / (two * s * s)
            })
            .collect();
        let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = logits.iter().map(|&l| (l - top).exp()).collect();
        let z: T = e.iter().copied().sum();
        data.extend(e.into_iter().map(|x| x / z));
    }
    Tensor::new(vec![mid.len(), len], data).expect("bank shape")
}
