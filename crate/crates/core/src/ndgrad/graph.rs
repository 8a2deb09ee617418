use crate::error::{Error, Result};
use crate::ndgrad::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::scalar::Scalar;

/// Norm below which a vector cannot be normalized.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Exp,
    Log,
    Neg,
    Square,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary(BinaryOp, Var, Var),
    /// `y = scale * x + shift`; only the scale matters for the backward rule.
    Affine(Var, T),
    Unary(UnaryOp, Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    SoftmaxRows(Var),
    L2NormalizeRows(Var),
    Sum(Var),
    SumRows(Var),
    Reshape(Var),
    MaskedRowSum(Var, Vec<Vec<usize>>),
    SelectRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Append-only record of differentiable operations.
///
/// Nodes are appended in execution order, so reverse append order is a valid
/// topological order for the backward sweep. A graph supports one backward
/// pass; call [`Graph::reset_grads`] before running another.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, rg: bool) -> Result<Var> {
        value.ensure_finite(name)?;
        Ok(self.push(value, op, rg))
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a trainable input whose gradient is accumulated by `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward root with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.node(v).grad.as_ref()
    }

    /// Clears every gradient so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.consumed = false;
    }

    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a).value, &self.node(b).value);
        if !x.same_shape(y) {
            return Err(Error::shape(
                "elementwise",
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let out = match op {
            BinaryOp::Add => x.zip_map(y, |p, q| p + q),
            BinaryOp::Sub => x.zip_map(y, |p, q| p - q),
            BinaryOp::Mul => x.zip_map(y, |p, q| p * q),
            BinaryOp::Div => {
                if y.data().iter().any(|&q| q == T::zero()) {
                    return Err(Error::domain("div", "division by zero"));
                }
                x.zip_map(y, |p, q| p / q)
            }
        };
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("elementwise", out, Op::Binary(op, a, b), rg)
    }

    /// Tensor-with-scalar form of the binary operations.
    pub fn elementwise_scalar(&mut self, op: BinaryOp, a: Var, c: T) -> Result<Var> {
        let (scale, shift) = match op {
            BinaryOp::Add => (T::one(), c),
            BinaryOp::Sub => (T::one(), -c),
            BinaryOp::Mul => (c, T::zero()),
            BinaryOp::Div => {
                if c == T::zero() {
                    return Err(Error::domain("div", "division by zero scalar"));
                }
                (T::one() / c, T::zero())
            }
        };
        if !c.is_finite() {
            return Err(Error::NonFinite { op: "elementwise" });
        }
        let out = self.node(a).value.map(|v| scale * v + shift);
        let rg = self.rg(a);
        self.push_checked("elementwise", out, Op::Affine(a, scale), rg)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let x = &self.node(a).value;
        let out = match op {
            UnaryOp::Exp => x.map(|v| v.exp()),
            UnaryOp::Log => {
                if x.data().iter().any(|&v| v <= T::zero()) {
                    return Err(Error::domain("log", "non-positive input"));
                }
                x.map(|v| v.ln())
            }
            UnaryOp::Neg => x.map(|v| -v),
            UnaryOp::Square => x.map(|v| v * v),
        };
        let rg = self.rg(a);
        self.push_checked("unary", out, Op::Unary(op, a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.elementwise_scalar(BinaryOp::Mul, a, c)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a).value, &self.node(b).value);
        if x.shape().len() != 2 || y.shape().len() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(x.data(), y.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.node(a).value.transposed()?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Adds `bias[n]` to every row of `x[m×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.node(x).value, &self.node(bias).value);
        let (m, n) = xv.rows_cols();
        if xv.shape().len() != 2 || bv.shape() != [n] {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut out = xv.data().to_vec();
        for r in 0..m {
            for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push_checked(
            "add_bias",
            Tensor::from_parts(vec![m, n], out),
            Op::AddBias(x, bias),
            rg,
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let out = self.node(a).value.map(|v| if v > T::zero() { v } else { slope * v });
        let rg = self.rg(a);
        self.push_checked("leaky_relu", out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.node(a).value.map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        let rg = self.rg(a);
        self.push_checked("sigmoid", out, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a).value;
        let (m, n) = x.rows_cols();
        let mut out = x.data().to_vec();
        for r in 0..m {
            softmax_in_place(&mut out[r * n..(r + 1) * n]);
        }
        let rg = self.rg(a);
        let t = Tensor::from_parts(x.shape().to_vec(), out);
        self.push_checked("softmax_rows", t, Op::SoftmaxRows(a), rg)
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a).value;
        let (m, n) = x.rows_cols();
        let mut out = x.data().to_vec();
        for r in 0..m {
            let row = &mut out[r * n..(r + 1) * n];
            let nrm = crate::scalar::norm(row);
            if !(nrm > T::lit(NORMALIZE_EPS)) {
                return Err(Error::domain("l2_normalize", format!("row {r} has near-zero norm")));
            }
            for v in row.iter_mut() {
                *v /= nrm;
            }
        }
        let rg = self.rg(a);
        let t = Tensor::from_parts(x.shape().to_vec(), out);
        self.push_checked("l2_normalize", t, Op::L2NormalizeRows(a), rg)
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        self.l2_normalize_rows(a)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.node(a).value.sum();
        let rg = self.rg(a);
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a).value.len();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::from_usize_lossy(n))
    }

    /// Sums `x[m×n]` along each row, giving `[m]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a).value;
        let (m, n) = x.rows_cols();
        let out: Vec<T> = (0..m)
            .map(|r| x.data()[r * n..(r + 1) * n].iter().copied().sum())
            .collect();
        let rg = self.rg(a);
        self.push_checked("sum_rows", Tensor::from_parts(vec![m], out), Op::SumRows(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.node(a).value.reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// For each row `i` of `x[m×n]`, sums the entries at column set `cols[i]`.
    pub fn masked_row_sum(&mut self, a: Var, cols: Vec<Vec<usize>>) -> Result<Var> {
        let x = &self.node(a).value;
        let (m, n) = x.rows_cols();
        if cols.len() != m {
            return Err(Error::shape(
                "masked_row_sum",
                format!("{} column sets for {m} rows", cols.len()),
            ));
        }
        let mut out = Vec::with_capacity(m);
        for (r, set) in cols.iter().enumerate() {
            let mut acc = T::zero();
            for &c in set {
                if c >= n {
                    return Err(Error::Index {
                        what: "masked_row_sum column",
                        index: c,
                        len: n,
                    });
                }
                acc += x.data()[r * n + c];
            }
            out.push(acc);
        }
        let rg = self.rg(a);
        self.push_checked(
            "masked_row_sum",
            Tensor::from_parts(vec![m], out),
            Op::MaskedRowSum(a, cols),
            rg,
        )
    }

    /// Gathers rows of `x[m×n]` in the given order, giving `[rows.len()×n]`.
    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let x = &self.node(a).value;
        let (m, n) = x.rows_cols();
        if x.shape().len() != 2 || rows.is_empty() {
            return Err(Error::shape(
                "select_rows",
                format!("{:?} with {} rows", x.shape(), rows.len()),
            ));
        }
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            if r >= m {
                return Err(Error::Index {
                    what: "select_rows row",
                    index: r,
                    len: m,
                });
            }
            out.extend_from_slice(&x.data()[r * n..(r + 1) * n]);
        }
        let rg = self.rg(a);
        let t = Tensor::from_parts(vec![rows.len(), n], out);
        Ok(self.push(t, Op::SelectRows(a, rows), rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Graph(
                "backward already ran on this graph; reset_grads first".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph("loss handle does not belong to this graph".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;
        let root_shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::filled(&root_shape, T::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            g.ensure_finite("backward")?;
            let contributions = self.vjp(idx, &g)?;
            self.nodes[idx].grad = Some(g);
            for (input, grad) in contributions {
                let node = &mut self.nodes[input.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn vjp(&self, idx: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary(op, a, b) => {
                let (x, z) = (val(*a), val(*b));
                match op {
                    BinaryOp::Add => vec![(*a, g.clone()), (*b, g.clone())],
                    BinaryOp::Sub => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
                    BinaryOp::Mul => vec![(*a, g.zip_map(z, |p, q| p * q)), (*b, g.zip_map(x, |p, q| p * q))],
                    BinaryOp::Div => {
                        let ga = g.zip_map(z, |p, q| p / q);
                        let gb = g.zip_map(y, |p, q| -p * q).zip_map(z, |p, q| p / q);
                        vec![(*a, ga), (*b, gb)]
                    }
                }
            }
            Op::Affine(a, scale) => vec![(*a, g.map(|v| v * *scale))],
            Op::Unary(op, a) => {
                let x = val(*a);
                let ga = match op {
                    UnaryOp::Exp => g.zip_map(y, |p, q| p * q),
                    UnaryOp::Log => g.zip_map(x, |p, q| p / q),
                    UnaryOp::Neg => g.map(|v| -v),
                    UnaryOp::Square => g.zip_map(x, |p, q| T::lit(2.0) * p * q),
                };
                vec![(*a, ga)]
            }
            Op::MatMul(a, b) => {
                let (x, w) = (val(*a), val(*b));
                let (m, k, n) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                let mut res = Vec::with_capacity(2);
                if self.rg(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt(g.data(), w.data(), &mut ga, m, n, k);
                    res.push((*a, Tensor::from_parts(vec![m, k], ga)));
                }
                if self.rg(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn(x.data(), g.data(), &mut gb, m, k, n);
                    res.push((*b, Tensor::from_parts(vec![k, n], gb)));
                }
                res
            }
            Op::Transpose(a) => vec![(*a, g.transposed()?)],
            Op::AddBias(x, b) => {
                let (m, n) = g.rows_cols();
                let mut gb = vec![T::zero(); n];
                for r in 0..m {
                    for (acc, &v) in gb.iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                        *acc += v;
                    }
                }
                vec![(*x, g.clone()), (*b, Tensor::from_parts(vec![n], gb))]
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                vec![(*a, g.zip_map(x, |p, q| if q > T::zero() { p } else { p * *slope }))]
            }
            Op::Sigmoid(a) => vec![(*a, g.zip_map(y, |p, s| p * s * (T::one() - s)))],
            Op::SoftmaxRows(a) => {
                let (m, n) = y.rows_cols();
                let mut ga = vec![T::zero(); m * n];
                for r in 0..m {
                    let (yr, gr) = (&y.data()[r * n..(r + 1) * n], &g.data()[r * n..(r + 1) * n]);
                    let inner = crate::scalar::dot(yr, gr);
                    for j in 0..n {
                        ga[r * n + j] = yr[j] * (gr[j] - inner);
                    }
                }
                vec![(*a, Tensor::from_parts(y.shape().to_vec(), ga))]
            }
            Op::L2NormalizeRows(a) => {
                let x = val(*a);
                let (m, n) = y.rows_cols();
                let mut ga = vec![T::zero(); m * n];
                for r in 0..m {
                    let nrm = crate::scalar::norm(&x.data()[r * n..(r + 1) * n]);
                    let (yr, gr) = (&y.data()[r * n..(r + 1) * n], &g.data()[r * n..(r + 1) * n]);
                    let proj = crate::scalar::dot(yr, gr);
                    for j in 0..n {
                        ga[r * n + j] = (gr[j] - yr[j] * proj) / nrm;
                    }
                }
                vec![(*a, Tensor::from_parts(y.shape().to_vec(), ga))]
            }
            Op::Sum(a) => {
                let x = val(*a);
                vec![(*a, Tensor::filled(x.shape(), g.item()))]
            }
            Op::SumRows(a) => {
                let x = val(*a);
                let (m, n) = x.rows_cols();
                let mut ga = vec![T::zero(); m * n];
                for r in 0..m {
                    ga[r * n..(r + 1) * n].fill(g.data()[r]);
                }
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
            }
            Op::Reshape(a) => vec![(*a, g.reshaped(val(*a).shape())?)],
            Op::MaskedRowSum(a, cols) => {
                let x = val(*a);
                let (_, n) = x.rows_cols();
                let mut ga = vec![T::zero(); x.len()];
                for (r, set) in cols.iter().enumerate() {
                    for &c in set {
                        ga[r * n + c] += g.data()[r];
                    }
                }
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
            }
            Op::SelectRows(a, rows) => {
                let x = val(*a);
                let (_, n) = x.rows_cols();
                let mut ga = vec![T::zero(); x.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        ga[r * n + j] += g.data()[i * n + j];
                    }
                }
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
            }
        };
        Ok(out)
    }
}

/// Numerically stable softmax over one row.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
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
