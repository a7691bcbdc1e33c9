use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::{Error, Result};

/// Dense row-major matrix; rows are batch elements.
pub type Tensor = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise primitives addressable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Silu,
    Softplus,
    Sqrt,
    Square,
    Neg,
}

impl Unary {
    pub const ALL: [Unary; 9] = [
        Unary::Exp,
        Unary::Ln,
        Unary::Tanh,
        Unary::Sigmoid,
        Unary::Silu,
        Unary::Softplus,
        Unary::Sqrt,
        Unary::Square,
        Unary::Neg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Silu => "silu",
            Unary::Softplus => "softplus",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Neg => "neg",
        }
    }

    pub fn from_name(name: &str) -> Option<Unary> {
        Unary::ALL.into_iter().find(|u| u.name() == name)
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Neg => -x,
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Unary::Softplus => sigmoid(x),
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Neg => -1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param { offset: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Powf(Var, f64),
    ClampMin(Var, f64),
    Unary(Unary, Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Softmax(Var),
    LogSumExp(Var),
    Cumsum(Var),
    Gather(Var, Rc<Vec<usize>>),
    Cols(Var, Rc<Vec<usize>>),
    Concat(Vec<Var>),
    Reshape(Var),
    Select(Rc<Vec<bool>>, Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Powf(..) => "powf",
            Op::ClampMin(..) => "clamp_min",
            Op::Unary(u, _) => u.name(),
            Op::MatMul(..) => "matmul",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumCols(_) => "sum_cols",
            Op::Softmax(_) => "softmax",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::Cumsum(_) => "cumsum",
            Op::Gather(..) => "gather",
            Op::Cols(..) => "select_cols",
            Op::Concat(_) => "concat",
            Op::Reshape(_) => "reshape",
            Op::Select(..) => "select",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A dynamic reverse-mode tape over dense matrices.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted. Parameters are read from a flat snapshot taken at
/// construction; [`Graph::param`] exposes a block of it as a matrix and
/// [`Graph::backward`] returns the gradient with respect to the whole
/// snapshot.
pub struct Graph {
    params: Vec<f64>,
    track: bool,
    nodes: Vec<Node>,
    first_nonfinite: Option<(usize, &'static str)>,
}

impl Graph {
    /// A tape that records gradients with respect to `params`.
    pub fn new(params: &[f64]) -> Self {
        Self {
            params: params.to_vec(),
            track: true,
            nodes: Vec::new(),
            first_nonfinite: None,
        }
    }

    /// A tape for plain evaluation: parameters are treated as constants.
    pub fn inference(params: &[f64]) -> Self {
        Self {
            track: false,
            ..Self::new(params)
        }
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.dim(), (1, 1), "scalar_value on non-scalar node");
        t[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// First node whose value contains NaN or an infinity.
    pub fn first_nonfinite(&self) -> Option<(usize, &'static str)> {
        self.first_nonfinite
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite {
            Some((node, op)) => Err(Error::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.first_nonfinite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_nonfinite = Some((id, op.name()));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(id)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value, false)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, c: f64) -> Var {
        self.input(Tensor::from_elem((rows, cols), c))
    }

    pub fn column(&mut self, values: &[f64]) -> Var {
        self.input(Tensor::from_shape_vec((values.len(), 1), values.to_vec()).expect("column"))
    }

    /// The `rows x cols` block of the parameter snapshot starting at `offset`.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Var {
        let n = rows * cols;
        assert!(offset + n <= self.params.len(), "param block out of range");
        let value = Tensor::from_shape_vec((rows, cols), self.params[offset..offset + n].to_vec())
            .expect("param shape");
        let track = self.track;
        self.push(Op::Param { offset }, value, track)
    }

    fn broadcast_pair(&self, op: &'static str, a: Var, b: Var) -> (usize, usize) {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let dim = |x: usize, y: usize| -> usize {
            if x == y || y == 1 {
                x
            } else if x == 1 {
                y
            } else {
                panic!("{op}: cannot broadcast {ra}x{ca} with {rb}x{cb}")
            }
        };
        (dim(ra, rb), dim(ca, cb))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let name = op.name();
        let shape = self.broadcast_pair(name, a, b);
        let av = self.value(a).broadcast(shape).expect("broadcast");
        let bv = self.value(b).broadcast(shape).expect("broadcast");
        let value = Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y));
        let rg = self.rg(a) || self.rg(b);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x * c);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), value, rg)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).mapv(|x| x.powf(p));
        let rg = self.rg(a);
        self.push(Op::Powf(a, p), value, rg)
    }

    /// `max(a, lo)`; the gradient is zero where the bound is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(lo));
        let rg = self.rg(a);
        self.push(Op::ClampMin(a, lo), value, rg)
    }

    pub fn unary(&mut self, u: Unary, a: Var) -> Var {
        let value = self.value(a).mapv(|x| u.eval(x));
        let rg = self.rg(a);
        self.push(Op::Unary(u, a), value, rg)
    }

    /// Elementwise primitive by registered name.
    pub fn apply(&mut self, name: &str, a: Var) -> Result<Var> {
        let u = Unary::from_name(name).ok_or_else(|| Error::UnregisteredPrimitive(name.to_string()))?;
        Ok(self.unary(u, a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(Unary::Ln, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(Unary::Silu, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ca, rb, "matmul: {ra}x{ca} by {rb}x{cb}");
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), value, rg)
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), value, rg)
    }

    /// Mean of all entries, as a `1 x 1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::from_elem((1, 1), t.sum() / t.len() as f64);
        let rg = self.rg(a);
        self.push(Op::Mean(a), value, rg)
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(Op::SumCols(a), value, rg)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let rg = self.rg(a);
        self.push(Op::Softmax(a), value, rg)
    }

    /// Row-wise log-sum-exp: `r x c -> r x 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = Tensor::zeros((t.nrows(), 1));
        for (i, row) in t.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            value[[i, 0]] = if m.is_finite() {
                m + row.fold(0.0, |acc, &x| acc + (x - m).exp()).ln()
            } else {
                m
            };
        }
        let rg = self.rg(a);
        self.push(Op::LogSumExp(a), value, rg)
    }

    /// Exclusive prefix sums with a leading zero column: `r x c -> r x (c+1)`.
    pub fn cumsum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dim();
        let mut value = Tensor::zeros((r, c + 1));
        for i in 0..r {
            let mut acc = 0.0;
            for j in 0..c {
                acc += t[[i, j]];
                value[[i, j + 1]] = acc;
            }
        }
        let rg = self.rg(a);
        self.push(Op::Cumsum(a), value, rg)
    }

    /// Picks column `idx[i]` from row `i`: `r x c -> r x 1`.
    ///
    /// The indices are data, not part of the differentiable path.
    pub fn gather(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let t = self.value(a);
        assert_eq!(idx.len(), t.nrows(), "gather: one index per row");
        let value = Tensor::from_shape_fn((t.nrows(), 1), |(i, _)| t[[i, idx[i]]]);
        let rg = self.rg(a);
        self.push(Op::Gather(a, idx), value, rg)
    }

    /// Selects (and possibly reorders or repeats) columns.
    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let t = self.value(a);
        let value = Tensor::from_shape_fn((t.nrows(), cols.len()), |(i, j)| t[[i, cols[j]]]);
        let rg = self.rg(a);
        self.push(Op::Cols(a, Rc::new(cols.to_vec())), value, rg)
    }

    /// Contiguous column range.
    pub fn col_range(&mut self, a: Var, start: usize, end: usize) -> Var {
        let cols: Vec<usize> = (start..end).collect();
        self.select_cols(a, &cols)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Tensor::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.nrows(), rows, "concat: row mismatch");
            value.slice_mut(s![.., at..at + t.ncols()]).assign(t);
            at += t.ncols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::Concat(parts.to_vec()), value, rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), rows * cols, "reshape: size mismatch");
        let value = Tensor::from_shape_vec((rows, cols), t.iter().copied().collect()).expect("reshape");
        let rg = self.rg(a);
        self.push(Op::Reshape(a), value, rg)
    }

    /// Elementwise `if mask { a } else { b }`; the mask is row-major over the shape.
    pub fn select(&mut self, mask: Rc<Vec<bool>>, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.dim(), tb.dim(), "select: shape mismatch");
        assert_eq!(mask.len(), ta.len(), "select: mask length");
        let cols = ta.ncols();
        let value = Tensor::from_shape_fn(ta.dim(), |(i, j)| {
            if mask[i * cols + j] {
                ta[[i, j]]
            } else {
                tb[[i, j]]
            }
        });
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Select(mask, a, b), value, rg)
    }

    /// Gradient of the scalar node `out` with respect to the parameter snapshot.
    pub fn backward(&self, out: Var) -> Result<Vec<f64>> {
        self.check_finite()?;
        if self.shape(out) != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("output must be 1x1, got {:?}", self.shape(out)),
            });
        }
        let mut pgrad = vec![0.0; self.params.len()];
        if !self.rg(out) {
            return Ok(pgrad);
        }
        let mut grads: Vec<Option<Tensor>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(Tensor::from_elem((1, 1), 1.0));

        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |v: Var, t: Tensor| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                let shape = self.nodes[v.0].value.dim();
                let t = reduce_to(t, shape);
                match &mut grads[v.0] {
                    Some(existing) => *existing += &t,
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (k, gv) in g.iter().enumerate() {
                        pgrad[offset + k] += gv;
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        acc(*a, &g * bv);
                    }
                    if self.rg(*b) {
                        acc(*b, &g * av);
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        acc(*a, &g / bv);
                    }
                    if self.rg(*b) {
                        let shape = g.dim();
                        let av = av.broadcast(shape).unwrap();
                        let bv = bv.broadcast(shape).unwrap();
                        let t = Zip::from(&g)
                            .and(&av)
                            .and(&bv)
                            .map_collect(|&g, &x, &y| -g * x / (y * y));
                        acc(*b, t);
                    }
                }
                Op::Scale(a, c) => acc(*a, g * *c),
                Op::AddScalar(a) => acc(*a, g),
                Op::Powf(a, p) => {
                    let t = Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| g * p * x.powf(p - 1.0));
                    acc(*a, t)
                }
                Op::ClampMin(a, lo) => {
                    let t = Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| if x > *lo { g } else { 0.0 });
                    acc(*a, t)
                }
                Op::Unary(u, a) => {
                    let t = Zip::from(&g)
                        .and(self.value(*a))
                        .and(&node.value)
                        .map_collect(|&g, &x, &y| g * u.deriv(x, y));
                    acc(*a, t)
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.rg(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Sum(a) => {
                    let gv = g[[0, 0]];
                    acc(*a, Tensor::from_elem(self.shape(*a), gv));
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let gv = g[[0, 0]] / (shape.0 * shape.1) as f64;
                    acc(*a, Tensor::from_elem(shape, gv));
                }
                Op::SumCols(a) => {
                    let shape = self.shape(*a);
                    acc(*a, g.broadcast(shape).unwrap().to_owned());
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut t = Tensor::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|j| g[[i, j]] * y[[i, j]]).sum();
                        for j in 0..y.ncols() {
                            t[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    acc(*a, t)
                }
                Op::LogSumExp(a) => {
                    let x = self.value(*a);
                    let t = Tensor::from_shape_fn(x.dim(), |(i, j)| {
                        g[[i, 0]] * (x[[i, j]] - node.value[[i, 0]]).exp()
                    });
                    acc(*a, t)
                }
                Op::Cumsum(a) => {
                    let (r, c) = self.shape(*a);
                    let mut t = Tensor::zeros((r, c));
                    for i in 0..r {
                        let mut run = 0.0;
                        for j in (0..c).rev() {
                            run += g[[i, j + 1]];
                            t[[i, j]] = run;
                        }
                    }
                    acc(*a, t)
                }
                Op::Gather(a, idx) => {
                    let mut t = Tensor::zeros(self.shape(*a));
                    for (i, &k) in idx.iter().enumerate() {
                        t[[i, k]] += g[[i, 0]];
                    }
                    acc(*a, t)
                }
                Op::Cols(a, cols) => {
                    let mut t = Tensor::zeros(self.shape(*a));
                    for (j, &c) in cols.iter().enumerate() {
                        let mut dst = t.column_mut(c);
                        dst += &g.column(j);
                    }
                    acc(*a, t)
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.rg(p) {
                            acc(p, g.slice(s![.., at..at + w]).to_owned());
                        }
                        at += w;
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a);
                    let t = Tensor::from_shape_vec(shape, g.iter().copied().collect()).unwrap();
                    acc(*a, t)
                }
                Op::Select(mask, a, b) => {
                    let cols = g.ncols();
                    let pick = |want: bool| {
                        Tensor::from_shape_fn(g.dim(), |(i, j)| {
                            if mask[i * cols + j] == want {
                                g[[i, j]]
                            } else {
                                0.0
                            }
                        })
                    };
                    if self.rg(*a) {
                        acc(*a, pick(true));
                    }
                    if self.rg(*b) {
                        acc(*b, pick(false));
                    }
                }
            }
        }
        Ok(pgrad)
    }
}

fn reduce_to(mut g: Tensor, shape: (usize, usize)) -> Tensor {
    if g.dim() == shape {
        return g;
    }
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}
