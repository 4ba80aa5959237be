//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every value is a row-major 2-D tensor. A [`Graph`] is an append-only
//! record of primitive applications; [`Graph::backward`] walks it in reverse
//! and [`Graph::replay`] re-executes it from the leaves.

use std::fmt;
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{NumericsError, Scalar};

/// Dense 2-D tensor. Vectors are `1 x n` rows or `n x 1` columns.
pub type Tensor<F> = Array2<F>;

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this module.
///
/// Implementations must be pure functions of their inputs so that replay
/// is bit-identical.
pub trait CustomOp<F: Scalar>: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<F>]) -> Result<Tensor<F>, NumericsError>;

    /// Gradients with respect to each input, `None` for inputs that receive none.
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        output: &Tensor<F>,
        grad: &Tensor<F>,
    ) -> Vec<Option<Tensor<F>>>;
}

#[derive(Debug, Clone)]
pub(crate) enum Op<F: Scalar> {
    Constant,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, F),
    AddScalar(Var, F),
    MulConst(Var, Arc<Tensor<F>>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var, Option<Arc<Tensor<F>>>),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    Pick(Var, Arc<Vec<Option<usize>>>),
    Sum(Var),
    Custom(Arc<dyn CustomOp<F>>, Vec<Var>),
}

impl<F: Scalar> Op<F> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Constant | Param => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulCol(a, b) => {
                vec![*a, *b]
            }
            Transpose(a)
            | Scale(a, _)
            | AddScalar(a, _)
            | MulConst(a, _)
            | Relu(a)
            | Sigmoid(a)
            | Tanh(a)
            | Softmax(a, _)
            | LogSoftmax(a)
            | SliceCols(a, _, _)
            | SliceRows(a, _, _)
            | GatherRows(a, _)
            | Pick(a, _)
            | Sum(a) => vec![*a],
            LayerNorm { x, gamma, beta } => vec![*x, *gamma, *beta],
            ConcatCols(vs) | ConcatRows(vs) | Custom(_, vs) => vs.clone(),
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Constant => "constant",
            Param => "param",
            MatMul(..) => "matmul",
            Transpose(..) => "transpose",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            AddRow(..) => "add_row",
            MulCol(..) => "mul_col",
            Scale(..) => "scale",
            AddScalar(..) => "add_scalar",
            MulConst(..) => "mul_const",
            Relu(..) => "relu",
            Sigmoid(..) => "sigmoid",
            Tanh(..) => "tanh",
            Softmax(..) => "softmax",
            LogSoftmax(..) => "log_softmax",
            LayerNorm { .. } => "layer_norm",
            ConcatCols(..) => "concat_cols",
            ConcatRows(..) => "concat_rows",
            SliceCols(..) => "slice_cols",
            SliceRows(..) => "slice_rows",
            GatherRows(..) => "gather_rows",
            Pick(..) => "pick",
            Sum(..) => "sum",
            Custom(op, _) => op.name(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Computation record: values of every node plus the op that produced it.
#[derive(Debug, Clone, Default)]
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

fn shape<F>(t: &Tensor<F>) -> (usize, usize) {
    t.dim()
}

fn mismatch<F>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: shape(a),
        right: shape(b),
    }
}

fn softmax_rows<F: Scalar>(x: ArrayView2<F>, mask: Option<&Tensor<F>>) -> Tensor<F> {
    let mut out = x.to_owned();
    if let Some(m) = mask {
        out += m;
    }
    for mut row in out.rows_mut() {
        let max = row
            .iter()
            .fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
        if max == F::neg_infinity() {
            row.fill(F::nan());
            continue;
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn log_softmax_rows<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row
            .iter()
            .fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn layer_norm_parts<F: Scalar>(x: &Tensor<F>) -> (Tensor<F>, Vec<F>) {
    let eps = F::of(LAYER_NORM_EPS);
    let n = F::of(x.ncols() as f64);
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let inv = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
        inv_std.push(inv);
    }
    (xhat, inv_std)
}

fn compute<'a, F: Scalar>(
    op: &Op<F>,
    get: impl Fn(Var) -> &'a Tensor<F>,
) -> Result<Tensor<F>, NumericsError> {
    use Op::*;
    let v = |var: &Var| get(*var);
    Ok(match op {
        Constant | Param => unreachable!("leaves carry their own value"),
        MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.ncols() != b.nrows() {
                return Err(mismatch("matmul", a, b));
            }
            a.dot(b)
        }
        Transpose(a) => v(a).t().to_owned(),
        Add(a, b) | Sub(a, b) | Mul(a, b) => {
            let (x, y) = (v(a), v(b));
            if x.dim() != y.dim() {
                return Err(mismatch(op.name(), x, y));
            }
            match op {
                Add(..) => x + y,
                Sub(..) => x - y,
                _ => x * y,
            }
        }
        AddRow(a, b) => {
            let (x, r) = (v(a), v(b));
            if r.nrows() != 1 || r.ncols() != x.ncols() {
                return Err(mismatch("add_row", x, r));
            }
            x + r
        }
        MulCol(a, b) => {
            let (x, c) = (v(a), v(b));
            if c.ncols() != 1 || c.nrows() != x.nrows() {
                return Err(mismatch("mul_col", x, c));
            }
            x * c
        }
        Scale(a, c) => v(a) * *c,
        AddScalar(a, c) => v(a).mapv(|x| x + *c),
        MulConst(a, m) => {
            let x = v(a);
            if x.dim() != m.dim() {
                return Err(mismatch("mul_const", x, m));
            }
            x * &**m
        }
        Relu(a) => v(a).mapv(|x| if x > F::zero() { x } else { F::zero() }),
        Sigmoid(a) => v(a).mapv(|x| F::one() / (F::one() + (-x).exp())),
        Tanh(a) => v(a).mapv(|x| x.tanh()),
        Softmax(a, mask) => {
            let x = v(a);
            if let Some(m) = mask {
                if m.dim() != x.dim() {
                    return Err(mismatch("softmax", x, m));
                }
            }
            softmax_rows(x.view(), mask.as_deref())
        }
        LogSoftmax(a) => log_softmax_rows(v(a)),
        LayerNorm { x, gamma, beta } => {
            let (x, g, b) = (v(x), v(gamma), v(beta));
            if g.dim() != (1, x.ncols()) {
                return Err(mismatch("layer_norm", x, g));
            }
            if b.dim() != (1, x.ncols()) {
                return Err(mismatch("layer_norm", x, b));
            }
            let (xhat, _) = layer_norm_parts(x);
            xhat * g + b
        }
        ConcatCols(vs) => {
            let views: Vec<_> = vs.iter().map(|x| v(x).view()).collect();
            for w in vs.windows(2) {
                if v(&w[0]).nrows() != v(&w[1]).nrows() {
                    return Err(mismatch("concat_cols", v(&w[0]), v(&w[1])));
                }
            }
            concatenate(Axis(1), &views).expect("row counts checked")
        }
        ConcatRows(vs) => {
            let views: Vec<_> = vs.iter().map(|x| v(x).view()).collect();
            for w in vs.windows(2) {
                if v(&w[0]).ncols() != v(&w[1]).ncols() {
                    return Err(mismatch("concat_rows", v(&w[0]), v(&w[1])));
                }
            }
            concatenate(Axis(0), &views).expect("column counts checked")
        }
        SliceCols(a, start, len) => {
            let x = v(a);
            if start + len > x.ncols() {
                return Err(NumericsError::OutOfRange {
                    op: "slice_cols",
                    shape: x.dim(),
                    index: start + len,
                });
            }
            x.slice(s![.., *start..start + len]).to_owned()
        }
        SliceRows(a, start, len) => {
            let x = v(a);
            if start + len > x.nrows() {
                return Err(NumericsError::OutOfRange {
                    op: "slice_rows",
                    shape: x.dim(),
                    index: start + len,
                });
            }
            x.slice(s![*start..start + len, ..]).to_owned()
        }
        GatherRows(a, idx) => {
            let x = v(a);
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.nrows()) {
                return Err(NumericsError::OutOfRange {
                    op: "gather_rows",
                    shape: x.dim(),
                    index: bad,
                });
            }
            x.select(Axis(0), idx)
        }
        Pick(a, cols) => {
            let x = v(a);
            if cols.len() != x.nrows() {
                return Err(NumericsError::OutOfRange {
                    op: "pick",
                    shape: x.dim(),
                    index: cols.len(),
                });
            }
            let mut out = Tensor::zeros((x.nrows(), 1));
            for (r, c) in cols.iter().enumerate() {
                if let Some(c) = *c {
                    if c >= x.ncols() {
                        return Err(NumericsError::OutOfRange {
                            op: "pick",
                            shape: x.dim(),
                            index: c,
                        });
                    }
                    out[[r, 0]] = x[[r, c]];
                }
            }
            out
        }
        Sum(a) => Tensor::from_elem((1, 1), v(a).sum()),
        Custom(op, vs) => {
            let inputs: Vec<&Tensor<F>> = vs.iter().map(v).collect();
            op.forward(&inputs)?
        }
    })
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, var: Var) -> F {
        self.nodes[var.0].value[[0, 0]]
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Param,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<F>) -> Result<Var, NumericsError> {
        let nodes = &self.nodes;
        let value = compute(&op, |v| &nodes[v.0].value)?;
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.push(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.push(Op::Mul(a, b))
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        self.push(Op::AddRow(a, row))
    }

    /// `a * col`, broadcasting an `m x 1` column over every column of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumericsError> {
        self.push(Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var, NumericsError> {
        self.push(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Result<Var, NumericsError> {
        self.push(Op::AddScalar(a, c))
    }

    /// Elementwise product with a fixed tensor.
    pub fn mul_const(&mut self, a: Var, c: Arc<Tensor<F>>) -> Result<Var, NumericsError> {
        self.push(Op::MulConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.push(Op::Tanh(a))
    }

    /// Row-wise softmax of `a + mask`.
    pub fn softmax(&mut self, a: Var, mask: Option<Arc<Tensor<F>>>) -> Result<Var, NumericsError> {
        self.push(Op::Softmax(a, mask))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.push(Op::LogSoftmax(a))
    }

    /// Row-wise normalization followed by the affine map `gamma, beta` (both `1 x n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        self.push(Op::LayerNorm { x, gamma, beta })
    }

    /// Inverted dropout. Identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var, NumericsError> {
        if p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let scale = F::of(1.0 / keep);
        let (r, c) = self.shape(a);
        let mask = Tensor::from_shape_fn((r, c), |_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                F::zero()
            }
        });
        self.mul_const(a, Arc::new(mask))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        self.push(Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        self.push(Op::SliceRows(a, start, len))
    }

    /// Row lookup; with an embedding table as `a` this is embedding lookup.
    pub fn gather_rows(&mut self, a: Var, rows: Arc<Vec<usize>>) -> Result<Var, NumericsError> {
        self.push(Op::GatherRows(a, rows))
    }

    /// One entry per row as an `m x 1` column; `None` rows yield zero.
    pub fn pick(&mut self, a: Var, cols: Arc<Vec<Option<usize>>>) -> Result<Var, NumericsError> {
        self.push(Op::Pick(a, cols))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.push(Op::Sum(a))
    }

    /// Row-wise `log(sum(exp(a)))` as an `m x 1` column.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let rows = self.shape(a).0;
        let first = Arc::new(vec![Some(0); rows]);
        let lsm = self.log_softmax(a)?;
        let x0 = self.pick(a, first.clone())?;
        let l0 = self.pick(lsm, first)?;
        self.sub(x0, l0)
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp<F>>, inputs: &[Var]) -> Result<Var, NumericsError> {
        self.push(Op::Custom(op, inputs.to_vec()))
    }

    /// Re-executes every non-leaf node from the stored leaves.
    pub fn replay(&self) -> Result<Vec<Tensor<F>>, NumericsError> {
        let mut values: Vec<Tensor<F>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Param => node.value.clone(),
                ref op => compute(op, |v| &values[v.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Stored forward values, in record order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.nodes.iter().map(|n| &n.value)
    }

    /// Reverse sweep from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::from_elem(self.nodes[root.0].value.dim(), F::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Param | Op::Constant) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.local_grads(node, &g);
            for (input, contribution) in node.op.inputs().into_iter().zip(contributions) {
                if let Some(c) = contribution {
                    if self.nodes[input.0].needs_grad {
                        accumulate(&mut grads[input.0], c);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn local_grads(&self, node: &Node<F>, g: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        use Op::*;
        let v = |var: &Var| &self.nodes[var.0].value;
        let y = &node.value;
        match &node.op {
            Constant | Param => vec![],
            MatMul(a, b) => {
                let ga = self.nodes[a.0].needs_grad.then(|| g.dot(&v(b).t()));
                let gb = self.nodes[b.0].needs_grad.then(|| v(a).t().dot(g));
                vec![ga, gb]
            }
            Transpose(_) => vec![Some(g.t().to_owned())],
            Add(..) => vec![Some(g.clone()), Some(g.clone())],
            Sub(..) => vec![Some(g.clone()), Some(g.mapv(|x| -x))],
            Mul(a, b) => vec![Some(g * v(b)), Some(g * v(a))],
            AddRow(..) => vec![Some(g.clone()), Some(g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
            MulCol(a, c) => {
                let ga = g * v(c);
                let gc = (g * v(a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![Some(ga), Some(gc)]
            }
            Scale(_, c) => vec![Some(g * *c)],
            AddScalar(..) => vec![Some(g.clone())],
            MulConst(_, m) => vec![Some(g * &**m)],
            Relu(a) => {
                let mut out = g.clone();
                Zip::from(&mut out).and(v(a)).for_each(|o, &x| {
                    if x <= F::zero() {
                        *o = F::zero();
                    }
                });
                vec![Some(out)]
            }
            Sigmoid(_) => {
                let mut out = g.clone();
                Zip::from(&mut out)
                    .and(y)
                    .for_each(|o, &s| *o = *o * s * (F::one() - s));
                vec![Some(out)]
            }
            Tanh(_) => {
                let mut out = g.clone();
                Zip::from(&mut out)
                    .and(y)
                    .for_each(|o, &t| *o = *o * (F::one() - t * t));
                vec![Some(out)]
            }
            Softmax(..) => {
                let mut out = g * y;
                let dots = out.sum_axis(Axis(1));
                Zip::from(out.rows_mut())
                    .and(y.rows())
                    .and(&dots)
                    .for_each(|mut o, yr, &d| {
                        Zip::from(&mut o).and(&yr).for_each(|o, &p| *o -= p * d);
                    });
                vec![Some(out)]
            }
            LogSoftmax(_) => {
                let sums = g.sum_axis(Axis(1));
                let mut out = g.clone();
                Zip::from(out.rows_mut())
                    .and(y.rows())
                    .and(&sums)
                    .for_each(|mut o, yr, &sgrad| {
                        Zip::from(&mut o)
                            .and(&yr)
                            .for_each(|o, &lp| *o -= lp.exp() * sgrad);
                    });
                vec![Some(out)]
            }
            LayerNorm { x, gamma, .. } => {
                let (xhat, inv_std) = layer_norm_parts(v(x));
                let gamma = v(gamma);
                let ggamma = (g * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dxhat = g * gamma;
                let n = F::of(xhat.ncols() as f64);
                let mut gx = Tensor::zeros(xhat.dim());
                for (r, inv) in inv_std.iter().enumerate() {
                    let dr = dxhat.row(r);
                    let xr = xhat.row(r);
                    let mean_d = dr.sum() / n;
                    let mean_dx = dr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<F>() / n;
                    let mut out = gx.row_mut(r);
                    for c in 0..out.len() {
                        out[c] = *inv * (dr[c] - mean_d - xr[c] * mean_dx);
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            }
            ConcatCols(vs) => {
                let mut start = 0;
                vs.iter()
                    .map(|p| {
                        let w = v(p).ncols();
                        let part = g.slice(s![.., start..start + w]).to_owned();
                        start += w;
                        Some(part)
                    })
                    .collect()
            }
            ConcatRows(vs) => {
                let mut start = 0;
                vs.iter()
                    .map(|p| {
                        let h = v(p).nrows();
                        let part = g.slice(s![start..start + h, ..]).to_owned();
                        start += h;
                        Some(part)
                    })
                    .collect()
            }
            SliceCols(a, start, len) => {
                let mut out = Tensor::zeros(v(a).dim());
                out.slice_mut(s![.., *start..start + len]).assign(g);
                vec![Some(out)]
            }
            SliceRows(a, start, len) => {
                let mut out = Tensor::zeros(v(a).dim());
                out.slice_mut(s![*start..start + len, ..]).assign(g);
                vec![Some(out)]
            }
            GatherRows(a, idx) => {
                let mut out = Tensor::zeros(v(a).dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut dst = out.row_mut(i);
                    dst += &g.row(r);
                }
                vec![Some(out)]
            }
            Pick(a, cols) => {
                let mut out = Tensor::zeros(v(a).dim());
                for (r, c) in cols.iter().enumerate() {
                    if let Some(c) = *c {
                        out[[r, c]] = g[[r, 0]];
                    }
                }
                vec![Some(out)]
            }
            Sum(a) => vec![Some(Tensor::from_elem(v(a).dim(), g[[0, 0]]))],
            Custom(op, vs) => {
                let inputs: Vec<&Tensor<F>> = vs.iter().map(v).collect();
                op.backward(&inputs, y, g)
            }
        }
    }
}
