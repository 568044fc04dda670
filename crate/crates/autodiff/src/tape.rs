//! Define-by-run expression tape.
//!
//! Every operation evaluates eagerly and records an [`ExprNode`]; node ids
//! increase monotonically, so the tape order is already a topological order
//! and the reverse pass is a single backwards sweep.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::{gemm, MatRef, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    SumAxis(usize, usize),
    Mean(usize),
    MaxConst(usize, f64),
    Clamp(usize, f64, f64),
    Abs(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Reciprocal(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Broadcast(usize),
    Diag(usize),
    MatPow {
        a: usize,
        /// A^0 .. A^(k-1)
        powers: Vec<Tensor>,
    },
    Reshape(usize),
    SliceRows(usize, usize),
    ConcatRows(Vec<usize>),
    ScatterSym(usize, usize),
    Block(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::Mean(..) => "mean",
            Op::MaxConst(..) => "max_const",
            Op::Clamp(..) => "clamp",
            Op::Abs(..) => "abs",
            Op::Sigmoid(..) => "sigmoid",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Square(..) => "square",
            Op::Reciprocal(..) => "reciprocal",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Broadcast(..) => "broadcast",
            Op::Diag(..) => "diag",
            Op::MatPow { .. } => "matrix_power",
            Op::Reshape(..) => "reshape",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::ScatterSym(..) => "scatter_sym",
            Op::Block(..) => "block",
        }
    }
}

/// One recorded operation together with its cached forward value.
#[derive(Debug)]
pub struct ExprNode {
    pub(crate) op: Op,
    pub(crate) value: Rc<Tensor>,
    pub(crate) requires_grad: bool,
}

impl ExprNode {
    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<ExprNode>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
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

    /// A differentiable leaf (parameter or input we want gradients for).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn node(&self, var: Var<'_>) -> Ref<'_, ExprNode> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id])
    }

    /// Value of an already evaluated expression.
    pub fn forward_eval(&self, root: Var<'_>) -> Tensor {
        (*root.value()).clone()
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat_rows: no inputs".into()))?;
        let cols = first.value().dims2("concat_rows")?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        let mut ids = Vec::with_capacity(parts.len());
        let mut requires = false;
        for p in parts {
            let v = p.value();
            let (r, c) = v.dims2("concat_rows")?;
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: first.shape(),
                    right: v.shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(v.data());
            ids.push(p.id);
            requires |= p.requires_grad();
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(ids), out, requires))
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(ExprNode {
            op,
            value: Rc::new(value),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse pass from a scalar-shaped `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros if the loss does not
    /// depend on it.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&var.shape()),
        }
    }

    pub fn get_ref(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.grads.get_mut(var.id).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&var.shape()),
        }
    }
}

fn acc<'g>(grads: &'g mut [Option<Tensor>], nodes: &[ExprNode], id: usize) -> &'g mut Tensor {
    grads[id].get_or_insert_with(|| Tensor::zeros(nodes[id].value.shape()))
}

fn acc_map(
    grads: &mut [Option<Tensor>],
    nodes: &[ExprNode],
    id: usize,
    g: &Tensor,
    f: impl Fn(usize, f64) -> f64,
) {
    if !nodes[id].requires_grad {
        return;
    }
    let target = acc(grads, nodes, id);
    for (k, (t, &gk)) in target.data_mut().iter_mut().zip(g.data()).enumerate() {
        *t += f(k, gk);
    }
}

fn backprop_node(
    nodes: &[ExprNode],
    node: &ExprNode,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
) -> Result<()> {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc_map(grads, nodes, *a, g, |_, x| x);
            acc_map(grads, nodes, *b, g, |_, x| x);
        }
        Op::Sub(a, b) => {
            acc_map(grads, nodes, *a, g, |_, x| x);
            acc_map(grads, nodes, *b, g, |_, x| -x);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            acc_map(grads, nodes, *a, g, |k, x| x * bv[k]);
            acc_map(grads, nodes, *b, g, |k, x| x * av[k]);
        }
        Op::Scale(a, c) => acc_map(grads, nodes, *a, g, |_, x| x * c),
        Op::AddScalar(a) => acc_map(grads, nodes, *a, g, |_, x| x),
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2("matmul")?;
            let n = val(*b).dims2("matmul")?.1;
            if nodes[*a].requires_grad {
                let bv = val(*b).data();
                let ga = acc(grads, nodes, *a);
                gemm(
                    m,
                    n,
                    k,
                    MatRef::new(g.data(), n, false),
                    MatRef::new(bv, n, true),
                    ga.data_mut(),
                    1.0,
                );
            }
            if nodes[*b].requires_grad {
                let av = val(*a).data();
                let gb = acc(grads, nodes, *b);
                gemm(
                    k,
                    m,
                    n,
                    MatRef::new(av, k, true),
                    MatRef::new(g.data(), n, false),
                    gb.data_mut(),
                    1.0,
                );
            }
        }
        Op::Transpose(a) => {
            let gt = g.transpose()?;
            acc_map(grads, nodes, *a, &gt, |_, x| x);
        }
        Op::Sum(a) => {
            let s = g.item();
            if nodes[*a].requires_grad {
                for t in acc(grads, nodes, *a).data_mut() {
                    *t += s;
                }
            }
        }
        Op::SumAxis(a, axis) => {
            if nodes[*a].requires_grad {
                let (r, c) = val(*a).dims2("sum_axis")?;
                let gd = g.data();
                let ga = acc(grads, nodes, *a).data_mut();
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += if *axis == 0 { gd[j] } else { gd[i] };
                    }
                }
            }
        }
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            let s = g.item() / n;
            if nodes[*a].requires_grad {
                for t in acc(grads, nodes, *a).data_mut() {
                    *t += s;
                }
            }
        }
        Op::MaxConst(a, c) => {
            let av = val(*a).data();
            acc_map(grads, nodes, *a, g, |k, x| if av[k] > *c { x } else { 0.0 });
        }
        Op::Clamp(a, lo, hi) => {
            let av = val(*a).data();
            acc_map(grads, nodes, *a, g, |k, x| {
                if av[k] > *lo && av[k] < *hi {
                    x
                } else {
                    0.0
                }
            });
        }
        Op::Abs(a) => {
            let av = val(*a).data();
            acc_map(grads, nodes, *a, g, |k, x| {
                if av[k] > 0.0 {
                    x
                } else if av[k] < 0.0 {
                    -x
                } else {
                    0.0
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            acc_map(grads, nodes, *a, g, |k, x| x * y[k] * (1.0 - y[k]));
        }
        Op::LeakyRelu(a, slope) => {
            let av = val(*a).data();
            acc_map(
                grads,
                nodes,
                *a,
                g,
                |k, x| if av[k] > 0.0 { x } else { x * slope },
            );
        }
        Op::Exp(a) => {
            let y = node.value.data();
            acc_map(grads, nodes, *a, g, |k, x| x * y[k]);
        }
        Op::Ln(a) => {
            let av = val(*a).data();
            acc_map(grads, nodes, *a, g, |k, x| x / av[k]);
        }
        Op::Square(a) => {
            let av = val(*a).data();
            acc_map(grads, nodes, *a, g, |k, x| 2.0 * av[k] * x);
        }
        Op::Reciprocal(a) => {
            let av = val(*a).data();
            acc_map(grads, nodes, *a, g, |k, x| -x / (av[k] * av[k]));
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (r, c) = xhat.dims2("layer_norm")?;
            let gd = g.data();
            let xh = xhat.data();
            if nodes[*bias].requires_grad {
                let gb = acc(grads, nodes, *bias).data_mut();
                for i in 0..r {
                    for j in 0..c {
                        gb[j] += gd[i * c + j];
                    }
                }
            }
            if nodes[*gain].requires_grad {
                let gg = acc(grads, nodes, *gain).data_mut();
                for i in 0..r {
                    for j in 0..c {
                        gg[j] += gd[i * c + j] * xh[i * c + j];
                    }
                }
            }
            if nodes[*x].requires_grad {
                let gain_v = val(*gain).data();
                let gx = acc(grads, nodes, *x).data_mut();
                let mut gh = vec![0.0; c];
                for i in 0..r {
                    let row = i * c;
                    let mut mean_gh = 0.0;
                    let mut mean_ghx = 0.0;
                    for j in 0..c {
                        gh[j] = gd[row + j] * gain_v[j];
                        mean_gh += gh[j];
                        mean_ghx += gh[j] * xh[row + j];
                    }
                    mean_gh /= c as f64;
                    mean_ghx /= c as f64;
                    for j in 0..c {
                        gx[row + j] += inv_std[i] * (gh[j] - mean_gh - xh[row + j] * mean_ghx);
                    }
                }
            }
        }
        Op::Broadcast(a) => {
            if nodes[*a].requires_grad {
                let (r0, c0) = val(*a).dims2("broadcast")?;
                let (r, c) = g.dims2("broadcast")?;
                let gd = g.data();
                let ga = acc(grads, nodes, *a).data_mut();
                for i in 0..r {
                    for j in 0..c {
                        let src = (if r0 == 1 { 0 } else { i }) * c0 + if c0 == 1 { 0 } else { j };
                        ga[src] += gd[i * c + j];
                    }
                }
            }
        }
        Op::Diag(a) => {
            if nodes[*a].requires_grad {
                let n = val(*a).dims2("diag")?.0;
                let gd = g.data();
                let ga = acc(grads, nodes, *a).data_mut();
                for i in 0..n {
                    ga[i * n + i] += gd[i];
                }
            }
        }
        Op::MatPow { a, powers } => {
            if nodes[*a].requires_grad {
                // d tr(G^T A^k) / dA = sum_j (A^j)^T G (A^(k-1-j))^T
                let k = powers.len();
                let n = val(*a).dims2("matrix_power")?.0;
                let mut tmp = vec![0.0; n * n];
                let ga = acc(grads, nodes, *a).data_mut();
                for j in 0..k {
                    let left = &powers[j];
                    let right = &powers[k - 1 - j];
                    gemm(
                        n,
                        n,
                        n,
                        MatRef::new(left.data(), n, true),
                        MatRef::new(g.data(), n, false),
                        &mut tmp,
                        0.0,
                    );
                    gemm(
                        n,
                        n,
                        n,
                        MatRef::new(&tmp, n, false),
                        MatRef::new(right.data(), n, true),
                        ga,
                        1.0,
                    );
                }
            }
        }
        Op::Reshape(a) => acc_map(grads, nodes, *a, g, |_, x| x),
        Op::SliceRows(a, start) => {
            if nodes[*a].requires_grad {
                let c = val(*a).dims2("slice_rows")?.1;
                let off = start * c;
                let ga = acc(grads, nodes, *a).data_mut();
                for (k, &x) in g.data().iter().enumerate() {
                    ga[off + k] += x;
                }
            }
        }
        Op::ConcatRows(ids) => {
            let mut off = 0;
            let gd = g.data();
            for &id in ids {
                let len = nodes[id].value.len();
                if nodes[id].requires_grad {
                    let ga = acc(grads, nodes, id).data_mut();
                    for (t, &x) in ga.iter_mut().zip(&gd[off..off + len]) {
                        *t += x;
                    }
                }
                off += len;
            }
        }
        Op::ScatterSym(a, n) => {
            if nodes[*a].requires_grad {
                let n = *n;
                let gd = g.data();
                let ga = acc(grads, nodes, *a).data_mut();
                let mut k = 0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        ga[k] += gd[i * n + j] + gd[j * n + i];
                        k += 1;
                    }
                }
            }
        }
        Op::Block(a) => {
            if nodes[*a].requires_grad {
                let (n, _) = g.dims2("block")?;
                let c = val(*a).dims2("block")?.1;
                let gd = g.data();
                let ga = acc(grads, nodes, *a).data_mut();
                for i in 0..n {
                    for j in 0..n {
                        ga[i * c + j] += gd[i * n + j];
                    }
                }
            }
        }
    }
    Ok(())
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(op, value, rg)
    }

    fn binary(self, other: Var<'t>, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(op, value, rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().zip_map(&other.value(), "add", |a, b| a + b)?;
        Ok(self.binary(other, Op::Add(self.id, other.id), v))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().zip_map(&other.value(), "sub", |a, b| a - b)?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), v))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().zip_map(&other.value(), "mul", |a, b| a * b)?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), v))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary(Op::AddScalar(self.id), v)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, Op::MatMul(self.id, other.id), v))
    }

    pub fn t(self) -> Result<Var<'t>> {
        let v = self.value().transpose()?;
        Ok(self.unary(Op::Transpose(self.id), v))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(Op::Sum(self.id), v)
    }

    /// Sum over `axis` of a matrix: axis 0 gives `1 x c`, axis 1 gives `r x 1`.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2("sum_axis")?;
        let d = x.data();
        let v = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += d[i * c + j];
                    }
                }
                Tensor::matrix(1, c, out)?
            }
            1 => Tensor::matrix(
                r,
                1,
                d.chunks(c.max(1)).map(|row| row.iter().sum()).collect(),
            )?,
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "sum_axis",
                    shape: x.shape().to_vec(),
                    reason: format!("axis {axis} out of range"),
                })
            }
        };
        Ok(self.unary(Op::SumAxis(self.id, axis), v))
    }

    pub fn mean(self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        self.unary(Op::Mean(self.id), v)
    }

    /// Elementwise `max(x, c)`; the kink takes subgradient 0.
    pub fn max_const(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x.max(c));
        self.unary(Op::MaxConst(self.id, c), v)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.unary(Op::Clamp(self.id, lo, hi), v)
    }

    pub fn abs(self) -> Var<'t> {
        let v = self.value().map(f64::abs);
        self.unary(Op::Abs(self.id), v)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.unary(Op::Sigmoid(self.id), v)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(Op::LeakyRelu(self.id, slope), v)
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    /// Natural log. Non-positive inputs produce `-inf`/NaN.
    pub fn ln(self) -> Var<'t> {
        let v = self.value().map(f64::ln);
        self.unary(Op::Ln(self.id), v)
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.unary(Op::Square(self.id), v)
    }

    pub fn reciprocal(self) -> Var<'t> {
        let v = self.value().map(|x| 1.0 / x);
        self.unary(Op::Reciprocal(self.id), v)
    }

    /// Per-row normalization followed by a learned `1 x c` gain and bias.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2("layer_norm")?;
        let gv = gain.value();
        let bv = bias.value();
        for p in [&gv, &bv] {
            if p.len() != c {
                return Err(mismatch("layer_norm", &x, p));
            }
        }
        let d = x.data();
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &d[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat: Tensor::matrix(r, c, xhat)?,
                inv_std,
            },
            Tensor::matrix(r, c, out)?,
            rg,
        ))
    }

    /// Expand a `1 x c`, `r x 1` or `1 x 1` matrix to `rows x cols`.
    pub fn broadcast(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r0, c0) = x.dims2("broadcast")?;
        if (r0 != 1 && r0 != rows) || (c0 != 1 && c0 != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                left: x.shape().to_vec(),
                right: vec![rows, cols],
            });
        }
        let d = x.data();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                out.push(d[(if r0 == 1 { 0 } else { i }) * c0 + if c0 == 1 { 0 } else { j }]);
            }
        }
        Ok(self.unary(Op::Broadcast(self.id), Tensor::matrix(rows, cols, out)?))
    }

    /// Diagonal of a square matrix as a `1 x n` row.
    pub fn diag(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2("diag")?;
        if r != c {
            return Err(TensorError::InvalidShape {
                op: "diag",
                shape: x.shape().to_vec(),
                reason: "matrix must be square".into(),
            });
        }
        let v = Tensor::row((0..r).map(|i| x.data()[i * r + i]).collect());
        Ok(self.unary(Op::Diag(self.id), v))
    }

    /// `A^k` for a square matrix by repeated multiplication, `k >= 1`.
    pub fn matrix_power(self, k: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2("matrix_power")?;
        if r != c || k == 0 {
            return Err(TensorError::InvalidShape {
                op: "matrix_power",
                shape: x.shape().to_vec(),
                reason: format!("need a square matrix and k >= 1 (k = {k})"),
            });
        }
        let mut powers = Vec::with_capacity(k);
        powers.push(Tensor::eye(r));
        let mut cur = (*x).clone();
        for _ in 1..k {
            let next = cur.matmul(&x)?;
            powers.push(std::mem::replace(&mut cur, next));
        }
        Ok(self.unary(Op::MatPow { a: self.id, powers }, cur))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshaped(shape)?;
        Ok(self.unary(Op::Reshape(self.id), v))
    }

    /// Rows `start .. start + len` of a matrix.
    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2("slice_rows")?;
        if start + len > r {
            return Err(TensorError::InvalidShape {
                op: "slice_rows",
                shape: x.shape().to_vec(),
                reason: format!("rows {start}..{} out of range", start + len),
            });
        }
        let v = Tensor::matrix(len, c, x.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.unary(Op::SliceRows(self.id, start), v))
    }

    /// Mirror a vector of `n(n-1)/2` strict-upper-triangle entries (row-major,
    /// `i < j`) into a symmetric `n x n` matrix with zero diagonal.
    pub fn scatter_sym(self, n: usize) -> Result<Var<'t>> {
        let x = self.value();
        if x.len() != n * n.saturating_sub(1) / 2 {
            return Err(TensorError::InvalidShape {
                op: "scatter_sym",
                shape: x.shape().to_vec(),
                reason: format!(
                    "need {} upper-triangle entries for n = {n}",
                    n * n.saturating_sub(1) / 2
                ),
            });
        }
        let d = x.data();
        let mut out = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                out[i * n + j] = d[k];
                out[j * n + i] = d[k];
                k += 1;
            }
        }
        Ok(self.unary(Op::ScatterSym(self.id, n), Tensor::matrix(n, n, out)?))
    }

    /// Leading `n x n` block of a matrix.
    pub fn block(self, n: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2("block")?;
        if n > r || n > c {
            return Err(TensorError::InvalidShape {
                op: "block",
                shape: x.shape().to_vec(),
                reason: format!("block size {n} too large"),
            });
        }
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            out.extend_from_slice(&x.data()[i * c..i * c + n]);
        }
        Ok(self.unary(Op::Block(self.id), Tensor::matrix(n, n, out)?))
    }

    /// Shorthand for `self.matmul(w)? + broadcast(b)`.
    pub fn affine(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let h = self.matmul(w)?;
        let (r, c) = h.value().dims2("affine")?;
        h.add(b.broadcast(r, c)?)
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        assert_eq!(tape.forward_eval(x.sigmoid()).item(), 0.5);
    }

    #[test]
    fn sum_of_vector() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        assert_eq!(x.sum().item(), 6.0);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = x.square();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
    }

    #[test]
    fn sigmoid_sum_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.0; 4]));
        let g = tape.backward(x.sigmoid().sum()).unwrap();
        assert_eq!(g.get(x).data(), &[0.25; 4]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let err = a.matmul(b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::row(vec![1.0, 1.0]));
        let g = tape.backward(x.square()).unwrap();
        assert_eq!(g.get(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let g = tape.backward(x.mul(c).unwrap()).unwrap();
        assert_eq!(g.get(x).item(), 5.0);
        assert!(g.get_ref(c).is_none());
    }

    #[test]
    fn reused_leaf_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = x.mul(x).unwrap().add(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).item(), 7.0);
    }

    #[test]
    fn scatter_sym_mirrors_upper_triangle() {
        let tape = Tape::new();
        let v = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        let m = v.scatter_sym(3).unwrap().value();
        assert_eq!(m.data(), &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn matrix_power_matches_repeated_matmul() {
        let tape = Tape::new();
        let a = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let x = tape.leaf(a.clone());
        let p = x.matrix_power(3).unwrap().value();
        let expect = a.matmul(&a).unwrap().matmul(&a).unwrap();
        assert_eq!(*p, expect);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let tape = Tape::new();
        let x = tape.leaf(
            Tensor::from_rows(&[vec![1.0, 2.0, 4.0, 9.0], vec![-3.0, 0.5, 0.0, 2.0]]).unwrap(),
        );
        let gain = tape.leaf(Tensor::row(vec![1.0; 4]));
        let bias = tape.leaf(Tensor::row(vec![0.0; 4]));
        let y = x.layer_norm(gain, bias, LAYER_NORM_EPS).unwrap().value();
        for row in y.data().chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }
}
