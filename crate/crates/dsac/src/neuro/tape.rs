//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! The [`Tape`] is a flat record of operations in construction order, which is
//! already a topological order: building a node evaluates it eagerly, so the
//! forward pass happens during graph construction and `backward` is a single
//! reverse sweep. Gradients only flow to nodes reachable from a
//! grad-requiring leaf; everything else is skipped.
//!
//! The op set is intentionally small: dense-layer primitives, pointwise
//! nonlinearities, the broadcast/reshape plumbing needed to evaluate a batch
//! of quantile fractions per sample, and two special composites
//! ([`Tape::pairwise_diff`] and [`Tape::quantile_huber`]) that keep the
//! pairwise temporal-difference loss at O(batch * n * m) without
//! materializing intermediate triples.

use crate::error::{Error, Result};
use crate::neuro::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// Row-broadcast add: `[r,c] + [1,c]`.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// Elementwise minimum; gradient follows the smaller input (ties go left).
    Min(NodeId, NodeId),
    Neg(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Softplus(NodeId),
    Sqrt(NodeId),
    Clamp(NodeId, f64, f64),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    /// `[r,1] -> [r,c]`, replicating the single column.
    BroadcastCol(NodeId),
    /// `[r,c] -> [r*k,c]`, each row repeated `k` consecutive times.
    RepeatRows(NodeId, usize),
    ConcatCols(NodeId, NodeId),
    Reshape(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// `[r,c] -> [r,1]`, summing across each row.
    RowSum(NodeId),
    RowSoftmax(NodeId),
    RowCumSum(NodeId),
    /// `out[b, i*m + j] = y[b,i] - z[b,j]` for `y: [r,n]`, `z: [r,m]`.
    PairwiseDiff(NodeId, NodeId),
    /// Pointwise asymmetric Huber: `|tau - 1{d<0}| * L_k(d) / k`, with the
    /// fraction `tau` fixed per element.
    QuantileHuber { input: NodeId, taus: Tensor, kappa: f64 },
    /// Per-row normalization with learned gain/bias (both `[1,c]`).
    LayerNorm { input: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    needs_grad: bool,
}

/// Reverse-mode graph. Create one per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// ---------------------------------------------------------------------------
// free helpers shared by forward and backward passes
// ---------------------------------------------------------------------------

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    let n = b.cols();
    let mut out = Tensor::zeros(m, n);
    let av = a.data();
    let bv = b.data();
    let cv = out.data_mut();
    for i in 0..m {
        let crow = &mut cv[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = av[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &bv[kk * n..(kk + 1) * n];
            for (c, &b) in crow.iter_mut().zip(brow) {
                *c += aik * b;
            }
        }
    }
    out
}

/// `da += g * b^T` for `c = a * b`.
fn matmul_grad_a(g: &Tensor, b: &Tensor, da: &mut Tensor) {
    let (m, n) = g.shape();
    let k = b.rows();
    let gv = g.data();
    let bv = b.data();
    let dv = da.data_mut();
    for i in 0..m {
        let grow = &gv[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &bv[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (gg, bb) in grow.iter().zip(brow) {
                acc += gg * bb;
            }
            dv[i * k + kk] += acc;
        }
    }
}

/// `db += a^T * g` for `c = a * b`.
fn matmul_grad_b(a: &Tensor, g: &Tensor, db: &mut Tensor) {
    let (m, k) = a.shape();
    let n = g.cols();
    let av = a.data();
    let gv = g.data();
    let dv = db.data_mut();
    for i in 0..m {
        let grow = &gv[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = av[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let drow = &mut dv[kk * n..(kk + 1) * n];
            for (d, &gg) in drow.iter_mut().zip(grow) {
                *d += aik * gg;
            }
        }
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

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Asymmetric Huber quantile term and its derivative in the residual.
pub(crate) fn huber_quantile(delta: f64, tau: f64, kappa: f64) -> f64 {
    let weight = if delta < 0.0 { 1.0 - tau } else { tau };
    let a = delta.abs();
    let l = if a <= kappa { 0.5 * delta * delta } else { kappa * (a - 0.5 * kappa) };
    weight * l / kappa
}

pub(crate) fn huber_quantile_deriv(delta: f64, tau: f64, kappa: f64) -> f64 {
    let weight = if delta < 0.0 { 1.0 - tau } else { tau };
    weight * delta.clamp(-kappa, kappa) / kappa
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input: gradients never flow into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Differentiable input (parameter or reparameterized sample).
    pub fn leaf_grad(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last `backward` target w.r.t. node `id`, if that node
    /// participates in differentiation.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id].grad.as_ref()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, grad: None, needs_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn check(&self, id: NodeId, what: &str) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::State(format!("{what}: node {id} does not exist")));
        }
        Ok(())
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<(usize, usize)> {
        self.check(a, name)?;
        self.check(b, name)?;
        let sa = self.nodes[a].value.shape();
        let sb = self.nodes[b].value.shape();
        if sa != sb {
            return Err(Error::Shape(format!(
                "{name}: node {a} is {}x{} but node {b} is {}x{}",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    // -- op constructors (forward runs here) --------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (m, ka) = self.nodes[a].value.shape();
        let (kb, _n) = self.nodes[b].value.shape();
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul: node {a} has {ka} cols but node {b} has {kb} rows"
            )));
        }
        let _ = m;
        let value = matmul(&self.nodes[a].value, &self.nodes[b].value);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), value, ng))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(x, "add_bias")?;
        self.check(bias, "add_bias")?;
        let (r, c) = self.nodes[x].value.shape();
        let bs = self.nodes[bias].value.shape();
        if bs != (1, c) {
            return Err(Error::Shape(format!(
                "add_bias: node {bias} is {}x{}, expected 1x{c}",
                bs.0, bs.1
            )));
        }
        let mut value = self.nodes[x].value.clone();
        let bv = self.nodes[bias].value.data().to_vec();
        for i in 0..r {
            for (v, b) in value.data_mut()[i * c..(i + 1) * c].iter_mut().zip(&bv) {
                *v += b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(Op::AddBias(x, bias), value, ng))
    }

    /// `matmul` followed by `add_bias`: the standard dense layer.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add")?;
        let value = self.zip(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub")?;
        let value = self.zip(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), value, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "mul")?;
        let value = self.zip(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), value, ng))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "div")?;
        let value = self.zip(a, b, |x, y| x / y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Div(a, b), value, ng))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "min")?;
        let value = self.zip(a, b, f64::min);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Min(a, b), value, ng))
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data).expect("zip preserves shape")
    }

    fn unary(&mut self, x: NodeId, name: &str, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        self.check(x, name)?;
        let v = &self.nodes[x].value;
        let data = v.data().iter().map(|&a| f(a)).collect();
        let value = Tensor::from_vec(v.rows(), v.cols(), data).expect("unary preserves shape");
        let ng = self.needs(x);
        Ok(self.push(op, value, ng))
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "neg", Op::Neg(x), |a| -a)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "relu", Op::Relu(x), |a| a.max(0.0))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "sigmoid", Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "tanh", Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "exp", Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "ln", Op::Ln(x), f64::ln)
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "softplus", Op::Softplus(x), softplus)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "sqrt", Op::Sqrt(x), f64::sqrt)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo < hi) {
            return Err(Error::Config(format!("clamp: empty interval [{lo}, {hi}]")));
        }
        self.unary(x, "clamp", Op::Clamp(x, lo, hi), |a| a.clamp(lo, hi))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(x, "scale", Op::Scale(x, c), |a| a * c)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(x, "add_scalar", Op::AddScalar(x), |a| a + c)
    }

    pub fn broadcast_col(&mut self, x: NodeId, cols: usize) -> Result<NodeId> {
        self.check(x, "broadcast_col")?;
        let v = &self.nodes[x].value;
        if v.cols() != 1 {
            return Err(Error::Shape(format!(
                "broadcast_col: node {x} is {}x{}, expected a column",
                v.rows(),
                v.cols()
            )));
        }
        let value = Tensor::from_fn(v.rows(), cols, |i, _| v.get(i, 0));
        let ng = self.needs(x);
        Ok(self.push(Op::BroadcastCol(x), value, ng))
    }

    pub fn repeat_rows(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        self.check(x, "repeat_rows")?;
        if k == 0 {
            return Err(Error::Config("repeat_rows: k must be positive".into()));
        }
        let v = &self.nodes[x].value;
        let (r, c) = v.shape();
        let mut data = Vec::with_capacity(r * k * c);
        for i in 0..r {
            for _ in 0..k {
                data.extend_from_slice(v.row_slice(i));
            }
        }
        let value = Tensor::from_vec(r * k, c, data).expect("repeat_rows sized buffer");
        let ng = self.needs(x);
        Ok(self.push(Op::RepeatRows(x, k), value, ng))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "concat_cols")?;
        self.check(b, "concat_cols")?;
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        if va.rows() != vb.rows() {
            return Err(Error::Shape(format!(
                "concat_cols: {} rows vs {} rows",
                va.rows(),
                vb.rows()
            )));
        }
        let (r, ca) = va.shape();
        let cb = vb.cols();
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(va.row_slice(i));
            data.extend_from_slice(vb.row_slice(i));
        }
        let value = Tensor::from_vec(r, ca + cb, data).expect("concat sized buffer");
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols(a, b), value, ng))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.check(x, "reshape")?;
        let value = self.nodes[x].value.reshaped(rows, cols)?;
        let ng = self.needs(x);
        Ok(self.push(Op::Reshape(x), value, ng))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "sum_all")?;
        let s: f64 = self.nodes[x].value.data().iter().sum();
        let ng = self.needs(x);
        Ok(self.push(Op::SumAll(x), Tensor::scalar(s), ng))
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "mean_all")?;
        let v = &self.nodes[x].value;
        if v.is_empty() {
            return Err(Error::Shape(format!("mean_all: node {x} is empty")));
        }
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.needs(x);
        Ok(self.push(Op::MeanAll(x), Tensor::scalar(s), ng))
    }

    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "row_sum")?;
        let v = &self.nodes[x].value;
        let value = Tensor::from_fn(v.rows(), 1, |i, _| v.row_slice(i).iter().sum());
        let ng = self.needs(x);
        Ok(self.push(Op::RowSum(x), value, ng))
    }

    pub fn row_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "row_softmax")?;
        let v = &self.nodes[x].value;
        let (r, c) = v.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = v.row_slice(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&a| (a - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / z));
        }
        let value = Tensor::from_vec(r, c, data).expect("softmax sized buffer");
        let ng = self.needs(x);
        Ok(self.push(Op::RowSoftmax(x), value, ng))
    }

    pub fn row_cumsum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "row_cumsum")?;
        let v = &self.nodes[x].value;
        let (r, c) = v.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let mut acc = 0.0;
            for &a in v.row_slice(i) {
                acc += a;
                data.push(acc);
            }
        }
        let value = Tensor::from_vec(r, c, data).expect("cumsum sized buffer");
        let ng = self.needs(x);
        Ok(self.push(Op::RowCumSum(x), value, ng))
    }

    pub fn pairwise_diff(&mut self, y: NodeId, z: NodeId) -> Result<NodeId> {
        self.check(y, "pairwise_diff")?;
        self.check(z, "pairwise_diff")?;
        let vy = &self.nodes[y].value;
        let vz = &self.nodes[z].value;
        if vy.rows() != vz.rows() {
            return Err(Error::Shape(format!(
                "pairwise_diff: {} rows vs {} rows",
                vy.rows(),
                vz.rows()
            )));
        }
        let (r, n) = vy.shape();
        let m = vz.cols();
        let mut data = Vec::with_capacity(r * n * m);
        for b in 0..r {
            let yr = vy.row_slice(b);
            let zr = vz.row_slice(b);
            for &yi in yr {
                for &zj in zr {
                    data.push(yi - zj);
                }
            }
        }
        let value = Tensor::from_vec(r, n * m, data).expect("pairwise sized buffer");
        let ng = self.needs(y) || self.needs(z);
        Ok(self.push(Op::PairwiseDiff(y, z), value, ng))
    }

    /// Pointwise `rho_tau^kappa` with a fixed (non-differentiated) fraction
    /// per element; `taus` must match the input shape.
    pub fn quantile_huber(&mut self, x: NodeId, taus: Tensor, kappa: f64) -> Result<NodeId> {
        self.check(x, "quantile_huber")?;
        if kappa <= 0.0 {
            return Err(Error::Config(format!("quantile_huber: kappa must be > 0, got {kappa}")));
        }
        let v = &self.nodes[x].value;
        if v.shape() != taus.shape() {
            return Err(Error::Shape(format!(
                "quantile_huber: input {}x{} vs taus {}x{}",
                v.rows(),
                v.cols(),
                taus.rows(),
                taus.cols()
            )));
        }
        let data = v
            .data()
            .iter()
            .zip(taus.data())
            .map(|(&d, &t)| huber_quantile(d, t, kappa))
            .collect();
        let value = Tensor::from_vec(v.rows(), v.cols(), data).expect("qh sized buffer");
        let ng = self.needs(x);
        Ok(self.push(Op::QuantileHuber { input: x, taus, kappa }, value, ng))
    }

    /// Per-row layer normalization with biased variance and an epsilon guard
    /// inside the square root: `y = gain * (x - mean) / sqrt(var + eps) + bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        self.check(x, "layer_norm")?;
        self.check(gain, "layer_norm")?;
        self.check(bias, "layer_norm")?;
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm: eps must be > 0, got {eps}")));
        }
        let v = &self.nodes[x].value;
        let (r, c) = v.shape();
        if c == 0 {
            return Err(Error::Shape(format!("layer_norm: node {x} has no columns")));
        }
        for (id, what) in [(gain, "gain"), (bias, "bias")] {
            let s = self.nodes[id].value.shape();
            if s != (1, c) {
                return Err(Error::Shape(format!(
                    "layer_norm: {what} is {}x{}, expected 1x{c}",
                    s.0, s.1
                )));
            }
        }
        let gv = self.nodes[gain].value.data().to_vec();
        let bv = self.nodes[bias].value.data().to_vec();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = v.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                data.push((row[j] - mean) * inv * gv[j] + bv[j]);
            }
        }
        let value = Tensor::from_vec(r, c, data).expect("layer_norm sized buffer");
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Op::LayerNorm { input: x, gain, bias, eps }, value, ng))
    }

    // -- backward ------------------------------------------------------------

    /// Reverse sweep from a scalar loss node. Resets previous gradients, so
    /// repeated calls are independent.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called on an empty graph".into()));
        }
        self.check(loss, "backward")?;
        if self.nodes[loss].value.shape() != (1, 1) {
            let (r, c) = self.nodes[loss].value.shape();
            return Err(Error::Shape(format!(
                "backward: loss node {loss} is {r}x{c}, expected a scalar"
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss].needs_grad {
            // Loss does not depend on any differentiable leaf; all gradients
            // are identically zero and there is nothing to propagate.
            return Ok(());
        }
        self.ensure_grad(loss);
        self.nodes[loss].grad.as_mut().expect("just allocated").set(0, 0, 1.0);

        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            self.propagate(id);
        }
        Ok(())
    }

    fn ensure_grad(&mut self, id: NodeId) {
        if self.nodes[id].grad.is_none() {
            let (r, c) = self.nodes[id].value.shape();
            self.nodes[id].grad = Some(Tensor::zeros(r, c));
        }
    }

    fn take_grad(&mut self, id: NodeId) -> Tensor {
        self.nodes[id].grad.clone().expect("caller checked grad presence")
    }

    fn add_to_grad(&mut self, id: NodeId, delta: &Tensor) {
        if !self.nodes[id].needs_grad {
            return;
        }
        self.ensure_grad(id);
        let g = self.nodes[id].grad.as_mut().expect("just ensured");
        for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
            *gv += dv;
        }
    }

    fn propagate(&mut self, id: NodeId) {
        let op = self.nodes[id].op.clone();
        let g = self.take_grad(id);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    self.ensure_grad(a);
                    let bval = self.nodes[b].value.clone();
                    let da = self.nodes[a].grad.as_mut().expect("ensured");
                    matmul_grad_a(&g, &bval, da);
                }
                if self.needs(b) {
                    self.ensure_grad(b);
                    let aval = self.nodes[a].value.clone();
                    let db = self.nodes[b].grad.as_mut().expect("ensured");
                    matmul_grad_b(&aval, &g, db);
                }
            }
            Op::AddBias(x, bias) => {
                self.add_to_grad(x, &g);
                if self.needs(bias) {
                    let c = g.cols();
                    let mut db = Tensor::zeros(1, c);
                    for i in 0..g.rows() {
                        for (d, &gg) in db.data_mut().iter_mut().zip(g.row_slice(i)) {
                            *d += gg;
                        }
                    }
                    self.add_to_grad(bias, &db);
                }
            }
            Op::Add(a, b) => {
                self.add_to_grad(a, &g);
                self.add_to_grad(b, &g);
            }
            Op::Sub(a, b) => {
                self.add_to_grad(a, &g);
                if self.needs(b) {
                    let neg = self.map_tensor(&g, |x| -x);
                    self.add_to_grad(b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let d = self.zip_tensors(&g, &self.nodes[b].value, |gg, bb| gg * bb);
                    self.add_to_grad(a, &d);
                }
                if self.needs(b) {
                    let d = self.zip_tensors(&g, &self.nodes[a].value, |gg, aa| gg * aa);
                    self.add_to_grad(b, &d);
                }
            }
            Op::Div(a, b) => {
                if self.needs(a) {
                    let d = self.zip_tensors(&g, &self.nodes[b].value, |gg, bb| gg / bb);
                    self.add_to_grad(a, &d);
                }
                if self.needs(b) {
                    let aval = &self.nodes[a].value;
                    let bval = &self.nodes[b].value;
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(aval.data().iter().zip(bval.data()))
                        .map(|(&gg, (&aa, &bb))| -gg * aa / (bb * bb))
                        .collect();
                    let d = Tensor::from_vec(g.rows(), g.cols(), data).expect("div grad shape");
                    self.add_to_grad(b, &d);
                }
            }
            Op::Min(a, b) => {
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                if self.needs(a) {
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(av.data().iter().zip(bv.data()))
                        .map(|(&gg, (&x, &y))| if x <= y { gg } else { 0.0 })
                        .collect();
                    let d = Tensor::from_vec(g.rows(), g.cols(), data).expect("min grad shape");
                    self.add_to_grad(a, &d);
                }
                if self.needs(b) {
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(av.data().iter().zip(bv.data()))
                        .map(|(&gg, (&x, &y))| if x <= y { 0.0 } else { gg })
                        .collect();
                    let d = Tensor::from_vec(g.rows(), g.cols(), data).expect("min grad shape");
                    self.add_to_grad(b, &d);
                }
            }
            Op::Neg(x) => {
                let d = self.map_tensor(&g, |v| -v);
                self.add_to_grad(x, &d);
            }
            Op::Relu(x) => {
                let d = self.zip_tensors(&g, &self.nodes[x].value, |gg, xx| {
                    if xx > 0.0 {
                        gg
                    } else {
                        0.0
                    }
                });
                self.add_to_grad(x, &d);
            }
            Op::Sigmoid(x) => {
                let d = self.zip_tensors(&g, &self.nodes[id].value, |gg, y| gg * y * (1.0 - y));
                self.add_to_grad(x, &d);
            }
            Op::Tanh(x) => {
                let d = self.zip_tensors(&g, &self.nodes[id].value, |gg, y| gg * (1.0 - y * y));
                self.add_to_grad(x, &d);
            }
            Op::Exp(x) => {
                let d = self.zip_tensors(&g, &self.nodes[id].value, |gg, y| gg * y);
                self.add_to_grad(x, &d);
            }
            Op::Ln(x) => {
                let d = self.zip_tensors(&g, &self.nodes[x].value, |gg, xx| gg / xx);
                self.add_to_grad(x, &d);
            }
            Op::Softplus(x) => {
                let d = self.zip_tensors(&g, &self.nodes[x].value, |gg, xx| gg * sigmoid(xx));
                self.add_to_grad(x, &d);
            }
            Op::Sqrt(x) => {
                let d = self.zip_tensors(&g, &self.nodes[id].value, |gg, y| gg * 0.5 / y);
                self.add_to_grad(x, &d);
            }
            Op::Clamp(x, lo, hi) => {
                let d = self.zip_tensors(&g, &self.nodes[x].value, |gg, xx| {
                    if xx > lo && xx < hi {
                        gg
                    } else {
                        0.0
                    }
                });
                self.add_to_grad(x, &d);
            }
            Op::Scale(x, c) => {
                let d = self.map_tensor(&g, |v| v * c);
                self.add_to_grad(x, &d);
            }
            Op::AddScalar(x) => {
                self.add_to_grad(x, &g);
            }
            Op::BroadcastCol(x) => {
                let d = Tensor::from_fn(g.rows(), 1, |i, _| g.row_slice(i).iter().sum());
                self.add_to_grad(x, &d);
            }
            Op::RepeatRows(x, k) => {
                let (r, c) = self.nodes[x].value.shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    for t in 0..k {
                        let src = g.row_slice(i * k + t);
                        let dst = &mut d.data_mut()[i * c..(i + 1) * c];
                        for (dd, &gg) in dst.iter_mut().zip(src) {
                            *dd += gg;
                        }
                    }
                }
                self.add_to_grad(x, &d);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a].value.cols();
                let cb = self.nodes[b].value.cols();
                let r = g.rows();
                if self.needs(a) {
                    let mut d = Tensor::zeros(r, ca);
                    for i in 0..r {
                        d.data_mut()[i * ca..(i + 1) * ca]
                            .copy_from_slice(&g.row_slice(i)[..ca]);
                    }
                    self.add_to_grad(a, &d);
                }
                if self.needs(b) {
                    let mut d = Tensor::zeros(r, cb);
                    for i in 0..r {
                        d.data_mut()[i * cb..(i + 1) * cb]
                            .copy_from_slice(&g.row_slice(i)[ca..]);
                    }
                    self.add_to_grad(b, &d);
                }
            }
            Op::Reshape(x) => {
                let (r, c) = self.nodes[x].value.shape();
                let d = g.reshaped(r, c).expect("reshape grad same size");
                self.add_to_grad(x, &d);
            }
            Op::SumAll(x) => {
                let s = g.get(0, 0);
                let (r, c) = self.nodes[x].value.shape();
                let d = Tensor::filled(r, c, s);
                self.add_to_grad(x, &d);
            }
            Op::MeanAll(x) => {
                let (r, c) = self.nodes[x].value.shape();
                let s = g.get(0, 0) / (r * c) as f64;
                let d = Tensor::filled(r, c, s);
                self.add_to_grad(x, &d);
            }
            Op::RowSum(x) => {
                let (r, c) = self.nodes[x].value.shape();
                let d = Tensor::from_fn(r, c, |i, _| g.get(i, 0));
                self.add_to_grad(x, &d);
            }
            Op::RowSoftmax(x) => {
                let y = &self.nodes[id].value;
                let (r, c) = y.shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let yr = y.row_slice(i);
                    let gr = g.row_slice(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        d.set(i, j, yr[j] * (gr[j] - dot));
                    }
                }
                self.add_to_grad(x, &d);
            }
            Op::RowCumSum(x) => {
                let (r, c) = self.nodes[x].value.shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let mut acc = 0.0;
                    for j in (0..c).rev() {
                        acc += g.get(i, j);
                        d.set(i, j, acc);
                    }
                }
                self.add_to_grad(x, &d);
            }
            Op::PairwiseDiff(yn, zn) => {
                let n = self.nodes[yn].value.cols();
                let m = self.nodes[zn].value.cols();
                let r = g.rows();
                if self.needs(yn) {
                    let mut d = Tensor::zeros(r, n);
                    for b in 0..r {
                        let gr = g.row_slice(b);
                        for i in 0..n {
                            let s: f64 = gr[i * m..(i + 1) * m].iter().sum();
                            d.set(b, i, s);
                        }
                    }
                    self.add_to_grad(yn, &d);
                }
                if self.needs(zn) {
                    let mut d = Tensor::zeros(r, m);
                    for b in 0..r {
                        let gr = g.row_slice(b);
                        for i in 0..n {
                            for j in 0..m {
                                d.set(b, j, d.get(b, j) - gr[i * m + j]);
                            }
                        }
                    }
                    self.add_to_grad(zn, &d);
                }
            }
            Op::QuantileHuber { input, taus, kappa } => {
                let xv = self.nodes[input].value.clone();
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(taus.data()))
                    .map(|(&gg, (&d, &t))| gg * huber_quantile_deriv(d, t, kappa))
                    .collect();
                let d = Tensor::from_vec(g.rows(), g.cols(), data).expect("qh grad shape");
                self.add_to_grad(input, &d);
            }
            Op::LayerNorm { input, gain, bias, eps } => {
                let xv = self.nodes[input].value.clone();
                let gainv = self.nodes[gain].value.clone();
                let (r, c) = xv.shape();
                let mut dx = Tensor::zeros(r, c);
                let mut dgain = Tensor::zeros(1, c);
                let mut dbias = Tensor::zeros(1, c);
                for i in 0..r {
                    let row = xv.row_slice(i);
                    let gr = g.row_slice(i);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    // xhat and the two row means the gradient needs
                    let xhat: Vec<f64> = row.iter().map(|&a| (a - mean) * inv).collect();
                    let ghat: Vec<f64> =
                        gr.iter().zip(gainv.data()).map(|(&gg, &ga)| gg * ga).collect();
                    let mg = ghat.iter().sum::<f64>() / c as f64;
                    let mgx = ghat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx.set(i, j, (ghat[j] - mg - xhat[j] * mgx) * inv);
                        dgain.set(0, j, dgain.get(0, j) + gr[j] * xhat[j]);
                        dbias.set(0, j, dbias.get(0, j) + gr[j]);
                    }
                }
                self.add_to_grad(input, &dx);
                self.add_to_grad(gain, &dgain);
                self.add_to_grad(bias, &dbias);
            }
        }
    }

    fn map_tensor(&self, t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
        let data = t.data().iter().map(|&x| f(x)).collect();
        Tensor::from_vec(t.rows(), t.cols(), data).expect("map preserves shape")
    }

    fn zip_tensors(&self, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(a.rows(), a.cols(), data).expect("zip preserves shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // -- forward examples ----------------------------------------------------

    #[test]
    fn identity_graph_passes_values_through() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        assert_eq!(tape.value(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_with_zero_parameters_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[3.0, -1.5, 2.0]));
        let w = tape.leaf(Tensor::zeros(3, 4));
        let b = tape.leaf(Tensor::zeros(1, 4));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item().unwrap(), 0.5);
    }

    #[test]
    fn forward_is_pure() {
        let build = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::row(&[0.3, -0.7, 1.1]));
            let w = tape.leaf(Tensor::from_vec(3, 2, vec![0.1, -0.2, 0.4, 0.9, -1.3, 0.5]).unwrap());
            let b = tape.leaf(Tensor::row(&[0.05, -0.02]));
            let h = tape.dense(x, w, b).unwrap();
            let a = tape.tanh(h).unwrap();
            let s = tape.sum_all(a).unwrap();
            tape.value(s).item().unwrap()
        };
        // bit-identical across rebuilds
        assert_eq!(build().to_bits(), build().to_bits());
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("node 0") || msg.contains("node 1"), "got: {msg}");
    }

    // -- backward examples ---------------------------------------------------

    #[test]
    fn gradient_of_identity_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf_grad(Tensor::scalar(4.2));
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn gradient_of_weighted_sum_is_the_input() {
        let mut tape = Tape::new();
        let w = tape.leaf_grad(Tensor::row(&[0.5, -2.0, 3.0]));
        let x = tape.leaf(Tensor::row(&[1.0, 2.0, -4.0]));
        let p = tape.mul(w, x).unwrap();
        let loss = tape.sum_all(p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 2.0, -4.0]);
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.leaf_grad(Tensor::scalar(1.0));
        let unused = tape.leaf_grad(Tensor::scalar(5.0));
        let loss = tape.scale(used, 2.0).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(unused).is_none() || tape.grad(unused).unwrap().item().unwrap() == 0.0);
    }

    #[test]
    fn backward_needs_nodes_and_a_scalar() {
        let mut tape = Tape::new();
        assert!(matches!(tape.backward(0), Err(Error::State(_))));
        let x = tape.leaf_grad(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    // -- finite-difference oracle over every op -------------------------------

    type Builder<'a> = dyn Fn(&mut Tape, &[NodeId]) -> NodeId + 'a;

    /// Max normalized error between the tape gradient and central finite
    /// differences of the scalar built by `build` from differentiable leaves.
    fn fd_check(inputs: &[Tensor], build: &Builder<'_>) -> f64 {
        let eval = |tensors: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf_grad(t.clone())).collect();
            let loss = build(&mut tape, &ids);
            tape.value(loss).item().unwrap()
        };
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf_grad(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        tape.backward(loss).unwrap();

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (which, input) in inputs.iter().enumerate() {
            let analytic = tape
                .grad(ids[which])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
            for idx in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[which].data_mut()[idx] += h;
                let mut minus = inputs.to_vec();
                minus[which].data_mut()[idx] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let ad = analytic.data()[idx];
                let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
                worst = worst.max(err);
            }
        }
        worst
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.gen_range(-2.0..2.0))
    }

    /// Resample entries until `keep` holds; used to stay away from the kinks
    /// of piecewise ops where finite differences are meaningless.
    fn rand_tensor_where(
        rng: &mut ChaCha8Rng,
        r: usize,
        c: usize,
        keep: impl Fn(f64) -> bool,
    ) -> Tensor {
        Tensor::from_fn(r, c, |_, _| loop {
            let x = rng.gen_range(-2.0..2.0);
            if keep(x) {
                return x;
            }
        })
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let tol = 1e-4;
        for seed in 0..100u64 {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            macro_rules! run {
                ($name:expr, $inputs:expr, $build:expr $(,)?) => {{
                    let err = fd_check($inputs, $build);
                    assert!(err < tol, "op {} seed {seed}: fd error {err}", $name);
                }};
            }

            let a = rand_tensor(rng, 3, 4);
            let b = rand_tensor(rng, 3, 4);
            run!("add", &[a.clone(), b.clone()], &|t, ids| {
                let y = t.add(ids[0], ids[1]).unwrap();
                t.sum_all(y).unwrap()
            });
            run!("sub", &[a.clone(), b.clone()], &|t, ids| {
                let y = t.sub(ids[0], ids[1]).unwrap();
                t.sum_all(y).unwrap()
            });
            run!("mul", &[a.clone(), b.clone()], &|t, ids| {
                let y = t.mul(ids[0], ids[1]).unwrap();
                t.sum_all(y).unwrap()
            });
            let bdiv = rand_tensor_where(rng, 3, 4, |x| x.abs() > 0.5);
            run!("div", &[a.clone(), bdiv], &|t, ids| {
                let y = t.div(ids[0], ids[1]).unwrap();
                t.sum_all(y).unwrap()
            });
            // keep the two arguments separated so min has a strict winner
            let bmin = Tensor::from_fn(3, 4, |i, j| a.get(i, j) + if (i + j) % 2 == 0 { 0.3 } else { -0.3 });
            run!("min", &[a.clone(), bmin], &|t, ids| {
                let y = t.min(ids[0], ids[1]).unwrap();
                t.sum_all(y).unwrap()
            });

            let m1 = rand_tensor(rng, 2, 3);
            let m2 = rand_tensor(rng, 3, 4);
            run!("matmul", &[m1.clone(), m2.clone()], &|t, ids| {
                let y = t.matmul(ids[0], ids[1]).unwrap();
                let s = t.tanh(y).unwrap();
                t.sum_all(s).unwrap()
            });
            let bias = rand_tensor(rng, 1, 4);
            run!("add_bias", &[rand_tensor(rng, 3, 4), bias], &|t, ids| {
                let y = t.add_bias(ids[0], ids[1]).unwrap();
                let s = t.sigmoid(y).unwrap();
                t.sum_all(s).unwrap()
            });

            for (name, f) in [
                ("neg", &(|t: &mut Tape, x| t.neg(x)) as &dyn Fn(&mut Tape, NodeId) -> Result<NodeId>),
                ("sigmoid", &|t: &mut Tape, x| t.sigmoid(x)),
                ("tanh", &|t: &mut Tape, x| t.tanh(x)),
                ("exp", &|t: &mut Tape, x| t.exp(x)),
                ("softplus", &|t: &mut Tape, x| t.softplus(x)),
            ] {
                let x = rand_tensor(rng, 2, 5);
                run!(name, &[x], &|t, ids| {
                    let y = f(t, ids[0]).unwrap();
                    t.sum_all(y).unwrap()
                });
            }
            let xr = rand_tensor_where(rng, 2, 5, |x| x.abs() > 1e-2);
            run!("relu", &[xr], &|t, ids| {
                let y = t.relu(ids[0]).unwrap();
                t.sum_all(y).unwrap()
            });
            let xp = rand_tensor_where(rng, 2, 5, |x| x > 0.3);
            run!("ln", &[xp.clone()], &|t, ids| {
                let y = t.ln(ids[0]).unwrap();
                t.sum_all(y).unwrap()
            });
            run!("sqrt", &[xp], &|t, ids| {
                let y = t.sqrt(ids[0]).unwrap();
                t.sum_all(y).unwrap()
            });
            let xc = rand_tensor_where(rng, 2, 5, |x| (x.abs() - 0.5).abs() > 1e-2);
            run!("clamp", &[xc], &|t, ids| {
                let y = t.clamp(ids[0], -0.5, 0.5).unwrap();
                let s = t.exp(y).unwrap();
                t.sum_all(s).unwrap()
            });
            run!("scale+add_scalar", &[rand_tensor(rng, 2, 3)], &|t, ids| {
                let y = t.scale(ids[0], -1.7).unwrap();
                let z = t.add_scalar(y, 0.4).unwrap();
                let s = t.tanh(z).unwrap();
                t.sum_all(s).unwrap()
            });

            run!("broadcast_col", &[rand_tensor(rng, 4, 1), rand_tensor(rng, 4, 3)], &|t, ids| {
                let y = t.broadcast_col(ids[0], 3).unwrap();
                let p = t.mul(y, ids[1]).unwrap();
                t.sum_all(p).unwrap()
            });
            run!("repeat_rows", &[rand_tensor(rng, 2, 3), rand_tensor(rng, 6, 3)], &|t, ids| {
                let y = t.repeat_rows(ids[0], 3).unwrap();
                let p = t.mul(y, ids[1]).unwrap();
                let s = t.tanh(p).unwrap();
                t.sum_all(s).unwrap()
            });
            run!("concat_cols", &[rand_tensor(rng, 3, 2), rand_tensor(rng, 3, 3)], &|t, ids| {
                let y = t.concat_cols(ids[0], ids[1]).unwrap();
                let s = t.sigmoid(y).unwrap();
                t.sum_all(s).unwrap()
            });
            run!("reshape", &[rand_tensor(rng, 2, 6)], &|t, ids| {
                let y = t.reshape(ids[0], 4, 3).unwrap();
                let s = t.tanh(y).unwrap();
                t.sum_all(s).unwrap()
            });
            run!("mean_all", &[rand_tensor(rng, 3, 3)], &|t, ids| {
                let y = t.exp(ids[0]).unwrap();
                t.mean_all(y).unwrap()
            });
            run!("row_sum", &[rand_tensor(rng, 3, 4)], &|t, ids| {
                let y = t.row_sum(ids[0]).unwrap();
                let s = t.tanh(y).unwrap();
                t.sum_all(s).unwrap()
            });
            run!("row_softmax", &[rand_tensor(rng, 3, 4)], &|t, ids| {
                let y = t.row_softmax(ids[0]).unwrap();
                let w = t.exp(y).unwrap();
                t.sum_all(w).unwrap()
            });
            run!("row_cumsum", &[rand_tensor(rng, 3, 4)], &|t, ids| {
                let y = t.row_cumsum(ids[0]).unwrap();
                let w = t.tanh(y).unwrap();
                t.sum_all(w).unwrap()
            });
            run!("pairwise_diff", &[rand_tensor(rng, 2, 3), rand_tensor(rng, 2, 4)], &|t, ids| {
                let y = t.pairwise_diff(ids[0], ids[1]).unwrap();
                let s = t.tanh(y).unwrap();
                t.sum_all(s).unwrap()
            });

            let kappa = 0.7;
            let taus = Tensor::from_fn(2, 6, |_, _| rng.gen_range(0.05..0.95));
            let deltas = rand_tensor_where(rng, 2, 6, |x| x.abs() > 1e-2 && (x.abs() - kappa).abs() > 1e-2);
            let taus2 = taus.clone();
            run!("quantile_huber", &[deltas], &|t, ids| {
                let y = t.quantile_huber(ids[0], taus2.clone(), kappa).unwrap();
                t.sum_all(y).unwrap()
            });

            run!(
                "layer_norm",
                &[rand_tensor(rng, 3, 5), rand_tensor(rng, 1, 5), rand_tensor(rng, 1, 5)],
                &|t, ids| {
                    let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
                    let s = t.tanh(y).unwrap();
                    t.sum_all(s).unwrap()
                },
            );

            // the spec-level composite: a small two-layer network
            run!(
                "two_layer_mlp",
                &[
                    rand_tensor(rng, 4, 3),
                    rand_tensor(rng, 3, 5),
                    rand_tensor(rng, 1, 5),
                    rand_tensor(rng, 5, 2),
                    rand_tensor(rng, 1, 2),
                ],
                &|t, ids| {
                    let h = t.dense(ids[0], ids[1], ids[2]).unwrap();
                    let a = t.tanh(h).unwrap();
                    let o = t.dense(a, ids[3], ids[4]).unwrap();
                    let sq = t.mul(o, o).unwrap();
                    t.mean_all(sq).unwrap()
                },
            );
        }
    }

    // -- layer norm behavior ---------------------------------------------------

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(1, 8, 3.3));
        let gain = tape.leaf(Tensor::filled(1, 8, 1.0));
        let bias = tape.leaf(Tensor::zeros(1, 8));
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert!(v.abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn layer_norm_of_symmetric_pair_is_nearly_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[-1.0, 1.0]));
        let gain = tape.leaf(Tensor::filled(1, 2, 1.0));
        let bias = tape.leaf(Tensor::zeros(1, 2));
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        let out = tape.value(y).data().to_vec();
        assert!((out[0] + 1.0).abs() < 1e-4 && (out[1] - 1.0).abs() < 1e-4, "got {out:?}");
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let rng = &mut ChaCha8Rng::seed_from_u64(11);
        // generous spread so the epsilon guard is negligible relative to 1e-6
        let x = Tensor::from_fn(4, 64, |_, _| rng.gen_range(-20.0..20.0));
        let mut tape = Tape::new();
        let xn = tape.leaf(x);
        let gain = tape.leaf(Tensor::filled(1, 64, 1.0));
        let bias = tape.leaf(Tensor::zeros(1, 64));
        let y = tape.layer_norm(xn, gain, bias, 1e-5).unwrap();
        let v = tape.value(y);
        for i in 0..v.rows() {
            let row = v.row_slice(i);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-6, "row {i} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row {i} var {var}");
        }
    }
}
