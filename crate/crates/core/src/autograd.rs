//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the nodes in reverse creation order and
//! accumulates gradients for every node that (transitively) depends on a
//! leaf created with `requires_grad = true`.
//!
//! Shapes are checked with `assert!`: a mismatch inside a graph is a bug in
//! the calling module, which validates user-facing shapes before building.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::params::ParamStore;

pub type Tensor = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    Ln(Var),
    SumAll(Var),
    MeanRows(Var),
    SumCols(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    NormalizeRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var, Option<Tensor>),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Which named parameters receive gradients.
#[derive(Clone, Debug, Default)]
pub enum GradPolicy {
    /// No parameter is differentiated (inference).
    #[default]
    None,
    /// Every parameter is differentiated.
    All,
    /// Only the listed names.
    Only(BTreeSet<String>),
}

impl GradPolicy {
    pub fn wants(&self, name: &str) -> bool {
        match self {
            GradPolicy::None => false,
            GradPolicy::All => true,
            GradPolicy::Only(set) => set.contains(name),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    policy: GradPolicy,
}

/// Gradients of a scalar output with respect to every differentiable node.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.raw_dim()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_policy(policy: GradPolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    pub fn policy(&self) -> &GradPolicy {
        &self.policy
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
        self.value(v).dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.dim(), (1, 1), "scalar() on non-scalar node");
        t[[0, 0]]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf holding `value`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    /// Leaf for the named parameter, created once per graph.
    ///
    /// Panics if `name` is missing from `store`; callers check presence with
    /// [`ParamStore::contains`] where a parameter is optional.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
            .clone();
        let rg = self.policy.wants(name);
        let v = self.input(value, rg);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Parameter leaves created so far, by name.
    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    /// Gradients of the parameter leaves that received one, by name.
    pub fn param_grads(&self, grads: &Grads) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(n, &v)| grads.get(v).map(|g| (n.clone(), g.clone())))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dims");
        let out = va.dot(vb);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().as_standard_layout().into_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let out = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let out = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `a (r×c) + row (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row bias must be 1×c");
        assert_eq!(va.ncols(), vr.ncols(), "add_row widths");
        let out = va + vr;
        let rg = self.rg(&[a, row]);
        self.push(out, Op::AddRow(a, row), rg)
    }

    /// `a (r×c) * col (r×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (va, vc) = (self.value(a), self.value(col));
        assert_eq!(vc.ncols(), 1, "mul_col factor must be r×1");
        assert_eq!(va.nrows(), vc.nrows(), "mul_col heights");
        let out = va * vc;
        let rg = self.rg(&[a, col]);
        self.push(out, Op::MulCol(a, col), rg)
    }

    /// Elementwise product with a constant (masks, one-hot targets).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        assert_eq!(self.shape(a), c.dim(), "mul_const shapes");
        let out = self.value(a) * &c;
        let rg = self.rg(&[a]);
        self.push(out, Op::MulConst(a, c), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        let rg = self.rg(&[a]);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        let rg = self.rg(&[a]);
        self.push(out, Op::Ln(a), rg)
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::SumAll(a), rg)
    }

    /// Column-wise mean over rows: r×c → 1×c.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows of empty tensor")
            .insert_axis(Axis(0));
        let rg = self.rg(&[a]);
        self.push(out, Op::MeanRows(a), rg)
    }

    /// Row sums: r×c → r×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[a]);
        self.push(out, Op::SumCols(a), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows widths");
        let rg = self.rg(parts);
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols heights");
        let rg = self.rg(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Scale every row to unit ℓ2 norm. Zero rows yield non-finite values.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|x| x / n);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::NormalizeRows(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let lse = logsumexp(row.iter().copied());
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Per-row `log Σ_j mask_ij · exp(a_ij)`: r×c → r×1. Without a mask every entry counts.
    pub fn logsumexp_rows(&mut self, a: Var, mask: Option<Tensor>) -> Var {
        let va = self.value(a);
        if let Some(m) = &mask {
            assert_eq!(m.dim(), va.dim(), "logsumexp mask shape");
        }
        let mut out = Tensor::zeros((va.nrows(), 1));
        for (i, row) in va.rows().into_iter().enumerate() {
            out[[i, 0]] = match &mask {
                None => logsumexp(row.iter().copied()),
                Some(m) => logsumexp(
                    row.iter()
                        .zip(m.row(i))
                        .filter(|(_, &k)| k != 0.0)
                        .map(|(&x, _)| x),
                ),
            };
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::LogSumExpRows(a, mask), rg)
    }

    /// Per-row layer normalization with learnable gain and bias (both 1×c).
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let c = vx.ncols();
        assert_eq!(self.shape(gain), (1, c), "layer_norm gain");
        assert_eq!(self.shape(bias), (1, c), "layer_norm bias");
        let mut xhat = vx.clone();
        let mut inv_std = Vec::with_capacity(vx.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / c as f64;
            row.mapv_inplace(|v| v - mean);
            let var = row.dot(&row) / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            out,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Gradients of the scalar node `out` with respect to every differentiable node.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.shape(out), (1, 1), "backward from non-scalar node");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::ones((1, 1)));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, d: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if wants(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().as_standard_layout().into_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(*a, g * val(*b));
                }
                if wants(*b) {
                    acc(*b, g * val(*a));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if wants(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(a, col) => {
                if wants(*a) {
                    acc(*a, g * val(*col));
                }
                if wants(*col) {
                    acc(*col, (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::MulConst(a, c) => acc(*a, g * c),
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(val(*a))
                    .for_each(|d, &x| *d = if x > 0.0 { *d } else { 0.0 });
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(val(*a))
                    .for_each(|d, &x| *d *= gelu_grad(x));
                acc(*a, d);
            }
            Op::Abs(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    *d *= if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                acc(*a, d);
            }
            Op::Ln(a) => acc(*a, g / val(*a)),
            Op::SumAll(a) => {
                let gs = g[[0, 0]];
                acc(*a, Tensor::from_elem(val(*a).raw_dim(), gs));
            }
            Op::MeanRows(a) => {
                let r = val(*a).nrows();
                let row = g / r as f64;
                let d = row
                    .broadcast(val(*a).raw_dim())
                    .expect("mean_rows broadcast")
                    .to_owned();
                acc(*a, d);
            }
            Op::SumCols(a) => {
                let d = g
                    .broadcast(val(*a).raw_dim())
                    .expect("sum_cols broadcast")
                    .to_owned();
                acc(*a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Tensor::zeros(val(*a).raw_dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let mut d = Tensor::zeros(val(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let r = val(p).nrows();
                    if wants(p) {
                        acc(p, g.slice(s![off..off + r, ..]).to_owned());
                    }
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = val(p).ncols();
                    if wants(p) {
                        acc(p, g.slice(s![.., off..off + c]).to_owned());
                    }
                    off += c;
                }
            }
            Op::NormalizeRows(a) => {
                let x = val(*a);
                let y = &node.value;
                let mut d = Tensor::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    let n = x.row(i).dot(&x.row(i)).sqrt();
                    let proj = y.row(i).dot(&g.row(i));
                    let mut dr = d.row_mut(i);
                    Zip::from(&mut dr)
                        .and(g.row(i))
                        .and(y.row(i))
                        .for_each(|d, &gi, &yi| *d = (gi - yi * proj) / n);
                }
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.raw_dim());
                for i in 0..y.nrows() {
                    let dot = y.row(i).dot(&g.row(i));
                    let mut dr = d.row_mut(i);
                    Zip::from(&mut dr)
                        .and(g.row(i))
                        .and(y.row(i))
                        .for_each(|d, &gi, &yi| *d = yi * (gi - dot));
                }
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.raw_dim());
                for i in 0..y.nrows() {
                    let gsum = g.row(i).sum();
                    let mut dr = d.row_mut(i);
                    Zip::from(&mut dr)
                        .and(g.row(i))
                        .and(y.row(i))
                        .for_each(|d, &gi, &yi| *d = gi - yi.exp() * gsum);
                }
                acc(*a, d);
            }
            Op::LogSumExpRows(a, mask) => {
                let x = val(*a);
                let lse = &node.value;
                let mut d = Tensor::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    let gi = g[[i, 0]];
                    let li = lse[[i, 0]];
                    for j in 0..x.ncols() {
                        let m = mask.as_ref().map_or(1.0, |m| m[[i, j]]);
                        if m != 0.0 {
                            d[[i, j]] = gi * (x[[i, j]] - li).exp();
                        }
                    }
                }
                acc(*a, d);
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if wants(*bias) {
                    acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if wants(*gain) {
                    acc(*gain, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if wants(*x) {
                    let gv = val(*gain);
                    let c = xhat.ncols() as f64;
                    let dxhat = g * gv;
                    let mut d = Tensor::zeros(xhat.raw_dim());
                    for (i, &is) in inv_std.iter().enumerate() {
                        let mean_d = dxhat.row(i).sum() / c;
                        let mean_dx = dxhat.row(i).dot(&xhat.row(i)) / c;
                        let mut dr = d.row_mut(i);
                        Zip::from(&mut dr)
                            .and(dxhat.row(i))
                            .and(xhat.row(i))
                            .for_each(|d, &dh, &xh| *d = is * (dh - mean_d - xh * mean_dx));
                    }
                    acc(*x, d);
                }
            }
        }
    }
}

pub(crate) fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_inputs, GradCheck};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        crate::params::normal(rng, r, c, 1.0)
    }

    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let report = check_inputs(&inputs, &f, GradCheck::default());
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn matmul_transpose_sub() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_t(&mut rng, 3, 4);
        let b = rand_t(&mut rng, 4, 2);
        let c = rand_t(&mut rng, 2, 3);
        check(vec![a, b, c], |g, v| {
            let ab = g.matmul(v[0], v[1]);
            let ct = g.transpose(v[2]);
            let d = g.sub(ab, ct);
            let e = g.mul(d, d);
            g.sum(e)
        });
    }

    #[test]
    fn broadcasts_and_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_t(&mut rng, 3, 4);
        let row = rand_t(&mut rng, 1, 4);
        let col = rand_t(&mut rng, 3, 1);
        check(vec![a, row, col], |g, v| {
            let x = g.add_row(v[0], v[1]);
            let y = g.mul_col(x, v[2]);
            let m = g.mean_rows(y);
            let sc = g.sum_cols(y);
            let m2 = g.mul(m, m);
            let s1 = g.sum(m2);
            let sc2 = g.mul(sc, sc);
            let s2 = g.sum(sc2);
            let t = g.add(s1, s2);
            g.scale(t, 0.5)
        });
    }

    #[test]
    fn slicing_and_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_t(&mut rng, 4, 5);
        let b = rand_t(&mut rng, 2, 5);
        check(vec![a, b], |g, v| {
            let top = g.slice_rows(v[0], 1, 2);
            let cat = g.concat_rows(&[top, v[1], v[0]]);
            let left = g.slice_cols(cat, 0, 2);
            let right = g.slice_cols(cat, 2, 3);
            let wide = g.concat_cols(&[right, left]);
            let w2 = g.mul(wide, wide);
            let c = g.mul_const(w2, Tensor::from_elem((8, 5), 0.3));
            g.sum(c)
        });
    }

    #[test]
    fn nonlinearities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_t(&mut rng, 3, 4);
        let pos = rand_t(&mut rng, 3, 4).mapv(|x| x.abs() + 0.5);
        check(vec![a, pos], |g, v| {
            let r = g.relu(v[0]);
            let ge = g.gelu(v[0]);
            let ab = g.abs(v[0]);
            let l = g.ln(v[1]);
            let x = g.add(r, ge);
            let y = g.mul(x, ab);
            let z = g.add(y, l);
            g.sum(z)
        });
    }

    #[test]
    fn row_normalizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_t(&mut rng, 3, 4);
        let w = rand_t(&mut rng, 3, 4);
        let gain = rand_t(&mut rng, 1, 4);
        let bias = rand_t(&mut rng, 1, 4);
        let mask = array![[1.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 1.0, 1.0]];
        check(vec![a, w, gain, bias], move |g, v| {
            let n = g.normalize_rows(v[0]);
            let sm = g.softmax_rows(v[0]);
            let lsm = g.log_softmax_rows(v[0]);
            let lse = g.logsumexp_rows(v[0], Some(mask.clone()));
            let lse_all = g.logsumexp_rows(v[0], None);
            let ln = g.layer_norm_rows(v[0], v[2], v[3]);
            let mut acc = g.add(n, sm);
            acc = g.add(acc, lsm);
            acc = g.add(acc, ln);
            let weighted = g.mul(acc, v[1]);
            let s = g.sum(weighted);
            let l1 = g.sum(lse);
            let l2 = g.sum(lse_all);
            let t = g.add(s, l1);
            g.add(t, l2)
        });
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let a = g.constant(array![[1000.0, 0.0, -1000.0], [0.1, 0.2, 0.3]]);
        let sm = g.softmax_rows(a);
        for row in g.value(sm).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0]]);
        let b = g.input(array![[3.0, 4.0]], true);
        let p = g.mul(a, b);
        let s = g.sum(p);
        let grads = g.backward(s);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap(), &array![[1.0, 2.0]]);
    }
}
