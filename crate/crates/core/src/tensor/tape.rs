//! Wengert-list reverse-mode autodiff.
//!
//! A [`Tape`] owns the value of every node it records. Ops append nodes in
//! execution order, so inputs always precede outputs and the backward sweep
//! is a single reverse pass over the list. A tape is built fresh for every
//! training step and dropped afterwards.
//!
//! Ops work on flattened row-major buffers; the model code keeps activations
//! as 2-D `(rows, features)` matrices and passes spatial extents explicitly
//! to the few ops that need them.

use super::kernels::{self, gemm};
use super::{check_softmax_args, numel, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, din: usize, dout: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: f32 },
    AddTiled { x: Var, t: Var, period: usize },
    LayerNorm { x: Var, g: Var, b: Var, d: usize, xhat: Vec<f32>, rstd: Vec<f32> },
    Gelu { x: Var },
    Softmax { x: Var, k: usize, tau: f32 },
    LnClamped { x: Var, eps: f32 },
    Sum { x: Var },
    MeanPool { x: Var, per_group: usize, d: usize },
    Attention { qkv: Var, batch: usize, tokens: usize, heads: usize, dim: usize, probs: Vec<f32> },
    DwConv3 { x: Var, w: Var, b: Var, geom: Grid },
    PatchMerge { x: Var, geom: Grid },
    Reshape { x: Var },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::Linear { x, w, b, .. } => std::iter::once(x).chain(Some(w)).chain(b).collect(),
            Op::Scale { x, .. }
            | Op::Gelu { x }
            | Op::Softmax { x, .. }
            | Op::LnClamped { x, .. }
            | Op::Sum { x }
            | Op::MeanPool { x, .. }
            | Op::PatchMerge { x, .. }
            | Op::Reshape { x } => vec![x],
            Op::AddTiled { x, t, .. } => vec![x, t],
            Op::LayerNorm { x, g, b, .. } | Op::DwConv3 { x, w: g, b, .. } => vec![x, g, b],
            Op::Attention { qkv, .. } => vec![qkv],
        }
    }
}

/// Spatial extents of a channels-last feature map stored as `(batch·h·w, c)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Grid {
    fn rows(&self) -> usize {
        self.batch * self.h * self.w
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f32>,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// Recorded computation. See the module docs.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape that never records backward information. Every node is a
    /// constant; use it for inference-only forward passes.
    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers `t` as an input. It is differentiable when `t.requires_grad()`
    /// and the tape records gradients.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let requires_grad = self.grad_enabled && t.requires_grad();
        self.nodes.push(Node {
            op: if requires_grad { Op::Leaf } else { Op::Constant },
            value: t.data().to_vec(),
            shape: t.shape().to_vec(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.raw_constant(t.data().to_vec(), t.shape().to_vec())
    }

    fn raw_constant(&mut self, value: Vec<f32>, shape: Vec<usize>) -> Var {
        self.nodes.push(Node { op: Op::Constant, value, shape, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Copies `x` into a new node that gradients never flow through.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let node = &self.nodes[x.0];
        self.raw_constant(node.value.clone(), node.shape.clone())
    }

    pub fn value(&self, x: Var) -> &[f32] {
        &self.nodes[x.0].value
    }

    pub fn shape(&self, x: Var) -> &[usize] {
        &self.nodes[x.0].shape
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    pub fn tensor(&self, x: Var) -> Tensor {
        let n = &self.nodes[x.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    pub fn item(&self, x: Var) -> Result<f32> {
        match self.value(x) {
            [v] => Ok(*v),
            _ => Err(Error::Contract(format!("item() on node of shape {:?}", self.shape(x)))),
        }
    }

    fn push(&mut self, op: Op, value: Vec<f32>, shape: Vec<usize>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let inputs = op.inputs();
        if cfg!(debug_assertions) && inputs.iter().all(|v| self.nodes[v.0].value.iter().all(|x| x.is_finite())) {
            assert!(value.iter().all(|x| x.is_finite()), "non-finite output from {op:?}-shaped op on finite inputs");
        }
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node { op, value, shape, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, x: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(x) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what} of shapes {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = kernels::matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (n, 1), &mut out, (n, 1), false);
        Ok(self.push(Op::MatMul { a, b, m, k, n }, out, vec![m, n]))
    }

    /// `x·wᵀ + b` with `w` stored as (out, in).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, din) = self.dims2(x, "linear input")?;
        let (dout, win) = self.dims2(w, "linear weight")?;
        if win != din {
            return Err(Error::Dimension(format!(
                "linear input {:?} against weight {:?}",
                self.shape(x),
                self.shape(w)
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::Dimension(format!("bias {:?} for weight {:?}", self.shape(b), self.shape(w))));
            }
        }
        let mut out = vec![0.0; rows * dout];
        if let Some(b) = b {
            let bias = self.value(b);
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
        }
        gemm(rows, din, dout, self.value(x), (din, 1), self.value(w), (1, din), &mut out, (dout, 1), b.is_some());
        Ok(self.push(Op::Linear { x, w, b, rows, din, dout }, out, vec![rows, dout]))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
        self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add { a, b }, out, shape))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Sub { a, b }, out, shape))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul { a, b }, out, shape))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let out = self.value(x).iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale { x, s }, out, shape)
    }

    /// Adds `t` (p×d) to every consecutive block of p rows of `x` (r×d).
    pub fn add_tiled(&mut self, x: Var, t: Var) -> Result<Var> {
        let (rows, d) = self.dims2(x, "add_tiled input")?;
        let (period, td) = self.dims2(t, "add_tiled table")?;
        if td != d || rows % period != 0 {
            return Err(Error::Dimension(format!(
                "cannot tile {:?} over {:?}",
                self.shape(t),
                self.shape(x)
            )));
        }
        let tv = self.value(t);
        let out = self
            .value(x)
            .chunks(period * d)
            .flat_map(|block| block.iter().zip(tv).map(|(a, b)| a + b))
            .collect();
        Ok(self.push(Op::AddTiled { x, t, period }, out, vec![rows, d]))
    }

    pub fn layernorm(&mut self, x: Var, g: Var, b: Var) -> Result<Var> {
        let (rows, d) = self.dims2(x, "layernorm input")?;
        if self.shape(g) != [d] || self.shape(b) != [d] {
            return Err(Error::Dimension(format!(
                "layernorm over {:?} with scale {:?} and shift {:?}",
                self.shape(x),
                self.shape(g),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; rows * d];
        let (xhat, rstd) = kernels::layernorm_rows(self.value(x), d, self.value(g), self.value(b), &mut out);
        Ok(self.push(Op::LayerNorm { x, g, b, d, xhat, rstd }, out, vec![rows, d]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Gelu { x }, out, shape)
    }

    /// Softmax of `x / tau` along the last axis.
    pub fn softmax_temperature(&mut self, x: Var, tau: f32) -> Result<Var> {
        let k = check_softmax_args(self.shape(x), tau)?;
        let mut out = self.value(x).to_vec();
        kernels::softmax_rows(&mut out, k, tau);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Softmax { x, k, tau }, out, shape))
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, eps: f32) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(eps).ln()).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::LnClamped { x, eps }, out, shape)
    }

    /// Sum of all elements, as a rank-0 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|&v| v as f64).sum::<f64>() as f32;
        self.push(Op::Sum { x }, vec![s], vec![])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f32)
    }

    /// Averages consecutive groups of `per_group` rows: (g·p, d) → (g, d).
    pub fn mean_pool(&mut self, x: Var, per_group: usize) -> Result<Var> {
        let (rows, d) = self.dims2(x, "mean_pool input")?;
        if per_group == 0 || rows % per_group != 0 {
            return Err(Error::Dimension(format!("cannot pool {rows} rows in groups of {per_group}")));
        }
        let groups = rows / per_group;
        let inv = 1.0 / per_group as f32;
        let mut out = vec![0.0; groups * d];
        for (gi, block) in self.value(x).chunks(per_group * d).enumerate() {
            let o = &mut out[gi * d..(gi + 1) * d];
            for row in block.chunks(d) {
                for (acc, v) in o.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            o.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.push(Op::MeanPool { x, per_group, d }, out, vec![groups, d]))
    }

    /// Multi-head scaled dot-product self-attention over a fused
    /// `(batch·tokens, 3·dim)` projection laid out as `[q | k | v]`.
    pub fn attention(&mut self, qkv: Var, batch: usize, tokens: usize, heads: usize) -> Result<Var> {
        let (rows, width) = self.dims2(qkv, "attention input")?;
        if rows != batch * tokens || width % 3 != 0 || heads == 0 || (width / 3) % heads != 0 {
            return Err(Error::Dimension(format!(
                "attention over {:?} with batch {batch}, tokens {tokens}, heads {heads}",
                self.shape(qkv)
            )));
        }
        let dim = width / 3;
        let dh = dim / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let t = tokens;
        let src = self.value(qkv);
        let mut probs = vec![0.0; batch * heads * t * t];
        let mut out = vec![0.0; rows * dim];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * t * width + h * dh;
                let p = &mut probs[(b * heads + h) * t * t..][..t * t];
                gemm(t, dh, t, &src[base..], (width, 1), &src[base + dim..], (1, width), p, (t, 1), false);
                p.iter_mut().for_each(|v| *v *= scale);
                kernels::softmax_rows(p, t, 1.0);
                gemm(t, t, dh, p, (t, 1), &src[base + 2 * dim..], (width, 1), &mut out[b * t * dim + h * dh..], (dim, 1), false);
            }
        }
        Ok(self.push(Op::Attention { qkv, batch, tokens, heads, dim, probs }, out, vec![rows, dim]))
    }

    /// Depthwise 3×3 convolution with zero padding 1 on a channels-last map.
    /// `w` is (c, 3, 3) and `b` is (c).
    pub fn dwconv3(&mut self, x: Var, w: Var, b: Var, geom: Grid) -> Result<Var> {
        let c = geom.c;
        if self.shape(x) != [geom.rows(), c] || self.shape(w) != [c, 3, 3] || self.shape(b) != [c] {
            return Err(Error::Dimension(format!(
                "dwconv3 of {:?} with kernel {:?} and bias {:?} for grid {geom:?}",
                self.shape(x),
                self.shape(w),
                self.shape(b)
            )));
        }
        let wt = taps_major(self.value(w), c);
        let xv = self.value(x);
        let bias = self.value(b);
        let mut out = vec![0.0; geom.rows() * c];
        for bi in 0..geom.batch {
            for i in 0..geom.h {
                for j in 0..geom.w {
                    let o = &mut out[((bi * geom.h + i) * geom.w + j) * c..][..c];
                    o.copy_from_slice(bias);
                    for_each_tap(geom, i, j, |tap, si, sj| {
                        let src = &xv[((bi * geom.h + si) * geom.w + sj) * c..][..c];
                        let k = &wt[tap * c..][..c];
                        for ((acc, &xs), &ks) in o.iter_mut().zip(src).zip(k) {
                            *acc += xs * ks;
                        }
                    });
                }
            }
        }
        Ok(self.push(Op::DwConv3 { x, w, b, geom }, out, vec![geom.rows(), c]))
    }

    /// Space-to-depth 2×2 merge: (batch·h·w, c) → (batch·h/2·w/2, 4c). The four
    /// neighbours are concatenated in order (0,0), (0,1), (1,0), (1,1).
    pub fn patch_merge(&mut self, x: Var, geom: Grid) -> Result<Var> {
        if self.shape(x) != [geom.rows(), geom.c] || geom.h % 2 != 0 || geom.w % 2 != 0 {
            return Err(Error::Dimension(format!("patch_merge of {:?} for grid {geom:?}", self.shape(x))));
        }
        let (h2, w2, c) = (geom.h / 2, geom.w / 2, geom.c);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(geom.rows() * c);
        for bi in 0..geom.batch {
            for i in 0..h2 {
                for j in 0..w2 {
                    for q in 0..4 {
                        let (si, sj) = (2 * i + q / 2, 2 * j + q % 2);
                        out.extend_from_slice(&xv[((bi * geom.h + si) * geom.w + sj) * c..][..c]);
                    }
                }
            }
        }
        Ok(self.push(Op::PatchMerge { x, geom }, out, vec![geom.batch * h2 * w2, 4 * c]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("cannot reshape {:?} into {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(Op::Reshape { x }, out, shape))
    }

    /// Reverse sweep from the scalar `loss`. Nodes that do not require a
    /// gradient, including everything behind [`Tape::stop_gradient`], get none.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", ln.shape)));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        if ln.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f32])| {
            let n = &self.nodes[v.0];
            if n.requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
                f(buf);
            }
        };
        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, m, k, n } => {
                acc(a, &mut |da| gemm(m, n, k, g, (n, 1), val(b), (1, n), da, (k, 1), true));
                acc(b, &mut |db| gemm(k, m, n, val(a), (1, k), g, (n, 1), db, (n, 1), true));
            }
            Op::Linear { x, w, b, rows, din, dout } => {
                acc(x, &mut |dx| gemm(rows, dout, din, g, (dout, 1), val(w), (din, 1), dx, (din, 1), true));
                acc(w, &mut |dw| gemm(dout, rows, din, g, (1, dout), val(x), (din, 1), dw, (din, 1), true));
                if let Some(b) = b {
                    acc(b, &mut |db| {
                        for row in g.chunks(dout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            Op::Sub { a, b } => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d -= v));
            }
            Op::Mul { a, b } => {
                acc(a, &mut |d| d.iter_mut().zip(g).zip(val(b)).for_each(|((d, gv), o)| *d += gv * o));
                acc(b, &mut |d| d.iter_mut().zip(g).zip(val(a)).for_each(|((d, gv), o)| *d += gv * o));
            }
            Op::Scale { x, s } => acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += s * v)),
            Op::AddTiled { x, t, period } => {
                acc(x, &mut |d| add_into(d, g));
                acc(t, &mut |dt| {
                    let len = dt.len();
                    debug_assert_eq!(len % period, 0);
                    for block in g.chunks(len) {
                        add_into(dt, block);
                    }
                });
            }
            Op::LayerNorm { x, g: gamma, b, d, ref xhat, ref rstd } => {
                let gv = val(gamma);
                acc(x, &mut |dx| {
                    let mut dxhat = vec![0.0f32; d];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut m1 = 0.0f32;
                        let mut m2 = 0.0f32;
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * hr[j];
                        }
                        m1 /= d as f32;
                        m2 /= d as f32;
                        for j in 0..d {
                            dx[r * d + j] += rs * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                });
                acc(gamma, &mut |dg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        dg.iter_mut().zip(gr).zip(hr).for_each(|((o, a), h)| *o += a * h);
                    }
                });
                acc(b, &mut |db| {
                    for gr in g.chunks(d) {
                        add_into(db, gr);
                    }
                });
            }
            Op::Gelu { x } => {
                acc(x, &mut |d| d.iter_mut().zip(g).zip(val(x)).for_each(|((d, gv), &xv)| *d += gv * kernels::gelu_grad(xv)))
            }
            Op::Softmax { x, k, tau } => {
                let y = node.value.as_slice();
                acc(x, &mut |dx| {
                    for ((dr, gr), yr) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            dr[j] += yr[j] * (gr[j] - dot) / tau;
                        }
                    }
                });
            }
            Op::LnClamped { x, eps } => acc(x, &mut |d| {
                d.iter_mut().zip(g).zip(val(x)).for_each(|((d, gv), &xv)| {
                    if xv > eps {
                        *d += gv / xv;
                    }
                })
            }),
            Op::Sum { x } => acc(x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::MeanPool { x, per_group, d } => acc(x, &mut |dx| {
                let inv = 1.0 / per_group as f32;
                for (block, gr) in dx.chunks_mut(per_group * d).zip(g.chunks(d)) {
                    for row in block.chunks_mut(d) {
                        row.iter_mut().zip(gr).for_each(|(o, v)| *o += v * inv);
                    }
                }
            }),
            Op::Attention { qkv, batch, tokens: t, heads, dim, ref probs } => {
                let src = val(qkv);
                acc(qkv, &mut |dq| attention_backward(src, g, probs, dq, batch, t, heads, dim));
            }
            Op::DwConv3 { x, w, b, geom } => {
                let c = geom.c;
                acc(x, &mut |dx| {
                    let wt = taps_major(val(w), c);
                    for_each_position(geom, |row, i, j, bi| {
                        let gr = &g[row * c..][..c];
                        for_each_tap(geom, i, j, |tap, si, sj| {
                            let dst = &mut dx[((bi * geom.h + si) * geom.w + sj) * c..][..c];
                            let k = &wt[tap * c..][..c];
                            dst.iter_mut().zip(gr).zip(k).for_each(|((o, gv), kv)| *o += gv * kv);
                        });
                    });
                });
                acc(w, &mut |dw| {
                    let xv = val(x);
                    let mut dwt = vec![0.0f32; 9 * c];
                    for_each_position(geom, |row, i, j, bi| {
                        let gr = &g[row * c..][..c];
                        for_each_tap(geom, i, j, |tap, si, sj| {
                            let src = &xv[((bi * geom.h + si) * geom.w + sj) * c..][..c];
                            dwt[tap * c..][..c].iter_mut().zip(gr).zip(src).for_each(|((o, gv), xs)| *o += gv * xs);
                        });
                    });
                    for ch in 0..c {
                        for tap in 0..9 {
                            dw[ch * 9 + tap] += dwt[tap * c + ch];
                        }
                    }
                });
                acc(b, &mut |db| {
                    for gr in g.chunks(c) {
                        add_into(db, gr);
                    }
                });
            }
            Op::PatchMerge { x, geom } => acc(x, &mut |dx| {
                let (h2, w2, c) = (geom.h / 2, geom.w / 2, geom.c);
                let mut src = g.chunks(c);
                for bi in 0..geom.batch {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            for q in 0..4 {
                                let (si, sj) = (2 * i + q / 2, 2 * j + q % 2);
                                let chunk = src.next().expect("gradient matches merged shape");
                                add_into(&mut dx[((bi * geom.h + si) * geom.w + sj) * c..][..c], chunk);
                            }
                        }
                    }
                }
            }),
            Op::Reshape { x } => acc(x, &mut |d| add_into(d, g)),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(src: &[f32], g: &[f32], probs: &[f32], dq: &mut [f32], batch: usize, t: usize, heads: usize, dim: usize) {
    let width = 3 * dim;
    let dh = dim / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut dp = vec![0.0f32; t * t];
    for b in 0..batch {
        for h in 0..heads {
            let base = b * t * width + h * dh;
            let gbase = b * t * dim + h * dh;
            let p = &probs[(b * heads + h) * t * t..][..t * t];
            // dP = dO·Vᵀ, dV += Pᵀ·dO
            gemm(t, dh, t, &g[gbase..], (dim, 1), &src[base + 2 * dim..], (1, width), &mut dp, (t, 1), false);
            gemm(t, t, dh, p, (1, t), &g[gbase..], (dim, 1), &mut dq[base + 2 * dim..], (width, 1), true);
            for (dr, pr) in dp.chunks_mut(t).zip(p.chunks(t)) {
                let dot: f32 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                dr.iter_mut().zip(pr).for_each(|(d, &pv)| *d = pv * (*d - dot) * scale);
            }
            // dQ += dS·K, dK += dSᵀ·Q
            gemm(t, t, dh, &dp, (t, 1), &src[base + dim..], (width, 1), &mut dq[base..], (width, 1), true);
            gemm(t, t, dh, &dp, (1, t), &src[base..], (width, 1), &mut dq[base + dim..], (width, 1), true);
        }
    }
}

/// (c, 3, 3) kernel re-laid out as (9, c) so the channel loop is contiguous.
fn taps_major(w: &[f32], c: usize) -> Vec<f32> {
    let mut wt = vec![0.0; 9 * c];
    for ch in 0..c {
        for tap in 0..9 {
            wt[tap * c + ch] = w[ch * 9 + tap];
        }
    }
    wt
}

fn for_each_tap(geom: Grid, i: usize, j: usize, mut f: impl FnMut(usize, usize, usize)) {
    for di in 0..3 {
        let si = i + di;
        if si == 0 || si > geom.h {
            continue;
        }
        for dj in 0..3 {
            let sj = j + dj;
            if sj == 0 || sj > geom.w {
                continue;
            }
            f(di * 3 + dj, si - 1, sj - 1);
        }
    }
}

fn for_each_position(geom: Grid, mut f: impl FnMut(usize, usize, usize, usize)) {
    let mut row = 0;
    for bi in 0..geom.batch {
        for i in 0..geom.h {
            for j in 0..geom.w {
                f(row, i, j, bi);
                row += 1;
            }
        }
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f32>>>,
}

impl Grads {
    /// Gradient of `v`, or `None` when no differentiable path reached it.
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
