//! Reverse-mode automatic differentiation over a per-sample tape.
//!
//! A [`Graph`] records every operation applied to its nodes. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! gradients for every node, including parameter leaves. Graphs are cheap and
//! short-lived: build one per sample, read the gradients, drop it.

use std::collections::HashMap;

use histocad_core::Scalar;

use crate::error::MavitError;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output size `ceil(in / stride)`; for even kernels the extra row and
    /// column of padding go at the bottom and right.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, dilation: usize, padding: Padding) -> Self {
        Self { kernel, stride, dilation, padding }
    }

    fn effective_kernel(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// Output length and leading padding for an input of length `len`.
    pub fn output_len(&self, len: usize) -> Option<(usize, usize)> {
        let ek = self.effective_kernel();
        match self.padding {
            Padding::Valid => {
                if len < ek {
                    None
                } else {
                    Some(((len - ek) / self.stride + 1, 0))
                }
            }
            Padding::Same => {
                let out = len.div_ceil(self.stride);
                let total = ((out - 1) * self.stride + ek).saturating_sub(len);
                Some((out, total / 2))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct ConvCache {
    geo: ConvGeometry,
    in_h: usize,
    in_w: usize,
    cin: usize,
    out_h: usize,
    out_w: usize,
    cout: usize,
    pad_top: usize,
    pad_left: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Relu(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, rstd: Vec<T> },
    SoftmaxRows(Var),
    Conv2d { x: Var, w: Var, b: Var, cache: ConvCache },
    Resize(Var),
    AdaptivePool(Var),
    MeanRows(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    SoftmaxXent { logits: Var, target: usize, probs: Vec<T> },
    MeanOf(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Graph<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients for every node of a graph after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the parameter gradients into `acc`, which is aligned with the
    /// parameter store (one tensor per parameter).
    pub fn accumulate_params(&self, acc: &mut [Tensor<T>]) {
        for &(pid, var) in &self.param_vars {
            if let Some(g) = self.of(var) {
                for (a, &b) in acc[pid.index()].data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
}

fn lerp_table(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = if out_len > 1 && in_len > 1 {
                o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
            } else {
                0.0
            };
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn pool_window(o: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let start = o * in_len / out_len;
    let end = ((o + 1) * in_len).div_ceil(out_len);
    (start, end)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn map3(shape: &[usize]) -> Result<(usize, usize, usize), MavitError> {
    match shape {
        [h, w, c] => Ok((*h, *w, *c)),
        _ => Err(MavitError::Shape(format!("expected a [H, W, C] map, got {shape:?}"))),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self { params: None, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Self { params: Some(params), nodes: Vec::new(), param_vars: HashMap::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf node holding a parameter. Repeated requests share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("graph was built without a parameter store");
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.param_vars.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, MavitError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(MavitError::Shape(format!(
                "add of mismatched shapes {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `[C]` vector to every row of a tensor whose last axis is `C`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, MavitError> {
        let (vx, vb) = (self.value(x), self.value(b));
        let (_, c) = vx.rows_cols();
        if vb.numel() != c {
            return Err(MavitError::Shape(format!(
                "bias of length {} for last axis {c}",
                vb.numel()
            )));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    /// `a` viewed as `[rows, k]` times a `[k, n]` matrix; the leading axes of
    /// `a` are kept.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, MavitError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.rows_cols();
        let (k2, n) = match vb.shape() {
            [k2, n] => (*k2, *n),
            s => return Err(MavitError::Shape(format!("matmul rhs must be 2-D, got {s:?}"))),
        };
        if k != k2 {
            return Err(MavitError::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        let (ad, bd) = (va.data(), vb.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `[m, k] x [n, k]^T -> [m, n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, MavitError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.rows_cols();
        let (n, k2) = vb.rows_cols();
        if k != k2 {
            return Err(MavitError::Shape(format!(
                "matmul_nt inner dimensions differ: {:?} x {:?}^T",
                va.shape(),
                vb.shape()
            )));
        }
        let (ad, bd) = (va.data(), vb.data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bd[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::MatMulNT(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (c, k, half) = (T::cast(GELU_C), T::cast(GELU_K), T::cast(0.5));
        let out = self
            .value(x)
            .map(|v| half * v * (T::one() + (c * (v + k * v * v * v)).tanh()));
        self.push(out, Op::Gelu(x))
    }

    /// Normalizes every row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, MavitError> {
        let vx = self.value(x);
        let (rows, c) = vx.rows_cols();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        if g.len() != c || b.len() != c {
            return Err(MavitError::Shape(format!(
                "layer norm affine of length {} for last axis {c}",
                g.len()
            )));
        }
        let eps = T::cast(eps);
        let inv_c = T::one() / T::from_count(c);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); vx.numel()];
        for (r, row) in vx.data().chunks(c).enumerate() {
            let mu = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_c;
            let rs = T::one() / (var + eps).sqrt();
            let orow = &mut out[r * c..(r + 1) * c];
            for i in 0..c {
                orow[i] = (row[i] - mu) * rs * g[i] + b[i];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, mean, rstd }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, MavitError> {
        let vx = self.value(x);
        let (_, c) = vx.rows_cols();
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    /// 2-D convolution on a `[H, W, Cin]` map with weights
    /// `[k, k, Cin, Cout]` and bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geo: ConvGeometry) -> Result<Var, MavitError> {
        let (in_h, in_w, cin) = map3(self.shape(x))?;
        let (cout, k) = match self.shape(w) {
            [k1, k2, ci, co] if *k1 == geo.kernel && *k2 == geo.kernel && *ci == cin => (*co, *k1),
            s => {
                return Err(MavitError::Shape(format!(
                    "conv weight {s:?} does not match kernel {} and {cin} input channels",
                    geo.kernel
                )))
            }
        };
        if self.value(b).numel() != cout {
            return Err(MavitError::Shape("conv bias length differs from output channels".into()));
        }
        let (out_h, pad_top) = geo.output_len(in_h).ok_or_else(|| {
            MavitError::Shape(format!("conv kernel {k} does not fit input height {in_h}"))
        })?;
        let (out_w, pad_left) = geo.output_len(in_w).ok_or_else(|| {
            MavitError::Shape(format!("conv kernel {k} does not fit input width {in_w}"))
        })?;
        let cache = ConvCache { geo, in_h, in_w, cin, out_h, out_w, cout, pad_top, pad_left };
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![T::zero(); out_h * out_w * cout];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let orow = &mut out[(oy * out_w + ox) * cout..(oy * out_w + ox + 1) * cout];
                orow.copy_from_slice(bd);
                for ky in 0..k {
                    let Some(iy) = src_index(oy, ky, &cache.geo, pad_top, in_h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = src_index(ox, kx, &cache.geo, pad_left, in_w) else { continue };
                        let xin = &xd[(iy * in_w + ix) * cin..(iy * in_w + ix + 1) * cin];
                        let wk = &wd[(ky * k + kx) * cin * cout..(ky * k + kx + 1) * cin * cout];
                        for (ci, &a) in xin.iter().enumerate() {
                            if a == T::zero() {
                                continue;
                            }
                            for (o, &wv) in orow.iter_mut().zip(&wk[ci * cout..(ci + 1) * cout]) {
                                *o += a * wv;
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![out_h, out_w, cout], out)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, cache }))
    }

    /// Bilinear resize of a `[H, W, C]` map using the align-corners
    /// convention: output corners sample input corners exactly.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, MavitError> {
        let (h, w, c) = map3(self.shape(x))?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(MavitError::Shape("resize to or from an empty map".into()));
        }
        if (h, w) == (out_h, out_w) {
            let out = self.value(x).clone();
            return Ok(self.push(out, Op::Resize(x)));
        }
        let (ty, tx) = (lerp_table(h, out_h), lerp_table(w, out_w));
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); out_h * out_w * c];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::cast(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::cast(fx);
                let weights = [
                    ((T::one() - fy) * (T::one() - fx), y0, x0),
                    ((T::one() - fy) * fx, y0, x1),
                    (fy * (T::one() - fx), y1, x0),
                    (fy * fx, y1, x1),
                ];
                let orow = &mut out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
                for (wt, sy, sx) in weights {
                    if wt == T::zero() {
                        continue;
                    }
                    let src = &xd[(sy * w + sx) * c..(sy * w + sx + 1) * c];
                    for (o, &s) in orow.iter_mut().zip(src) {
                        *o += wt * s;
                    }
                }
            }
        }
        let out = Tensor::new(vec![out_h, out_w, c], out)?;
        Ok(self.push(out, Op::Resize(x)))
    }

    /// Average pooling onto an `out_h x out_w` grid of (possibly
    /// overlapping) windows covering the whole input.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, MavitError> {
        let (h, w, c) = map3(self.shape(x))?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(MavitError::Shape(format!(
                "adaptive pool from {h}x{w} to {out_h}x{out_w}"
            )));
        }
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); out_h * out_w * c];
        for oy in 0..out_h {
            let (ys, ye) = pool_window(oy, h, out_h);
            for ox in 0..out_w {
                let (xs, xe) = pool_window(ox, w, out_w);
                let inv = T::one() / T::from_count((ye - ys) * (xe - xs));
                let orow = &mut out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
                for iy in ys..ye {
                    for ix in xs..xe {
                        for (o, &s) in orow.iter_mut().zip(&xd[(iy * w + ix) * c..(iy * w + ix + 1) * c]) {
                            *o += s * inv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![out_h, out_w, c], out)?;
        Ok(self.push(out, Op::AdaptivePool(x)))
    }

    /// Mean over all rows: `[.., C] -> [C]` (global average pooling for maps).
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, MavitError> {
        let vx = self.value(x);
        let (rows, c) = vx.rows_cols();
        let inv = T::one() / T::from_count(rows.max(1));
        let mut out = vec![T::zero(); c];
        for row in vx.data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v * inv;
            }
        }
        let out = Tensor::new(vec![c], out)?;
        Ok(self.push(out, Op::MeanRows(x)))
    }

    /// Concatenation along the last axis; all leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, MavitError> {
        let first = self.shape(*parts.first().ok_or_else(|| MavitError::Shape("empty concat".into()))?);
        let lead = first[..first.len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(MavitError::Shape(format!(
                    "concat of {:?} with leading axes {lead:?}",
                    s
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &wd) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * wd..(r + 1) * wd]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var, MavitError> {
        let vx = self.value(x);
        let (rows, c) = vx.rows_cols();
        if start + len > c {
            return Err(MavitError::Shape(format!("slice {start}..{} of width {c}", start + len)));
        }
        let mut out = Vec::with_capacity(rows * len);
        for row in vx.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, MavitError> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Cross-entropy of `softmax(logits)` against class `target`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, MavitError> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(MavitError::Shape(format!("target {target} out of {} classes", z.len())));
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        let probs: Vec<T> = exps.iter().map(|&e| e / sum).collect();
        let loss = sum.ln() + max - z[target];
        let out = Tensor::new(vec![1], vec![loss])?;
        Ok(self.push(out, Op::SoftmaxXent { logits, target, probs }))
    }

    /// Mean of scalar nodes.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var, MavitError> {
        if xs.is_empty() {
            return Err(MavitError::Shape("mean of no values".into()));
        }
        let inv = T::one() / T::from_count(xs.len());
        let mut total = T::zero();
        for &x in xs {
            let v = self.value(x);
            if v.numel() != 1 {
                return Err(MavitError::Shape("mean_of expects scalars".into()));
            }
            total += v.data()[0];
        }
        let out = Tensor::new(vec![1], vec![total * inv])?;
        Ok(self.push(out, Op::MeanOf(xs.to_vec())))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.nodes[root.0].value.numel()]);
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        let mut param_vars: Vec<(ParamId, Var)> = self.param_vars.iter().map(|(&p, &v)| (p, v)).collect();
        param_vars.sort_by_key(|(p, _)| p.index());
        Gradients { grads, param_vars }
    }

    fn propagate(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, self.numel(*a), |g| add_into(g, gy));
                accumulate(grads, *b, self.numel(*b), |g| add_into(g, gy));
            }
            Op::AddBias(x, b) => {
                accumulate(grads, *x, self.numel(*x), |g| add_into(g, gy));
                let c = self.numel(*b);
                accumulate(grads, *b, c, |g| {
                    for row in gy.chunks(c) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(x, s) => {
                accumulate(grads, *x, self.numel(*x), |g| {
                    for (o, &v) in g.iter_mut().zip(gy) {
                        *o += v * *s;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.rows_cols();
                let n = vb.shape()[1];
                let (ad, bd) = (va.data(), vb.data());
                accumulate(grads, *a, m * k, |g| {
                    for i in 0..m {
                        let grow = &gy[i * n..(i + 1) * n];
                        for p in 0..k {
                            g[i * k + p] += dot(grow, &bd[p * n..(p + 1) * n]);
                        }
                    }
                });
                accumulate(grads, *b, k * n, |g| {
                    for i in 0..m {
                        let grow = &gy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            for (o, &gv) in g[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                });
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.rows_cols();
                let (n, _) = vb.rows_cols();
                let (ad, bd) = (va.data(), vb.data());
                accumulate(grads, *a, m * k, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            let gv = gy[i * n + j];
                            for (o, &bv) in g[i * k..(i + 1) * k].iter_mut().zip(&bd[j * k..(j + 1) * k]) {
                                *o += gv * bv;
                            }
                        }
                    }
                });
                accumulate(grads, *b, n * k, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            let gv = gy[i * n + j];
                            for (o, &av) in g[j * k..(j + 1) * k].iter_mut().zip(&ad[i * k..(i + 1) * k]) {
                                *o += gv * av;
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                accumulate(grads, *x, xd.len(), |g| {
                    for ((o, &gv), &xv) in g.iter_mut().zip(gy).zip(xd) {
                        if xv > T::zero() {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                let (c, k, half) = (T::cast(GELU_C), T::cast(GELU_K), T::cast(0.5));
                let three = T::cast(3.0);
                accumulate(grads, *x, xd.len(), |g| {
                    for ((o, &gv), &v) in g.iter_mut().zip(gy).zip(xd) {
                        let t = (c * (v + k * v * v * v)).tanh();
                        let d = half * (T::one() + t)
                            + half * v * (T::one() - t * t) * c * (T::one() + three * k * v * v);
                        *o += gv * d;
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                let c = gd.len();
                let inv_c = T::one() / T::from_count(c);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xd.len()];
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for r in 0..mean.len() {
                    let row = &xd[r * c..(r + 1) * c];
                    let grow = &gy[r * c..(r + 1) * c];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..c {
                        xhat[j] = (row[j] - mean[r]) * rstd[r];
                        dxhat[j] = grow[j] * gd[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xhat[j];
                    }
                    let (m1, m2) = (s1 * inv_c, s2 * inv_c);
                    for j in 0..c {
                        dx[r * c + j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                accumulate(grads, *x, dx.len(), |g| add_into(g, &dx));
                accumulate(grads, *gamma, c, |g| add_into(g, &dgamma));
                accumulate(grads, *beta, c, |g| add_into(g, &dbeta));
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let (_, c) = node.value.rows_cols();
                accumulate(grads, *x, y.len(), |g| {
                    for ((grow, yrow), orow) in gy.chunks(c).zip(y.chunks(c)).zip(g.chunks_mut(c)) {
                        let s = dot(grow, yrow);
                        for j in 0..c {
                            orow[j] += yrow[j] * (grow[j] - s);
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, cache } => self.conv_backward(*x, *w, *b, cache, gy, grads),
            Op::Resize(x) => {
                let (h, w, c) = map3(self.shape(*x)).expect("resize input is a map");
                let (oh, ow, _) = map3(node.value.shape()).expect("resize output is a map");
                if (h, w) == (oh, ow) {
                    accumulate(grads, *x, gy.len(), |g| add_into(g, gy));
                    return;
                }
                let (ty, tx) = (lerp_table(h, oh), lerp_table(w, ow));
                accumulate(grads, *x, h * w * c, |g| {
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        let fy = T::cast(fy);
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let fx = T::cast(fx);
                            let grow = &gy[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                            for (wt, sy, sx) in [
                                ((T::one() - fy) * (T::one() - fx), y0, x0),
                                ((T::one() - fy) * fx, y0, x1),
                                (fy * (T::one() - fx), y1, x0),
                                (fy * fx, y1, x1),
                            ] {
                                if wt == T::zero() {
                                    continue;
                                }
                                for (o, &gv) in g[(sy * w + sx) * c..(sy * w + sx + 1) * c].iter_mut().zip(grow) {
                                    *o += wt * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::AdaptivePool(x) => {
                let (h, w, c) = map3(self.shape(*x)).expect("pool input is a map");
                let (oh, ow, _) = map3(node.value.shape()).expect("pool output is a map");
                accumulate(grads, *x, h * w * c, |g| {
                    for oy in 0..oh {
                        let (ys, ye) = pool_window(oy, h, oh);
                        for ox in 0..ow {
                            let (xs, xe) = pool_window(ox, w, ow);
                            let inv = T::one() / T::from_count((ye - ys) * (xe - xs));
                            let grow = &gy[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                            for iy in ys..ye {
                                for ix in xs..xe {
                                    for (o, &gv) in g[(iy * w + ix) * c..(iy * w + ix + 1) * c].iter_mut().zip(grow) {
                                        *o += gv * inv;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::MeanRows(x) => {
                let (rows, c) = self.value(*x).rows_cols();
                let inv = T::one() / T::from_count(rows.max(1));
                accumulate(grads, *x, rows * c, |g| {
                    for row in g.chunks_mut(c) {
                        for (o, &gv) in row.iter_mut().zip(gy) {
                            *o += gv * inv;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let (rows, wd) = self.value(p).rows_cols();
                    accumulate(grads, p, rows * wd, |g| {
                        for r in 0..rows {
                            add_into(&mut g[r * wd..(r + 1) * wd], &gy[r * total + offset..r * total + offset + wd]);
                        }
                    });
                    offset += wd;
                }
            }
            Op::Slice { x, start } => {
                let (rows, c) = self.value(*x).rows_cols();
                let len = *node.value.shape().last().unwrap();
                accumulate(grads, *x, rows * c, |g| {
                    for r in 0..rows {
                        add_into(&mut g[r * c + start..r * c + start + len], &gy[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::Reshape(x) => accumulate(grads, *x, gy.len(), |g| add_into(g, gy)),
            Op::SoftmaxXent { logits, target, probs } => {
                let up = gy[0];
                accumulate(grads, *logits, probs.len(), |g| {
                    for (j, (o, &p)) in g.iter_mut().zip(probs).enumerate() {
                        let t = if j == *target { T::one() } else { T::zero() };
                        *o += up * (p - t);
                    }
                });
            }
            Op::MeanOf(xs) => {
                let share = gy[0] / T::from_count(xs.len());
                for &x in xs {
                    accumulate(grads, x, 1, |g| g[0] += share);
                }
            }
        }
    }

    fn conv_backward(&self, x: Var, w: Var, b: Var, c: &ConvCache, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let k = c.geo.kernel;
        let (cin, cout) = (c.cin, c.cout);
        accumulate(grads, b, cout, |g| {
            for row in gy.chunks(cout) {
                add_into(g, row);
            }
        });
        let mut dx = vec![T::zero(); xd.len()];
        let mut dw = vec![T::zero(); wd.len()];
        for oy in 0..c.out_h {
            for ox in 0..c.out_w {
                let grow = &gy[(oy * c.out_w + ox) * cout..(oy * c.out_w + ox + 1) * cout];
                for ky in 0..k {
                    let Some(iy) = src_index(oy, ky, &c.geo, c.pad_top, c.in_h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = src_index(ox, kx, &c.geo, c.pad_left, c.in_w) else { continue };
                        let base = (iy * c.in_w + ix) * cin;
                        let wbase = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let wrow = &wd[wbase + ci * cout..wbase + (ci + 1) * cout];
                            dx[base + ci] += dot(wrow, grow);
                            let a = xd[base + ci];
                            if a == T::zero() {
                                continue;
                            }
                            for (o, &gv) in dw[wbase + ci * cout..wbase + (ci + 1) * cout].iter_mut().zip(grow) {
                                *o += a * gv;
                            }
                        }
                    }
                }
            }
        }
        accumulate(grads, x, dx.len(), |g| add_into(g, &dx));
        accumulate(grads, w, dw.len(), |g| add_into(g, &dw));
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.numel()
    }
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn src_index(o: usize, k: usize, geo: &ConvGeometry, pad: usize, len: usize) -> Option<usize> {
    let pos = (o * geo.stride + k * geo.dilation) as isize - pad as isize;
    if pos < 0 || pos as usize >= len {
        None
    } else {
        Some(pos as usize)
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize, f: impl FnOnce(&mut [T])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_loss(g: &mut Graph<'_, f64>, y: Var) -> Var {
        // Weighted sum so every output element gets a distinct upstream grad.
        let n = g.value(y).numel();
        let c = *g.shape(y).last().unwrap();
        let wts: Vec<f64> = (0..c).map(|i| 0.3 + 0.17 * i as f64).collect();
        let w = g.input(Tensor::new(vec![c, 1], wts).unwrap());
        let r = g.matmul(y, w).unwrap();
        let r = g.reshape(r, vec![n / c, 1]).unwrap();
        let m = g.mean_rows(r).unwrap();
        g.reshape(m, vec![1]).unwrap()
    }

    /// Central-difference check of d loss / d input for a single-input op.
    fn check_op(shape: Vec<usize>, build: impl Fn(&mut Graph<'_, f64>, Var) -> Var) {
        let n: usize = shape.iter().product();
        let x0: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 / 8.0) - 1.0 + 0.01 * i as f64).collect();
        let eval = |x: &[f64]| {
            let mut g = Graph::new();
            let xv = g.input(Tensor::new(shape.clone(), x.to_vec()).unwrap());
            let y = build(&mut g, xv);
            let l = scalar_loss(&mut g, y);
            g.value(l).data()[0]
        };
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(shape.clone(), x0.clone()).unwrap());
        let y = build(&mut g, xv);
        let l = scalar_loss(&mut g, y);
        let grads = g.backward(l);
        let analytic = grads.of(xv).unwrap().to_vec();
        let eps = 1e-6;
        for i in 0..n {
            let mut xp = x0.clone();
            xp[i] += eps;
            let mut xm = x0.clone();
            xm[i] -= eps;
            let numeric = (eval(&xp) - eval(&xm)) / (2.0 * eps);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-8);
            assert!(err < 1e-5, "index {i}: analytic {} numeric {numeric}", analytic[i]);
        }
    }

    #[test]
    fn conv_valid_and_same_shapes() {
        let geo = ConvGeometry::new(3, 1, 2, Padding::Same);
        assert_eq!(geo.output_len(8), Some((8, 2)));
        let geo = ConvGeometry::new(2, 1, 1, Padding::Same);
        assert_eq!(geo.output_len(10), Some((10, 0)));
        let geo = ConvGeometry::new(16, 16, 1, Padding::Valid);
        assert_eq!(geo.output_len(512), Some((32, 0)));
        assert_eq!(geo.output_len(8), None);
    }

    #[test]
    fn conv_gradients() {
        for geo in [
            ConvGeometry::new(3, 1, 1, Padding::Same),
            ConvGeometry::new(3, 1, 2, Padding::Same),
            ConvGeometry::new(2, 1, 1, Padding::Same),
            ConvGeometry::new(2, 2, 1, Padding::Valid),
        ] {
            check_op(vec![5, 4, 3], move |g, x| {
                let w: Vec<f64> = (0..geo.kernel * geo.kernel * 3 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
                let w = g.input(Tensor::new(vec![geo.kernel, geo.kernel, 3, 2], w).unwrap());
                let b = g.input(Tensor::new(vec![2], vec![0.1, -0.2]).unwrap());
                g.conv2d(x, w, b, geo).unwrap()
            });
        }
    }

    #[test]
    fn elementwise_and_norm_gradients() {
        check_op(vec![3, 5], |g, x| g.gelu(x));
        check_op(vec![3, 5], |g, x| g.softmax_rows(x).unwrap());
        check_op(vec![3, 5], |g, x| {
            let gamma = g.input(Tensor::new(vec![5], vec![1.0, 0.5, 2.0, -1.0, 0.3]).unwrap());
            let beta = g.input(Tensor::new(vec![5], vec![0.0, 0.1, 0.2, 0.3, 0.4]).unwrap());
            g.layer_norm(x, gamma, beta, 1e-5).unwrap()
        });
        check_op(vec![4, 6], |g, x| {
            let a = g.slice_last(x, 1, 3).unwrap();
            let b = g.slice_last(x, 0, 2).unwrap();
            let c = g.concat(&[a, b, x]).unwrap();
            g.scale(c, 0.7)
        });
        check_op(vec![4, 3], |g, x| {
            let y = g.matmul_nt(x, x).unwrap();
            g.matmul(y, x).unwrap()
        });
    }

    #[test]
    fn resize_and_pool_gradients() {
        check_op(vec![3, 2, 2], |g, x| g.resize(x, 5, 4).unwrap());
        check_op(vec![5, 5, 2], |g, x| g.resize(x, 3, 2).unwrap());
        check_op(vec![7, 5, 2], |g, x| g.adaptive_avg_pool(x, 4, 3).unwrap());
    }

    #[test]
    fn bilinear_preserves_corners() {
        let mut g: Graph<'_, f64> = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2, 1], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let y = g.resize(x, 4, 4).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[3], 3.0);
        assert_eq!(v[12], 5.0);
        assert_eq!(v[15], 7.0);
        // Interior value at (1, 1): source (1/3, 1/3).
        let expect = 1.0 + 2.0 / 3.0 + 4.0 / 3.0;
        assert!((v[5] - expect).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let mut g: Graph<'_, f64> = Graph::new();
        let z = g.input(Tensor::new(vec![3], vec![1.0, 2.0, 0.5]).unwrap());
        let l = g.softmax_cross_entropy(z, 1).unwrap();
        let grads = g.backward(l);
        let gz = grads.of(z).unwrap();
        let e: Vec<f64> = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        assert!((gz[0] - e[0] / s).abs() < 1e-12);
        assert!((gz[1] - (e[1] / s - 1.0)).abs() < 1e-12);
        assert!((g.value(l).data()[0] - (s.ln() - 2.0)).abs() < 1e-12);
    }
}
