//! Reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order, so every node's inputs have a
//! smaller index than the node itself. [`Tape::backward`] walks the indices
//! downwards from the root and visits each reachable node exactly once.

use rayon::prelude::*;

use super::kernels::{self, ConvGeom};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Smallest row norm accepted by [`Tape::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d { input: Var, kernel: Var, stride: usize },
    AddChannelBias(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Relu(Var),
    GlobalAvgPool(Var),
    L2NormalizeRows(Var),
    LogSumExpRows { input: Var, mask: Option<Vec<bool>> },
    WeightedSum { input: Var, weights: Vec<T> },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node that reaches it.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Number of nodes the backward pass propagated through.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Input handles of a node, in operand order.
    pub fn inputs(&self, var: Var) -> Vec<Var> {
        match &self.nodes[var.0].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddChannelBias(a, b) | Op::AddRowBias(a, b) | Op::Add(a, b) => {
                vec![*a, *b]
            }
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::GlobalAvgPool(a)
            | Op::L2NormalizeRows(a)
            | Op::Sum(a) => vec![*a],
            Op::LogSumExpRows { input, .. } | Op::WeightedSum { input, .. } => vec![*input],
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = match av.shape() {
            [m, k] => (*m, *k),
            s => return Err(Error::shape("matmul", format!("lhs must be 2-d, got {s:?}"))),
        };
        let n = match bv.shape() {
            [k2, n] if *k2 == k => *n,
            s => {
                return Err(Error::shape(
                    "matmul",
                    format!("lhs is {m}×{k}, rhs is {s:?}"),
                ))
            }
        };
        let out = kernels::gemm(av.data(), bv.data(), m, k, n);
        self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = match av.shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("transpose", format!("expected 2-d, got {s:?}"))),
        };
        let out = transpose(av.data(), r, c);
        self.push(Tensor::new([c, r], out)?, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// 3×3 cross-correlation with zero padding 1.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        if stride != 1 && stride != 2 {
            return Err(Error::invalid(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let (xv, kv) = (self.value(input), self.value(kernel));
        let (b, c, h, w) = match xv.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(Error::shape("conv2d", format!("input must be B×C×H×W, got {s:?}"))),
        };
        let f = match kv.shape() {
            [f, kc, 3, 3] if *kc == c => *f,
            s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {s:?} does not match {c} input channels"),
                ))
            }
        };
        if h < 3 || w < 3 {
            return Err(Error::shape("conv2d", format!("spatial dims {h}×{w} below 3×3")));
        }
        let g = ConvGeom {
            channels: c,
            height: h,
            width: w,
            stride,
        };
        let (p, r) = (g.out_pixels(), g.patch_len());
        let mut out = vec![T::zero(); b * f * p];
        let (x, k) = (xv.data(), kv.data());
        let image_len = c * h * w;
        out.par_chunks_mut(f * p).enumerate().for_each(|(bi, o)| {
            let cols = kernels::im2col(&x[bi * image_len..(bi + 1) * image_len], g);
            o.copy_from_slice(&kernels::gemm(k, &cols, f, r, p));
        });
        let t = Tensor::new([b, f, g.out_height(), g.out_width()], out)?;
        self.push(t, Op::Conv2d { input, kernel, stride }, "conv2d")
    }

    /// `x[B×C×H×W] + bias[C]` broadcast over batch and space.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (c, plane) = match xv.shape() {
            [_, c, h, w] => (*c, h * w),
            s => return Err(Error::shape("add_channel_bias", format!("expected 4-d, got {s:?}"))),
        };
        if bv.shape() != [c] {
            return Err(Error::shape(
                "add_channel_bias",
                format!("bias {:?} for {c} channels", bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + bv.data()[(i / plane) % c];
        }
        self.push(out, Op::AddChannelBias(x, bias), "add_channel_bias")
    }

    /// `x[N×D] + bias[D]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = match xv.shape() {
            [_, d] => *d,
            s => return Err(Error::shape("add_row_bias", format!("expected 2-d, got {s:?}"))),
        };
        if bv.shape() != [d] {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias {:?} for width {d}", bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o = *o + bb;
            }
        }
        self.push(out, Op::AddRowBias(x, bias), "add_row_bias")
    }

    /// Fully connected layer `x·W + b` with `W` stored `[in × out]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add_row_bias(xw, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * factor).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Scale(a, factor), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x.max(T::zero())).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Relu(a), "relu")
    }

    /// `[B×C×H×W] → [B×C]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (b, c, plane) = match av.shape() {
            [b, c, h, w] => (*b, *c, h * w),
            s => return Err(Error::shape("global_avg_pool", format!("expected 4-d, got {s:?}"))),
        };
        let inv = T::one() / T::of(plane as f64);
        let data = av
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        self.push(Tensor::new([b, c], data)?, Op::GlobalAvgPool(a), "global_avg_pool")
    }

    /// Scale every row (or a 1-d vector) to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (_, d) = av.as_matrix("l2_normalize")?;
        let mut out = av.clone();
        for (i, row) in out.data_mut().chunks_mut(d.max(1)).enumerate() {
            let norm = row_norm(row);
            if norm.as_f64() <= NORM_EPS {
                return Err(Error::DegenerateInput {
                    op: "l2_normalize",
                    detail: format!("row {i} has norm {norm}"),
                });
            }
            for v in row.iter_mut() {
                *v = *v / norm;
            }
        }
        self.push(out, Op::L2NormalizeRows(a), "l2_normalize")
    }

    /// Max-shifted `ln Σ exp` of a 1-d vector, yielding a scalar.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        if self.value(a).ndim() != 1 {
            return Err(Error::shape(
                "log_sum_exp",
                format!("expected 1-d, got {:?}", self.value(a).shape()),
            ));
        }
        self.log_sum_exp_rows(a, None)
    }

    /// Row-wise `ln Σ_j exp(x_ij)` over entries where `mask[i·cols + j]` is set
    /// (all entries when `mask` is `None`). 2-d input gives `[rows]`, 1-d a scalar.
    pub fn log_sum_exp_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = av.as_matrix("log_sum_exp")?;
        if let Some(m) = &mask {
            if m.len() != av.numel() {
                return Err(Error::shape(
                    "log_sum_exp",
                    format!("mask has {} entries for {} values", m.len(), av.numel()),
                ));
            }
        }
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = &av.data()[i * cols..(i + 1) * cols];
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m[i * cols + j]);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))));
            let Some(max) = max else {
                return Err(Error::DegenerateInput {
                    op: "log_sum_exp",
                    detail: format!("row {i} has no unmasked entries"),
                });
            };
            let s: T = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| (row[j] - max).exp())
                .sum();
            out.push(max + s.ln());
        }
        let shape = if av.ndim() == 1 { vec![] } else { vec![rows] };
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::LogSumExpRows { input: a, mask }, "log_sum_exp")
    }

    /// `Σ w_i x_i` with constant weights; yields a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<T>) -> Result<Var> {
        let av = self.value(a);
        if weights.len() != av.numel() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), av.numel()),
            ));
        }
        let s = av.data().iter().zip(&weights).map(|(&x, &w)| x * w).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { input: a, weights }, "weighted_sum")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Propagate `d root / d node` for every node reachable from `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, shape is {:?}", rv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape().to_vec(), T::one()));
        let mut visited = 0;
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visited += 1;
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let da = kernels::gemm_bt(gd, bv.data(), m, n, k);
                let db = kernels::gemm_at(av.data(), gd, m, k, n);
                accumulate(grads, *a, av.shape(), da)?;
                accumulate(grads, *b, bv.shape(), db)?;
            }
            Op::Transpose(a) => {
                let av = self.value(*a);
                let (r, c) = (av.shape()[0], av.shape()[1]);
                accumulate(grads, *a, av.shape(), transpose(gd, c, r))?;
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.shape(), gd.to_vec())?;
            }
            Op::Conv2d { input, kernel, stride } => {
                let (xv, kv) = (self.value(*input), self.value(*kernel));
                let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let f = kv.shape()[0];
                let geom = ConvGeom {
                    channels: c,
                    height: h,
                    width: w,
                    stride: *stride,
                };
                let (p, r) = (geom.out_pixels(), geom.patch_len());
                let image_len = c * h * w;
                let (x, k) = (xv.data(), kv.data());
                let parts: Vec<(Vec<T>, Vec<T>)> = (0..b)
                    .into_par_iter()
                    .map(|bi| {
                        let go = &gd[bi * f * p..(bi + 1) * f * p];
                        let cols = kernels::im2col(&x[bi * image_len..(bi + 1) * image_len], geom);
                        let dk = kernels::gemm_bt(go, &cols, f, p, r);
                        let dcols = kernels::gemm_at(k, go, f, r, p);
                        (dk, kernels::col2im(&dcols, geom))
                    })
                    .collect();
                let mut dk = vec![T::zero(); f * r];
                let mut dx = Vec::with_capacity(b * image_len);
                for (pk, px) in parts {
                    for (d, v) in dk.iter_mut().zip(pk) {
                        *d = *d + v;
                    }
                    dx.extend(px);
                }
                accumulate(grads, *input, xv.shape(), dx)?;
                accumulate(grads, *kernel, kv.shape(), dk)?;
            }
            Op::AddChannelBias(x, bias) => {
                let xv = self.value(*x);
                let (c, plane) = (xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
                let mut db = vec![T::zero(); c];
                for (i, chunk) in gd.chunks(plane).enumerate() {
                    db[i % c] = db[i % c] + chunk.iter().copied().sum::<T>();
                }
                accumulate(grads, *x, xv.shape(), gd.to_vec())?;
                accumulate(grads, *bias, &[c], db)?;
            }
            Op::AddRowBias(x, bias) => {
                let xv = self.value(*x);
                let d = xv.shape()[1];
                let mut db = vec![T::zero(); d];
                for row in gd.chunks(d) {
                    for (o, &v) in db.iter_mut().zip(row) {
                        *o = *o + v;
                    }
                }
                accumulate(grads, *x, xv.shape(), gd.to_vec())?;
                accumulate(grads, *bias, &[d], db)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec())?;
                accumulate(grads, *b, g.shape(), gd.to_vec())?;
            }
            Op::Scale(a, factor) => {
                let d = gd.iter().map(|&v| v * *factor).collect();
                accumulate(grads, *a, g.shape(), d)?;
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let d = av
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&x, &dy)| if x > T::zero() { dy } else { T::zero() })
                    .collect();
                accumulate(grads, *a, av.shape(), d)?;
            }
            Op::GlobalAvgPool(a) => {
                let av = self.value(*a);
                let plane = av.shape()[2] * av.shape()[3];
                let inv = T::one() / T::of(plane as f64);
                let mut d = Vec::with_capacity(av.numel());
                for &dy in gd {
                    d.extend(std::iter::repeat_n(dy * inv, plane));
                }
                accumulate(grads, *a, av.shape(), d)?;
            }
            Op::L2NormalizeRows(a) => {
                let (av, y) = (self.value(*a), &node.value);
                let (_, cols) = av.as_matrix("l2_normalize")?;
                let mut d = vec![T::zero(); av.numel()];
                for (i, out) in d.chunks_mut(cols.max(1)).enumerate() {
                    let span = i * cols..(i + 1) * cols;
                    let (xr, yr, gr) = (&av.data()[span.clone()], &y.data()[span.clone()], &gd[span]);
                    let norm = row_norm(xr);
                    let proj: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yy), &gg) in out.iter_mut().zip(yr).zip(gr) {
                        *o = (gg - yy * proj) / norm;
                    }
                }
                accumulate(grads, *a, av.shape(), d)?;
            }
            Op::LogSumExpRows { input, mask } => {
                let av = self.value(*input);
                let (rows, cols) = av.as_matrix("log_sum_exp")?;
                let out = node.value.data();
                let mut d = vec![T::zero(); av.numel()];
                for i in 0..rows {
                    for j in 0..cols {
                        let at = i * cols + j;
                        if mask.as_ref().is_none_or(|m| m[at]) {
                            d[at] = gd[i] * (av.data()[at] - out[i]).exp();
                        }
                    }
                }
                accumulate(grads, *input, av.shape(), d)?;
            }
            Op::WeightedSum { input, weights } => {
                let dy = gd[0];
                let d = weights.iter().map(|&w| w * dy).collect();
                accumulate(grads, *input, self.value(*input).shape(), d)?;
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.shape(), vec![gd[0]; av.numel()])?;
            }
        }
        Ok(())
    }
}

fn row_norm<T: Scalar>(row: &[T]) -> T {
    row.iter().map(|&v| v * v).sum::<T>().sqrt()
}

fn transpose<T: Scalar>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    var: Var,
    shape: &[usize],
    delta: Vec<T>,
) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e = *e + d;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), delta)?),
    }
    Ok(())
}
