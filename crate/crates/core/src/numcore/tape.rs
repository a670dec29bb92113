//! Tensor-level reverse-mode automatic differentiation.
//!
//! Every primitive applied through a [`Tape`] appends one node holding its
//! forward value and the handles of its inputs. Nodes are stored in creation
//! order, which is a topological order of the computation graph, so
//! [`Tape::backward`] is a single reverse sweep that visits each node once.
//!
//! ```
//! use ecg_ssl::numcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0), true);
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    BroadcastTo(Var),
    Upsample(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications for a single forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the root.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(like))
    }
}

const NORM_EPS: f64 = 1e-12;

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let n = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Strides of `from` (same rank as `to`) with zero stride on broadcast axes.
fn broadcast_strides(from: &[usize], to: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; from.len()];
    let mut acc = 1;
    for d in (0..from.len()).rev() {
        strides[d] = if from[d] == 1 && to[d] != 1 { 0 } else { acc };
        acc *= from[d];
    }
    strides
}

/// Visit output positions of a broadcast in row-major order, yielding the
/// matching input offset.
fn for_each_broadcast(from: &[usize], to: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(from, to);
    let numel: usize = to.iter().product();
    let rank = to.len();
    let mut counter = vec![0usize; rank];
    let mut src = 0usize;
    for out in 0..numel {
        f(out, src);
        for d in (0..rank).rev() {
            counter[d] += 1;
            src += strides[d];
            if counter[d] < to[d] {
                break;
            }
            src -= strides[d] * to[d];
            counter[d] = 0;
        }
    }
}

/// `a[m, k] * b[k, n]` where each operand is addressed through
/// `(row_stride, col_stride)`, so transposes need no copy.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize)) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || k == 0 || n == 0 {
        return c;
    }
    assert!((m - 1) * sa.0 + (k - 1) * sa.1 < a.len(), "gemm lhs out of bounds");
    assert!((k - 1) * sb.0 + (n - 1) * sb.1 < b.len(), "gemm rhs out of bounds");
    // SAFETY: the asserts above bound every element either operand addresses,
    // and `c` is a dense m x n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm(m, k, n, a, (k, 1), b, (n, 1))
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

struct ConvGeom {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    len_out: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.kernel
    }

    /// Unfold one batch item into a `[c_in * kernel, len_out]` matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.rows() * self.len_out];
        for c in 0..self.c_in {
            let xc = &x[c * self.len..(c + 1) * self.len];
            for k in 0..self.kernel {
                let row = &mut cols[(c * self.kernel + k) * self.len_out..][..self.len_out];
                for (t, slot) in row.iter_mut().enumerate() {
                    let pos = (t * self.stride + k) as isize - self.padding as isize;
                    if pos >= 0 && (pos as usize) < self.len {
                        *slot = xc[pos as usize];
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        for c in 0..self.c_in {
            let gxc = &mut gx[c * self.len..(c + 1) * self.len];
            for k in 0..self.kernel {
                let row = &cols[(c * self.kernel + k) * self.len_out..][..self.len_out];
                for (t, v) in row.iter().enumerate() {
                    let pos = (t * self.stride + k) as isize - self.padding as isize;
                    if pos >= 0 && (pos as usize) < self.len {
                        gxc[pos as usize] += v;
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf holding a copy of `value`.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `x` that blocks gradient flow (stop-gradient).
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.leaf(v, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn unary_map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.unary_map(x, |a| scale * a + shift);
        let rg = self.rg(x);
        self.push(v, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b), rg))
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, padding: usize) -> Result<ConvGeom> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(shape_err("conv1d", sx, sw));
        }
        let len_out =
            conv_out_len(sx[2], sw[2], stride, padding).ok_or_else(|| shape_err("conv1d", sx, sw))?;
        Ok(ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            len: sx[2],
            c_out: sw[0],
            kernel: sw[2],
            stride,
            padding,
            len_out,
        })
    }

    /// Cross-correlation of `x: [batch, c_in, len]` with
    /// `w: [c_out, c_in, kernel]`, zero padding on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let g = self.conv_geom(x, w, stride, padding)?;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let item_out = g.c_out * g.len_out;
        let mut out = vec![0.0; g.batch * item_out];
        out.par_chunks_mut(item_out).enumerate().for_each(|(b, ob)| {
            let cols = g.im2col(&xd[b * g.c_in * g.len..(b + 1) * g.c_in * g.len]);
            let prod = matmul_raw(wd, &cols, g.c_out, g.rows(), g.len_out);
            ob.copy_from_slice(&prod);
        });
        let rg = self.rg(x) || self.rg(w);
        let value = Tensor::from_parts(vec![g.batch, g.c_out, g.len_out], out);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.unary_map(x, |a| a.max(0.0));
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.unary_map(x, sigmoid);
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.unary_map(x, f64::exp);
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.unary_map(x, f64::ln);
        let rg = self.rg(x);
        self.push(v, Op::Log(x), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.unary_map(x, f64::sqrt);
        let rg = self.rg(x);
        self.push(v, Op::Sqrt(x), rg)
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.unary_map(x, |a| a.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(v, Op::Clamp(x, lo, hi), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("sum_axis", &shape, &[axis]));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let src = &xd[(o * n + i) * inner..][..inner];
                let dst = &mut out[o * inner..][..inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(new_shape, out), Op::SumAxis(x, axis), rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| shape_err("mean_axis", self.shape(x), &[axis]))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    fn last_axis_rows(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        let shape = self.shape(x);
        match shape.last() {
            Some(&n) if n > 0 => Ok((self.value(x).numel() / n, n)),
            _ => Err(shape_err(op, shape, &[])),
        }
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, n) = self.last_axis_rows(x, "softmax")?;
        let t = self.value(x);
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        let rg = self.rg(x);
        Ok(self.push(v, Op::Softmax(x), rg))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, n) = self.last_axis_rows(x, "log_softmax")?;
        let t = self.value(x);
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        let rg = self.rg(x);
        Ok(self.push(v, Op::LogSoftmax(x), rg))
    }

    /// Scale each last-axis row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (rows, n) = self.last_axis_rows(x, "l2_normalize")?;
        let t = self.value(x);
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * n..(r + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        let rg = self.rg(x);
        Ok(self.push(v, Op::L2Normalize(x), rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return Err(shape_err("concat", &[], &[])),
        };
        if axis >= first.len() {
            return Err(shape_err("concat", &first, &[axis]));
        }
        let mut total = 0;
        for v in xs {
            let s = self.shape(*v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = self.value(*v);
                let n = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = xs.iter().any(|v| self.rg(*v));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err("slice", &shape, &[axis, start, len]));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(new_shape, out),
            Op::Slice { x, axis, start },
            rg,
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("transpose", &shape, &[]));
        }
        let data = transpose_raw(self.value(x).data(), shape[0], shape[1]);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![shape[1], shape[0]], data),
            Op::Transpose(x),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Broadcast to `shape`; `x` must have the same rank with each axis
    /// either equal to the target or 1.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(x).to_vec();
        let ok = from.len() == shape.len()
            && from.iter().zip(shape).all(|(a, b)| a == b || *a == 1);
        if !ok {
            return Err(shape_err("broadcast_to", &from, shape));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; shape.iter().product()];
        for_each_broadcast(&from, shape, |o, s| out[o] = xd[s]);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), out), Op::BroadcastTo(x), rg))
    }

    /// Nearest-neighbour upsampling along the last axis.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || factor == 0 {
            return Err(shape_err("upsample", &shape, &[factor]));
        }
        let n = *shape.last().unwrap();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(xd.len() * factor);
        for v in xd {
            out.extend(std::iter::repeat_n(*v, factor));
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = n * factor;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(new_shape, out), Op::Upsample(x, factor), rg))
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.numel() != 1 {
            return Err(shape_err("backward", root_val.shape(), &[]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(root_val.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        f: impl FnOnce() -> Tensor,
    ) {
        if self.rg(v) {
            let g = f();
            self.accumulate(grads, v, g);
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let map_g = |f: &dyn Fn(usize, f64) -> f64| {
            Tensor::from_parts(
                g.shape().to_vec(),
                g.data().iter().enumerate().map(|(i, gv)| f(i, *gv)).collect(),
            )
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_with(grads, *a, || g.clone());
                self.accumulate_with(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate_with(grads, *a, || g.clone());
                self.accumulate_with(grads, *b, || map_g(&|_, gv| -gv));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, || map_g(&|i, gv| gv * bv[i]));
                self.accumulate_with(grads, *b, || map_g(&|i, gv| gv * av[i]));
            }
            Op::Affine(x, scale) => {
                self.accumulate_with(grads, *x, || map_g(&|_, gv| gv * scale));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                self.accumulate_with(grads, *a, || {
                    Tensor::from_parts(vec![m, k], gemm(m, n, k, g.data(), (n, 1), tb.data(), (1, n)))
                });
                self.accumulate_with(grads, *b, || {
                    Tensor::from_parts(vec![k, n], gemm(k, m, n, ta.data(), (1, k), g.data(), (n, 1)))
                });
            }
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            } => self.conv_backward(*x, *w, *stride, *padding, g, grads),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, || {
                    map_g(&|i, gv| if xv[i] > 0.0 { gv } else { 0.0 })
                });
            }
            Op::Sigmoid(x) => {
                let yv = y.data();
                self.accumulate_with(grads, *x, || map_g(&|i, gv| gv * yv[i] * (1.0 - yv[i])));
            }
            Op::Exp(x) => {
                let yv = y.data();
                self.accumulate_with(grads, *x, || map_g(&|i, gv| gv * yv[i]));
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, || map_g(&|i, gv| gv / xv[i]));
            }
            Op::Sqrt(x) => {
                let yv = y.data();
                self.accumulate_with(grads, *x, || map_g(&|i, gv| gv / (2.0 * yv[i])));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, || {
                    map_g(&|i, gv| if xv[i] >= *lo && xv[i] <= *hi { gv } else { 0.0 })
                });
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate_with(grads, *x, || Tensor::filled(&shape, g.item()));
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                let v = g.item() / t.numel().max(1) as f64;
                self.accumulate_with(grads, *x, || Tensor::filled(t.shape(), v));
            }
            Op::SumAxis(x, axis) => {
                let shape = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis);
                self.accumulate_with(grads, *x, || {
                    let mut out = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let src = &g.data()[o * inner..(o + 1) * inner];
                        for _ in 0..n {
                            out.extend_from_slice(src);
                        }
                    }
                    Tensor::from_parts(shape.clone(), out)
                });
            }
            Op::Softmax(x) => {
                let n = *y.shape().last().unwrap();
                self.accumulate_with(grads, *x, || {
                    let mut out = vec![0.0; y.numel()];
                    for ((orow, yrow), grow) in out
                        .chunks_mut(n)
                        .zip(y.data().chunks(n))
                        .zip(g.data().chunks(n))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in orow.iter_mut().zip(yrow).zip(grow) {
                            *o = yv * (gv - dot);
                        }
                    }
                    Tensor::from_parts(y.shape().to_vec(), out)
                });
            }
            Op::LogSoftmax(x) => {
                let n = *y.shape().last().unwrap();
                self.accumulate_with(grads, *x, || {
                    let mut out = vec![0.0; y.numel()];
                    for ((orow, yrow), grow) in out
                        .chunks_mut(n)
                        .zip(y.data().chunks(n))
                        .zip(g.data().chunks(n))
                    {
                        let gsum: f64 = grow.iter().sum();
                        for ((o, yv), gv) in orow.iter_mut().zip(yrow).zip(grow) {
                            *o = gv - yv.exp() * gsum;
                        }
                    }
                    Tensor::from_parts(y.shape().to_vec(), out)
                });
            }
            Op::L2Normalize(x) => {
                let n = *y.shape().last().unwrap();
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, || {
                    let mut out = vec![0.0; y.numel()];
                    for (((orow, yrow), grow), xrow) in out
                        .chunks_mut(n)
                        .zip(y.data().chunks(n))
                        .zip(g.data().chunks(n))
                        .zip(xv.chunks(n))
                    {
                        let raw = xrow.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if raw < NORM_EPS {
                            for (o, gv) in orow.iter_mut().zip(grow) {
                                *o = gv / NORM_EPS;
                            }
                            continue;
                        }
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in orow.iter_mut().zip(yrow).zip(grow) {
                            *o = (gv - yv * dot) / raw;
                        }
                    }
                    Tensor::from_parts(y.shape().to_vec(), out)
                });
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(y.shape(), *axis);
                let mut offset = 0;
                for v in xs {
                    let shape = self.shape(*v).to_vec();
                    let n = shape[*axis];
                    self.accumulate_with(grads, *v, || {
                        let mut out = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            out.extend_from_slice(
                                &g.data()[(o * total + offset) * inner..(o * total + offset + n) * inner],
                            );
                        }
                        Tensor::from_parts(shape.clone(), out)
                    });
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis);
                let len = y.shape()[*axis];
                self.accumulate_with(grads, *x, || {
                    let mut out = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        out[(o * n + start) * inner..(o * n + start + len) * inner]
                            .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                    }
                    Tensor::from_parts(shape.clone(), out)
                });
            }
            Op::Transpose(x) => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                self.accumulate_with(grads, *x, || {
                    Tensor::from_parts(vec![n, m], transpose_raw(g.data(), m, n))
                });
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate_with(grads, *x, || Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::BroadcastTo(x) => {
                let from = self.shape(*x).to_vec();
                self.accumulate_with(grads, *x, || {
                    let mut out = vec![0.0; from.iter().product()];
                    for_each_broadcast(&from, y.shape(), |o, s| out[s] += g.data()[o]);
                    Tensor::from_parts(from.clone(), out)
                });
            }
            Op::Upsample(x, factor) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate_with(grads, *x, || {
                    let data = g.data().chunks(*factor).map(|c| c.iter().sum()).collect();
                    Tensor::from_parts(shape, data)
                });
            }
        }
    }

    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let geom = self
            .conv_geom(x, w, stride, padding)
            .expect("conv geometry validated in forward");
        let xd = self.value(x).data();
        let wt = self.value(w);
        let wd = wt.data();
        let (need_x, need_w) = (self.rg(x), self.rg(w));
        let rows = geom.rows();
        let item_in = geom.c_in * geom.len;
        let item_out = geom.c_out * geom.len_out;

        let per_item: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)> = (0..geom.batch)
            .into_par_iter()
            .map(|b| {
                let gb = &g.data()[b * item_out..(b + 1) * item_out];
                let gw = need_w.then(|| {
                    let cols = geom.im2col(&xd[b * item_in..(b + 1) * item_in]);
                    let l = geom.len_out;
                    gemm(geom.c_out, l, rows, gb, (l, 1), &cols, (1, l))
                });
                let gx = need_x.then(|| {
                    let l = geom.len_out;
                    let gcols = gemm(rows, geom.c_out, l, wd, (1, rows), gb, (l, 1));
                    let mut gx = vec![0.0; item_in];
                    geom.col2im(&gcols, &mut gx);
                    gx
                });
                (gw, gx)
            })
            .collect();

        if need_w {
            let mut total = vec![0.0; wd.len()];
            for (gw, _) in &per_item {
                if let Some(gw) = gw {
                    total.iter_mut().zip(gw).for_each(|(t, v)| *t += v);
                }
            }
            self.accumulate(grads, w, Tensor::from_parts(wt.shape().to_vec(), total));
        }
        if need_x {
            let mut total = Vec::with_capacity(geom.batch * item_in);
            for (_, gx) in per_item {
                total.extend(gx.expect("input gradient requested"));
            }
            self.accumulate(grads, x, Tensor::from_parts(self.shape(x).to_vec(), total));
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
