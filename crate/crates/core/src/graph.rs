//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order: an operation can only consume nodes that
//! exist. [`Graph::backward`] walks the nodes in reverse and accumulates
//! vector-Jacobian products into each input.
//!
//! Feature maps are `C×T` or batched `B×C×T` tensors; every feature-map
//! operation accepts either rank and preserves it.
//!
//! ```
//! use cryecapa::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

use crate::error::{Error, Result};
use crate::flops;
use crate::tensor::{split_axis, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output length equals input length. Pads split evenly, extra one on the right.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// Batch-norm flavour for [`Graph::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a> {
    /// Normalise with statistics of the current input.
    Train { eps: f64 },
    /// Normalise with stored running statistics.
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
        eps: f64,
    },
}

/// Per-channel statistics of a training-mode batch norm (biased variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values each statistic was computed over.
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, f64),
    MulScalar {
        x: Var,
        s: Var,
    },
    Pointwise(Var, Activation),
    Sqrt(Var),
    ClampMin(Var, f64),
    Softmax {
        x: Var,
        axis: usize,
    },
    Reduce {
        x: Var,
        axis: usize,
        mean: bool,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    ScaleChannels {
        x: Var,
        s: Var,
    },
    ScaleTime {
        x: Var,
        s: Var,
    },
    Outer {
        channel: Var,
        time: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation plus gradient slots.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

/// `(batch, channels, time)` of a rank-2 or rank-3 feature map.
fn fm_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, t] => Ok((1, c, t)),
        [b, c, t] => Ok((b, c, t)),
        _ => Err(Error::shape(op, format!("expected C×T or B×C×T, got {shape:?}"))),
    }
}

/// `(batch, width)` of a rank-1 or rank-2 per-sample vector.
fn vec_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n] => Ok((1, n)),
        [b, n] => Ok((b, n)),
        _ => Err(Error::shape(op, format!("expected N or B×N, got {shape:?}"))),
    }
}

/// Padding and output length of a 1-D convolution.
pub fn conv_geometry(
    len: usize,
    kernel: usize,
    dilation: usize,
    padding: Padding,
) -> Result<(usize, usize, usize)> {
    let span = (kernel - 1) * dilation + 1;
    match padding {
        Padding::Same => {
            let total = span - 1;
            Ok((total / 2, total - total / 2, len))
        }
        Padding::Valid => {
            if len < span {
                return Err(Error::InputTooShort { len, span });
            }
            Ok((0, 0, len - span + 1))
        }
    }
}

fn pad_rows(x: &[f64], rows: usize, len: usize, left: usize, right: usize) -> Vec<f64> {
    let padded = len + left + right;
    let mut out = vec![0.0; rows * padded];
    for r in 0..rows {
        out[r * padded + left..r * padded + left + len].copy_from_slice(&x[r * len..(r + 1) * len]);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass. Leaves that require a gradient
    /// but were unreachable from the loss report zeros.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Result<Var> {
        let rg = self.any_grad(inputs);
        Ok(self.push(Tensor::new(shape, data)?, rg, op))
    }

    // ---------------------------------------------------------------- conv

    /// Dilated 1-D convolution of a `C_in×T` map with a `C_out×C_in×k` kernel.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c_in, len) = fm_dims("conv1d", &xs)?;
        let (c_out, w_in, k) = match *self.shape(w) {
            [o, i, k] => (o, i, k),
            ref s => return Err(Error::shape("conv1d", format!("kernel must be C_out×C_in×k, got {s:?}"))),
        };
        if dilation == 0 {
            return Err(Error::shape("conv1d", "dilation must be >= 1"));
        }
        if w_in != c_in {
            return Err(Error::shape(
                "conv1d",
                format!("kernel expects {w_in} input channels, input has {c_in}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv1d", format!("bias shape {:?} != [{c_out}]", self.shape(b))));
            }
        }
        let (left, right, t_out) = conv_geometry(len, k, dilation, padding)?;
        let padded_len = len + left + right;
        let xp = pad_rows(self.value(x).data(), batch * c_in, len, left, right);
        let wd = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; batch * c_out * t_out];
        for bi in 0..batch {
            for co in 0..c_out {
                let row = &mut out[(bi * c_out + co) * t_out..][..t_out];
                if let Some(bias) = bias {
                    row.fill(bias[co]);
                }
                for ci in 0..c_in {
                    let src_row = &xp[(bi * c_in + ci) * padded_len..][..padded_len];
                    for j in 0..k {
                        let wv = wd[(co * c_in + ci) * k + j];
                        let src = &src_row[j * dilation..j * dilation + t_out];
                        for (o, s) in row.iter_mut().zip(src) {
                            *o += wv * s;
                        }
                    }
                    flops::record(2 * (k * t_out) as u64);
                }
                if bias.is_some() {
                    flops::record(t_out as u64);
                }
            }
        }
        let shape = if xs.len() == 2 { vec![c_out, t_out] } else { vec![batch, c_out, t_out] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.derived(
            shape,
            out,
            &inputs,
            Op::Conv1d {
                x,
                w,
                b,
                dilation,
                pad_left: left,
                pad_right: right,
            },
        )
    }

    // ---------------------------------------------------------- linear algebra

    /// `M×K · K×N` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = match *self.shape(a) {
            [m, k] => (m, k),
            ref s => return Err(Error::shape("matmul", format!("lhs must be 2-D, got {s:?}"))),
        };
        let n = match *self.shape(b) {
            [kb, n] if kb == k => n,
            ref s => return Err(Error::shape("matmul", format!("rhs {s:?} incompatible with lhs [{m}, {k}]"))),
        };
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        flops::record(2 * (m * k * n) as u64);
        self.derived(vec![m, n], out, &[a, b], Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = match *self.shape(a) {
            [m, n] => (m, n),
            ref s => return Err(Error::shape("transpose", format!("expected 2-D, got {s:?}"))),
        };
        let out = transpose_raw(self.value(a).data(), m, n);
        self.derived(vec![n, m], out, &[a], Op::Transpose(a))
    }

    /// `y = W·x + b` for `x` of shape `N` or `B×N` and `W` of shape `M×N`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, n) = vec_dims("dense", &xs)?;
        let m = match *self.shape(w) {
            [m, wn] if wn == n => m,
            ref s => return Err(Error::shape("dense", format!("weight {s:?} incompatible with input width {n}"))),
        };
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::shape("dense", format!("bias shape {:?} != [{m}]", self.shape(b))));
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; batch * m];
        for bi in 0..batch {
            let xr = &xd[bi * n..(bi + 1) * n];
            for mi in 0..m {
                let wr = &wd[mi * n..(mi + 1) * n];
                let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
                out[bi * m + mi] = dot + bias.map_or(0.0, |b| b[mi]);
            }
        }
        flops::record((2 * batch * m * n + if b.is_some() { batch * m } else { 0 }) as u64);
        let shape = if xs.len() == 1 { vec![m] } else { vec![batch, m] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.derived(shape, out, &inputs, Op::Dense { x, w, b })
    }

    // ------------------------------------------------------------ elementwise

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        flops::record(out.len() as u64);
        let shape = self.shape(a).to_vec();
        self.derived(shape, out, &[a, b], node)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        flops::record(out.len() as u64);
        let shape = self.shape(x).to_vec();
        self.derived(shape, out, &[x], Op::MulConst(x, c))
    }

    /// Multiply every element of `x` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("mul_scalar", format!("scale must have one element, got {:?}", self.shape(s))));
        }
        let sv = self.value(s).data()[0];
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * sv).collect();
        flops::record(out.len() as u64);
        let shape = self.shape(x).to_vec();
        self.derived(shape, out, &[x, s], Op::MulScalar { x, s })
    }

    pub fn pointwise(&mut self, x: Var, act: Activation) -> Result<Var> {
        let f: fn(f64) -> f64 = match act {
            Activation::Relu => |v| v.max(0.0),
            Activation::Sigmoid => sigmoid,
            Activation::Tanh => f64::tanh,
        };
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| f(v)).collect();
        flops::record(out.len() as u64);
        let shape = self.shape(x).to_vec();
        self.derived(shape, out, &[x], Op::Pointwise(x, act))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Activation::Tanh)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.sqrt()).collect();
        flops::record(out.len() as u64);
        let shape = self.shape(x).to_vec();
        self.derived(shape, out, &[x], Op::Sqrt(x))
    }

    /// `max(x, floor)`; the gradient passes where `x >= floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.max(floor)).collect();
        flops::record(out.len() as u64);
        let shape = self.shape(x).to_vec();
        self.derived(shape, out, &[x], Op::ClampMin(x, floor))
    }

    // ------------------------------------------------------------- reductions

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::shape(op, format!("axis {axis} out of range for {:?}", self.shape(x))));
        }
        Ok(())
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len).map(|l| xd[base + l * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (xd[base + l * inner] - max).exp();
                    out[base + l * inner] = e;
                    total += e;
                }
                for l in 0..len {
                    out[base + l * inner] /= total;
                }
            }
        }
        flops::record(out.len() as u64);
        self.derived(shape, out, &[x], Op::Softmax { x, axis })
    }

    fn reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        self.check_axis(if mean { "mean" } else { "sum" }, x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xd[(o * len + l) * inner..][..inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        if mean {
            let scale = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= scale);
        }
        flops::record(xd.len() as u64);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.derived(out_shape, out, &[x], Op::Reduce { x, axis, mean })
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    /// Sum of every element, as a one-element tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[n])?;
        self.sum(flat, 0)
    }

    /// Mean over the time axis: `C×T → C`, `B×C×T → B×C`.
    pub fn global_avg_pool_time(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        fm_dims("global_avg_pool_time", self.shape(x))?;
        self.mean(x, rank - 1)
    }

    /// Sliding max over time with `-inf` "same" padding. Gradient goes to
    /// the earliest maximal element of each window.
    pub fn max_pool_time(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        if kernel == 0 || stride == 0 {
            return Err(Error::shape("max_pool_time", "kernel and stride must be >= 1"));
        }
        let xs = self.shape(x).to_vec();
        let (batch, c, len) = fm_dims("max_pool_time", &xs)?;
        let left = (kernel - 1) / 2;
        let t_out = (len - 1) / stride + 1;
        let xd = self.value(x).data();
        let mut out = vec![0.0; batch * c * t_out];
        let mut argmax = vec![0; out.len()];
        for row in 0..batch * c {
            let src = &xd[row * len..(row + 1) * len];
            for t in 0..t_out {
                let start = (t * stride) as isize - left as isize;
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for j in 0..kernel as isize {
                    let p = start + j;
                    if p < 0 || p >= len as isize {
                        continue;
                    }
                    let v = src[p as usize];
                    if best_i == usize::MAX || v > best {
                        best = v;
                        best_i = p as usize;
                    }
                }
                out[row * t_out + t] = best;
                argmax[row * t_out + t] = row * len + best_i;
            }
        }
        flops::record((kernel * out.len()) as u64);
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = t_out;
        self.derived(shape, out, &[x], Op::MaxPool { x, argmax })
    }

    // ------------------------------------------------------------- structure

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat", "no parts"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let block = len * inner;
                out.extend_from_slice(&self.value(p).data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.derived(shape, out, parts, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Stack feature maps along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_channels", "no parts"))?;
        let base = self.shape(first).to_vec();
        let (b0, _, t0) = fm_dims("concat_channels", &base)?;
        for &p in parts {
            let s = self.shape(p).to_vec();
            let (b, _, t) = fm_dims("concat_channels", &s)?;
            if t != t0 {
                return Err(Error::TimeMismatch(t0, t));
            }
            if b != b0 || s.len() != base.len() {
                return Err(Error::shape("concat_channels", format!("{s:?} vs {base:?}")));
            }
        }
        self.concat(parts, base.len() - 2)
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("narrow", x, axis)?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", format!("[{start}, {}) out of range for axis of {}", start + len, shape[axis])));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.derived(out_shape, out, &[x], Op::Narrow { x, axis, start })
    }

    /// Split a feature map into consecutive channel groups.
    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let shape = self.shape(x).to_vec();
        let (_, c, _) = fm_dims("split_channels", &shape)?;
        if sizes.iter().sum::<usize>() != c {
            return Err(Error::shape("split_channels", format!("sizes {sizes:?} do not sum to {c}")));
        }
        let axis = shape.len() - 2;
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &n in sizes {
            out.push(self.narrow(x, axis, start, n)?);
            start += n;
        }
        Ok(out)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let data = self.value(x).data().to_vec();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        self.derived(shape.to_vec(), data, &[x], Op::Reshape(x))
    }

    // ------------------------------------------------------------- broadcast

    fn per_sample(&self, op: &'static str, x: Var, v: Var, axis_len: usize, batch: usize, rank: usize) -> Result<()> {
        let vs = self.shape(v);
        let ok = match rank {
            2 => vs == [axis_len],
            _ => vs == [batch, axis_len],
        };
        if !ok {
            return Err(Error::shape(op, format!("{vs:?} does not match feature map {:?}", self.shape(x))));
        }
        Ok(())
    }

    /// Multiply channel `c` of `x` by `s[c]` (channel-wise scaling).
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c, t) = fm_dims("scale_channels", &xs)?;
        self.per_sample("scale_channels", x, s, c, batch, xs.len())?;
        let xd = self.value(x).data();
        let sd = self.value(s).data();
        let out: Vec<f64> = xd.iter().enumerate().map(|(i, v)| v * sd[i / t]).collect();
        flops::record(out.len() as u64);
        self.derived(xs, out, &[x, s], Op::ScaleChannels { x, s })
    }

    /// Multiply frame `t` of `x` by `s[t]`.
    pub fn scale_time(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c, t) = fm_dims("scale_time", &xs)?;
        self.per_sample("scale_time", x, s, t, batch, xs.len())?;
        let xd = self.value(x).data();
        let sd = self.value(s).data();
        let out: Vec<f64> = xd
            .iter()
            .enumerate()
            .map(|(i, v)| v * sd[(i / (c * t)) * t + i % t])
            .collect();
        flops::record(out.len() as u64);
        self.derived(xs, out, &[x, s], Op::ScaleTime { x, s })
    }

    /// Rank-1 mask `m[c, t] = channel[c] · time[t]` per sample.
    pub fn outer(&mut self, channel: Var, time: Var) -> Result<Var> {
        let cs = self.shape(channel).to_vec();
        let ts = self.shape(time).to_vec();
        let (bc, c) = vec_dims("outer", &cs)?;
        let (bt, t) = vec_dims("outer", &ts)?;
        if bc != bt || cs.len() != ts.len() {
            return Err(Error::shape("outer", format!("{cs:?} vs {ts:?}")));
        }
        let cd = self.value(channel).data();
        let td = self.value(time).data();
        let mut out = Vec::with_capacity(bc * c * t);
        for b in 0..bc {
            for ci in 0..c {
                out.extend(td[b * t..(b + 1) * t].iter().map(|tv| cd[b * c + ci] * tv));
            }
        }
        flops::record(out.len() as u64);
        let shape = if cs.len() == 1 { vec![c, t] } else { vec![bc, c, t] };
        self.derived(shape, out, &[channel, time], Op::Outer { channel, time })
    }

    // ---------------------------------------------------------------- norms

    /// Per-channel batch norm over batch and time, then affine `gamma`, `beta`.
    /// In training mode the batch statistics are returned for running-average updates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        let (batch, c, t) = fm_dims("batch_norm", &xs)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batch_norm", format!("affine params must be [{c}]")));
        }
        let xd = self.value(x).data();
        let count = batch * t;
        let (mean, var, eps, train) = match mode {
            NormMode::Train { eps } => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..batch {
                    for ci in 0..c {
                        mean[ci] += xd[(b * c + ci) * t..][..t].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for b in 0..batch {
                    for ci in 0..c {
                        var[ci] += xd[(b * c + ci) * t..][..t].iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var, eps, true)
            }
            NormMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics width mismatch"));
                }
                (running_mean.to_vec(), running_var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (i, v) in xd.iter().enumerate() {
            let ci = (i / t) % c;
            xhat[i] = (v - mean[ci]) * inv_std[ci];
            out[i] = gd[ci] * xhat[i] + bd[ci];
        }
        flops::record(2 * out.len() as u64);
        let stats = train.then(|| BatchStats { mean, var, count });
        let v = self.derived(
            xs,
            out,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        )?;
        Ok((v, stats))
    }

    // ----------------------------------------------------------------- loss

    /// Mean softmax cross-entropy of `logits` (`K` or `B×K`) against class ids,
    /// computed as `logsumexp(z) − z[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        let (batch, k) = vec_dims("cross_entropy", &ls)?;
        if labels.len() != batch {
            return Err(Error::shape("cross_entropy", format!("{} labels for batch of {batch}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        let zd = self.value(logits).data();
        let mut probs = vec![0.0; zd.len()];
        let mut loss = 0.0;
        for b in 0..batch {
            let row = &zd[b * k..(b + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[labels[b]];
            for j in 0..k {
                probs[b * k + j] = (row[j] - lse).exp();
            }
        }
        loss /= batch as f64;
        self.derived(
            vec![1],
            vec![loss],
            &[logits],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    // -------------------------------------------------------------- backward

    /// Accumulate gradients of the scalar `loss` into every node that needs one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && g.is_none() {
                *g = Some(vec![0.0; node.value.numel()]);
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&contribution).for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn backprop(&self, i: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv1d {
                x,
                w,
                b,
                dilation,
                pad_left,
                pad_right,
            } => {
                let (batch, c_in, len) = fm_dims("conv1d", self.shape(x)).unwrap();
                let [c_out, _, k] = *self.shape(w) else { unreachable!() };
                let t_out = node.value.shape().last().copied().unwrap();
                let padded_len = len + pad_left + pad_right;
                let xp = pad_rows(self.value(x).data(), batch * c_in, len, pad_left, pad_right);
                let wd = self.value(w).data();
                let mut dxp = vec![0.0; xp.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; c_out];
                for bi in 0..batch {
                    for co in 0..c_out {
                        let go = &gout[(bi * c_out + co) * t_out..][..t_out];
                        db[co] += go.iter().sum::<f64>();
                        for ci in 0..c_in {
                            let row = (bi * c_in + ci) * padded_len;
                            for j in 0..k {
                                let off = row + j * dilation;
                                let src = &xp[off..off + t_out];
                                dw[(co * c_in + ci) * k + j] += go.iter().zip(src).map(|(g, s)| g * s).sum::<f64>();
                                let wv = wd[(co * c_in + ci) * k + j];
                                for (d, g) in dxp[off..off + t_out].iter_mut().zip(go) {
                                    *d += wv * g;
                                }
                            }
                        }
                    }
                }
                let mut dx = vec![0.0; batch * c_in * len];
                for r in 0..batch * c_in {
                    dx[r * len..(r + 1) * len].copy_from_slice(&dxp[r * padded_len + pad_left..][..len]);
                }
                self.accumulate(grads, x, dx);
                self.accumulate(grads, w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, b, db);
                }
            }
            &Op::MatMul(a, b) => {
                let [m, k] = *self.shape(a) else { unreachable!() };
                let n = self.shape(b)[1];
                let ad = self.value(a).data();
                let bd = self.value(b).data();
                let bt = transpose_raw(bd, k, n);
                self.accumulate(grads, a, matmul_raw(gout, &bt, m, n, k));
                let at = transpose_raw(ad, m, k);
                self.accumulate(grads, b, matmul_raw(&at, gout, k, m, n));
            }
            &Op::Transpose(a) => {
                let [m, n] = *self.shape(a) else { unreachable!() };
                self.accumulate(grads, a, transpose_raw(gout, n, m));
            }
            &Op::Dense { x, w, b } => {
                let (batch, n) = vec_dims("dense", self.shape(x)).unwrap();
                let m = self.shape(w)[0];
                let xd = self.value(x).data();
                let wd = self.value(w).data();
                let mut dx = vec![0.0; batch * n];
                let mut dw = vec![0.0; m * n];
                let mut db = vec![0.0; m];
                for bi in 0..batch {
                    for mi in 0..m {
                        let g = gout[bi * m + mi];
                        db[mi] += g;
                        for ni in 0..n {
                            dx[bi * n + ni] += g * wd[mi * n + ni];
                            dw[mi * n + ni] += g * xd[bi * n + ni];
                        }
                    }
                }
                self.accumulate(grads, x, dx);
                self.accumulate(grads, w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, gout.to_vec());
                self.accumulate(grads, b, gout.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, gout.to_vec());
                self.accumulate(grads, b, gout.iter().map(|g| -g).collect());
            }
            &Op::Mul(a, b) => {
                let ad = self.value(a).data();
                let bd = self.value(b).data();
                self.accumulate(grads, a, gout.iter().zip(bd).map(|(g, y)| g * y).collect());
                self.accumulate(grads, b, gout.iter().zip(ad).map(|(g, x)| g * x).collect());
            }
            &Op::MulConst(x, c) => {
                self.accumulate(grads, x, gout.iter().map(|g| g * c).collect());
            }
            &Op::MulScalar { x, s } => {
                let sv = self.value(s).data()[0];
                let xd = self.value(x).data();
                self.accumulate(grads, x, gout.iter().map(|g| g * sv).collect());
                let ds: f64 = gout.iter().zip(xd).map(|(g, v)| g * v).sum();
                self.accumulate(grads, s, vec![ds]);
            }
            &Op::Pointwise(x, act) => {
                let xd = self.value(x).data();
                let dx = match act {
                    Activation::Relu => gout.iter().zip(xd).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect(),
                    Activation::Sigmoid => gout.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Activation::Tanh => gout.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
                };
                self.accumulate(grads, x, dx);
            }
            &Op::Sqrt(x) => {
                self.accumulate(grads, x, gout.iter().zip(out).map(|(g, y)| 0.5 * g / y).collect());
            }
            &Op::ClampMin(x, floor) => {
                let xd = self.value(x).data();
                self.accumulate(grads, x, gout.iter().zip(xd).map(|(g, v)| if *v >= floor { *g } else { 0.0 }).collect());
            }
            &Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), axis);
                let mut dx = vec![0.0; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|l| out[base + l * inner] * gout[base + l * inner]).sum();
                        for l in 0..len {
                            let idx = base + l * inner;
                            dx[idx] = out[idx] * (gout[idx] - dot);
                        }
                    }
                }
                self.accumulate(grads, x, dx);
            }
            &Op::Reduce { x, axis, mean } => {
                let (outer, len, inner) = split_axis(self.shape(x), axis);
                let scale = if mean { 1.0 / len as f64 } else { 1.0 };
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for (d, g) in dx[(o * len + l) * inner..][..inner].iter_mut().zip(&gout[o * inner..(o + 1) * inner]) {
                            *d = g * scale;
                        }
                    }
                }
                self.accumulate(grads, x, dx);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (g, &src) in gout.iter().zip(argmax) {
                    dx[src] += g;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    let mut dp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        dp.extend_from_slice(&gout[(o * total + offset) * inner..(o * total + offset + len) * inner]);
                    }
                    self.accumulate(grads, p, dp);
                    offset += len;
                }
            }
            &Op::Narrow { x, axis, start } => {
                let (outer, full, inner) = split_axis(self.shape(x), axis);
                let len = node.value.shape()[axis];
                let mut dx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    dx[(o * full + start) * inner..(o * full + start + len) * inner]
                        .copy_from_slice(&gout[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, x, dx);
            }
            &Op::Reshape(x) => self.accumulate(grads, x, gout.to_vec()),
            &Op::ScaleChannels { x, s } => {
                let (_, _, t) = fm_dims("scale_channels", self.shape(x)).unwrap();
                let xd = self.value(x).data();
                let sd = self.value(s).data();
                let dx = gout.iter().enumerate().map(|(i, g)| g * sd[i / t]).collect();
                let mut ds = vec![0.0; sd.len()];
                for (i, g) in gout.iter().enumerate() {
                    ds[i / t] += g * xd[i];
                }
                self.accumulate(grads, x, dx);
                self.accumulate(grads, s, ds);
            }
            &Op::ScaleTime { x, s } => {
                let (_, c, t) = fm_dims("scale_time", self.shape(x)).unwrap();
                let xd = self.value(x).data();
                let sd = self.value(s).data();
                let mut dx = vec![0.0; xd.len()];
                let mut ds = vec![0.0; sd.len()];
                for (i, g) in gout.iter().enumerate() {
                    let si = (i / (c * t)) * t + i % t;
                    dx[i] = g * sd[si];
                    ds[si] += g * xd[i];
                }
                self.accumulate(grads, x, dx);
                self.accumulate(grads, s, ds);
            }
            &Op::Outer { channel, time } => {
                let (batch, c) = vec_dims("outer", self.shape(channel)).unwrap();
                let (_, t) = vec_dims("outer", self.shape(time)).unwrap();
                let cd = self.value(channel).data();
                let td = self.value(time).data();
                let mut dc = vec![0.0; cd.len()];
                let mut dt = vec![0.0; td.len()];
                for b in 0..batch {
                    for ci in 0..c {
                        for ti in 0..t {
                            let g = gout[(b * c + ci) * t + ti];
                            dc[b * c + ci] += g * td[b * t + ti];
                            dt[b * t + ti] += g * cd[b * c + ci];
                        }
                    }
                }
                self.accumulate(grads, channel, dc);
                self.accumulate(grads, time, dt);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (batch, c, t) = fm_dims("batch_norm", self.shape(*x)).unwrap();
                let gd = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for (i, g) in gout.iter().enumerate() {
                    let ci = (i / t) % c;
                    dgamma[ci] += g * xhat[i];
                    dbeta[ci] += g;
                    let dxh = g * gd[ci];
                    sum_dxhat[ci] += dxh;
                    sum_dxhat_xhat[ci] += dxh * xhat[i];
                }
                let n = (batch * t) as f64;
                let dx = gout
                    .iter()
                    .enumerate()
                    .map(|(i, g)| {
                        let ci = (i / t) % c;
                        let dxh = g * gd[ci];
                        if *train {
                            inv_std[ci] / n * (n * dxh - sum_dxhat[ci] - xhat[i] * sum_dxhat_xhat[ci])
                        } else {
                            dxh * inv_std[ci]
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let batch = labels.len();
                let k = probs.len() / batch;
                let scale = gout[0] / batch as f64;
                let mut dz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (b, &l) in labels.iter().enumerate() {
                    dz[b * k + l] -= scale;
                }
                self.accumulate(grads, *logits, dz);
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            for (o, bv) in row.iter_mut().zip(&b[kk * n..(kk + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
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
