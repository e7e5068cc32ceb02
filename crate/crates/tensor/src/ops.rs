use crate::error::{mismatch, shape_err, Result, TensorError};
use crate::linalg::gemm;
use crate::tensor::{numel, Tensor};

/// Elementwise functions available to [`Tensor::map`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    /// Slope 0.2 on the negative side.
    LeakyRelu,
    Sigmoid,
    Softplus,
    Exp,
    Sin,
    Cos,
    Neg,
    Log,
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Neg => -x,
            Unary::Log => x.ln(),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Neg => -1.0,
            Unary::Log => 1.0 / x,
        }
    }
}

/// Backward rule for ops defined outside this crate.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: one entry per parent, `None` where the parent
    /// needs no gradient.
    fn backward(
        &self,
        parents: &[Tensor],
        output: &[f64],
        grad_out: &[f64],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) enum Op {
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Map(Tensor, Unary),
    Sum(Tensor, Option<usize>),
    Mean(Tensor, Option<usize>),
    Reshape(Tensor),
    Permute(Tensor, Vec<usize>),
    Concat(Vec<Tensor>, usize),
    Im2Col(Tensor, ConvGeom),
    Custom(Vec<Tensor>, Box<dyn CustomOp>),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![a, b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Map(a, _)
            | Op::Sum(a, _)
            | Op::Mean(a, _)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Im2Col(a, _) => vec![a],
            Op::Concat(ts, _) | Op::Custom(ts, _) => ts.iter().collect(),
        }
    }

    /// Gradients for each parent, aligned with [`Op::parents`].
    pub(crate) fn backward(&self, out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let need = |t: &Tensor| t.requires_grad();
        match self {
            Op::MatMul(a, b) => {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let p = b.shape()[1];
                let ga = need(a).then(|| {
                    let mut out = vec![0.0; m * n];
                    gemm(m, p, n, g, false, &b.data(), true, &mut out);
                    out
                });
                let gb = need(b).then(|| {
                    let mut out = vec![0.0; n * p];
                    gemm(n, m, p, &a.data(), true, g, false, &mut out);
                    out
                });
                vec![ga, gb]
            }
            Op::Transpose(a) => {
                let (r, c) = (a.shape()[0], a.shape()[1]);
                // output is c×r; gradient wrt input is its transpose back
                vec![Some(transpose_raw(g, c, r))]
            }
            Op::Add(a, b) => vec![need(a).then(|| g.to_vec()), need(b).then(|| g.to_vec())],
            Op::Sub(a, b) => vec![
                need(a).then(|| g.to_vec()),
                need(b).then(|| g.iter().map(|v| -v).collect()),
            ],
            Op::Mul(a, b) => {
                let ga =
                    need(a).then(|| g.iter().zip(b.data().iter()).map(|(g, b)| g * b).collect());
                let gb =
                    need(b).then(|| g.iter().zip(a.data().iter()).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }
            Op::AddRow(x, b) => {
                let n = b.numel();
                let gb = need(b).then(|| {
                    let mut acc = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        acc.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    acc
                });
                vec![need(x).then(|| g.to_vec()), gb]
            }
            Op::Scale(_, s) => vec![Some(g.iter().map(|v| v * s).collect())],
            Op::AddScalar(_) => vec![Some(g.to_vec())],
            Op::Map(x, f) => {
                let xd = x.data();
                let yd = out.data();
                let gx = g
                    .iter()
                    .zip(xd.iter().zip(yd.iter()))
                    .map(|(g, (&x, &y))| g * f.derivative(x, y))
                    .collect();
                vec![Some(gx)]
            }
            Op::Sum(x, axis) => vec![Some(reduce_backward(x.shape(), *axis, g, 1.0))],
            Op::Mean(x, axis) => {
                let count = match axis {
                    Some(ax) => x.shape()[*ax],
                    None => x.numel(),
                };
                vec![Some(reduce_backward(
                    x.shape(),
                    *axis,
                    g,
                    1.0 / count as f64,
                ))]
            }
            Op::Reshape(_) => vec![Some(g.to_vec())],
            Op::Permute(_, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                vec![Some(permute_raw(g, out.shape(), &inverse))]
            }
            Op::Concat(ts, axis) => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let inner: usize = out.shape()[axis + 1..].iter().product();
                let total = out.shape()[*axis];
                let mut offset = 0;
                ts.iter()
                    .map(|t| {
                        let len = t.shape()[*axis];
                        let grad = need(t).then(|| {
                            let mut buf = Vec::with_capacity(t.numel());
                            for o in 0..outer {
                                let start = (o * total + offset) * inner;
                                buf.extend_from_slice(&g[start..start + len * inner]);
                            }
                            buf
                        });
                        offset += len;
                        grad
                    })
                    .collect()
            }
            Op::Im2Col(_, geom) => vec![Some(crate::conv::col2im(g, geom))],
            Op::Custom(ts, op) => {
                let out_data = out.data();
                op.backward(ts, &out_data, g)
            }
        }
    }
}

fn reduce_backward(shape: &[usize], axis: Option<usize>, g: &[f64], scale: f64) -> Vec<f64> {
    match axis {
        None => vec![g[0] * scale; numel(shape)],
        Some(ax) => {
            let outer: usize = shape[..ax].iter().product();
            let len = shape[ax];
            let inner: usize = shape[ax + 1..].iter().product();
            let mut out = vec![0.0; numel(shape)];
            for o in 0..outer {
                for k in 0..len {
                    let dst = &mut out[(o * len + k) * inner..(o * len + k + 1) * inner];
                    dst.iter_mut()
                        .zip(&g[o * inner..(o + 1) * inner])
                        .for_each(|(d, s)| *d = s * scale);
                }
            }
            out
        }
    }
}

pub(crate) fn transpose_raw(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` takes input axis `axes[i]`.
fn permute_raw(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Tensor {
    /// Matrix product of `[m×n]` and `[n×p]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(mismatch("matmul", self.shape(), other.shape()));
        }
        let (m, n, p) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let mut out = vec![0.0; m * p];
        gemm(m, n, p, &self.data(), false, &other.data(), false, &mut out);
        Ok(Tensor::from_op(
            vec![m, p],
            out,
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(shape_err(
                "transpose",
                format!("expected rank 2, got {:?}", self.shape()),
            ));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let out = transpose_raw(&self.data(), r, c);
        Ok(Tensor::from_op(
            vec![c, r],
            out,
            Op::Transpose(self.clone()),
        ))
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let a = self.data();
        let b = other.data();
        a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let out = self.zip_with(other, |a, b| a + b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let out = self.zip_with(other, |a, b| a - b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let out = self.zip_with(other, |a, b| a * b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    /// Adds a length-`n` vector to every row of an `[m×n]` matrix.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != self.shape()[1] {
            return Err(mismatch("add_row", self.shape(), bias.shape()));
        }
        let b = bias.data();
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(b.len()) {
            row.iter_mut().zip(b.iter()).for_each(|(x, b)| *x += b);
        }
        drop(b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::AddRow(self.clone(), bias.clone()),
        ))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let out = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Scale(self.clone(), s))
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let out = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::AddScalar(self.clone()))
    }

    pub fn map(&self, f: Unary) -> Result<Tensor> {
        let data = self.data();
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            if matches!(f, Unary::Log | Unary::Softplus) {
                return Err(TensorError::Domain {
                    op: "map",
                    msg: format!("{f:?} of non-finite value {bad}"),
                });
            }
        }
        if f == Unary::Log {
            if let Some(bad) = data.iter().find(|&&v| v <= 0.0) {
                return Err(TensorError::Domain {
                    op: "map",
                    msg: format!("log of non-positive value {bad}"),
                });
            }
        }
        let out = data.iter().map(|&x| f.apply(x)).collect();
        drop(data);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Map(self.clone(), f),
        ))
    }

    pub fn relu(&self) -> Tensor {
        self.map(Unary::Relu).expect("relu is total")
    }

    pub fn leaky_relu(&self) -> Tensor {
        self.map(Unary::LeakyRelu).expect("leaky_relu is total")
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(Unary::Sigmoid).expect("sigmoid is total")
    }

    pub fn softplus(&self) -> Result<Tensor> {
        self.map(Unary::Softplus)
    }

    pub fn neg(&self) -> Tensor {
        self.map(Unary::Neg).expect("neg is total")
    }

    fn reduce(&self, axis: Option<usize>, scale_by_len: bool) -> Result<(Vec<usize>, Vec<f64>)> {
        let data = self.data();
        match axis {
            None => {
                let s: f64 = data.iter().sum();
                let v = if scale_by_len {
                    s / data.len() as f64
                } else {
                    s
                };
                Ok((Vec::new(), vec![v]))
            }
            Some(ax) => {
                if ax >= self.rank() {
                    return Err(shape_err(
                        "reduce",
                        format!("axis {ax} out of range for shape {:?}", self.shape()),
                    ));
                }
                let shape = self.shape();
                let outer: usize = shape[..ax].iter().product();
                let len = shape[ax];
                let inner: usize = shape[ax + 1..].iter().product();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for k in 0..len {
                        let src = &data[(o * len + k) * inner..(o * len + k + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                    if scale_by_len {
                        dst.iter_mut().for_each(|d| *d /= len as f64);
                    }
                }
                let mut out_shape = shape.to_vec();
                out_shape.remove(ax);
                Ok((out_shape, out))
            }
        }
    }

    /// Sum over one axis (removing it) or over everything.
    pub fn sum(&self, axis: Option<usize>) -> Result<Tensor> {
        let (shape, out) = self.reduce(axis, false)?;
        Ok(Tensor::from_op(shape, out, Op::Sum(self.clone(), axis)))
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Tensor> {
        let (shape, out) = self.reduce(axis, true)?;
        Ok(Tensor::from_op(shape, out, Op::Mean(self.clone(), axis)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(mismatch("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let mut seen = vec![false; self.rank()];
        let valid = axes.len() == self.rank()
            && axes
                .iter()
                .all(|&a| a < seen.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(shape_err(
                "permute",
                format!("axes {axes:?} invalid for shape {:?}", self.shape()),
            ));
        }
        let out = permute_raw(&self.data(), self.shape(), axes);
        let shape = axes.iter().map(|&a| self.shape()[a]).collect();
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Permute(self.clone(), axes.to_vec()),
        ))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no tensors given"))?;
        if axis >= first.rank() {
            return Err(shape_err("concat", format!("axis {axis} out of range")));
        }
        for t in &parts[1..] {
            let compatible = t.rank() == first.rank()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", first.shape(), t.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|t| t.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        let guards: Vec<_> = parts.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (t, d) in parts.iter().zip(&guards) {
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
            }
        }
        drop(guards);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Concat(parts.to_vec(), axis),
        ))
    }

    /// Output of an externally defined op with its own backward rule.
    pub fn custom(
        shape: &[usize],
        data: Vec<f64>,
        parents: Vec<Tensor>,
        op: impl CustomOp + 'static,
    ) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(shape_err(
                op.name(),
                format!(
                    "shape {shape:?} needs {} values, got {}",
                    numel(shape),
                    data.len()
                ),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            Op::Custom(parents, Box::new(op)),
        ))
    }
}
