//! Reverse-mode differentiation tape.
//!
//! Operations are appended in evaluation order, so the node list is always
//! topologically sorted. [`Tape::backward`] walks it once in reverse.
//! Only the primitives the vision and audio networks need are provided.

use std::sync::Arc;

use crate::conv;
use crate::error::{Error, Result};
use crate::sparse;
use crate::sparse::kernel_map::KernelMap;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    Glu(Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Vec<Var>),
    Linear {
        m: Var,
        h: Var,
        b: Option<Var>,
    },
    Row {
        x: Var,
        row: usize,
    },
    Resize {
        x: Var,
    },
    L1 {
        pred: Var,
        target: Tensor<T>,
    },
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
    SparseConv {
        x: Var,
        w: Var,
        b: Option<Var>,
        map: Arc<KernelMap>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch norm, for updating
/// running estimates outside the tape.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

/// Gradients of a scalar loss with respect to the tape's leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn expect_rank(&self, v: Var, rank: usize, what: &str) -> Result<&[usize]> {
        let s = self.nodes[v.0].value.shape();
        if s.len() != rank {
            return Err(Error::Shape(format!("{what}: expected rank {rank}, got {s:?}")));
        }
        Ok(s)
    }

    fn check_bias(&self, b: Option<Var>, c: usize, what: &str) -> Result<()> {
        if let Some(b) = b {
            let s = self.nodes[b.0].value.shape();
            if s != [c] {
                return Err(Error::Shape(format!("{what}: bias {s:?}, expected [{c}]")));
            }
        }
        Ok(())
    }

    /// `x: [c_in, t]`, `w: [c_out, c_in, k]`, `b: [c_out]` → `[c_out, t']`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.expect_rank(x, 2, "conv1d input")?.to_vec();
        let ws = self.expect_rank(w, 3, "conv1d weight")?.to_vec();
        if ws[1] != xs[0] {
            return Err(Error::Shape(format!(
                "conv1d: weight expects {} input channels, input has {}",
                ws[1], xs[0]
            )));
        }
        self.check_bias(b, ws[0], "conv1d")?;
        let (c_in, t, c_out, k) = (xs[0], xs[1], ws[0], ws[2]);
        let t_out = conv::conv1d_out_len(t, k, stride).ok_or_else(|| {
            Error::Shape(format!("conv1d: length {t} too short for kernel {k} / stride {stride}"))
        })?;
        let y = conv::conv1d_forward(
            self.value(x).data(),
            c_in,
            t,
            self.value(w).data(),
            c_out,
            k,
            b.map(|b| self.value(b).data()),
            stride,
        );
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(
            Tensor::new(vec![c_out, t_out], y)?,
            Op::Conv1d { x, w, b, stride },
            rg,
        ))
    }

    /// `x: [c_in, t]`, `w: [c_in, c_out, k]`, `b: [c_out]` → `[c_out, (t-1)*stride+k]`.
    pub fn conv1d_transpose(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.expect_rank(x, 2, "conv1d_transpose input")?.to_vec();
        let ws = self.expect_rank(w, 3, "conv1d_transpose weight")?.to_vec();
        if ws[0] != xs[0] {
            return Err(Error::Shape(format!(
                "conv1d_transpose: weight expects {} input channels, input has {}",
                ws[0], xs[0]
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        self.check_bias(b, ws[1], "conv1d_transpose")?;
        let (c_in, t, c_out, k) = (xs[0], xs[1], ws[1], ws[2]);
        let y = conv::conv1d_transpose_forward(
            self.value(x).data(),
            c_in,
            t,
            self.value(w).data(),
            c_out,
            k,
            b.map(|b| self.value(b).data()),
            stride,
        );
        let t_out = conv::conv1d_transpose_out_len(t, k, stride);
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(
            Tensor::new(vec![c_out, t_out], y)?,
            Op::ConvTranspose1d { x, w, b, stride },
            rg,
        ))
    }

    /// Gated linear unit over the leading (channel) axis.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if !s[0].is_multiple_of(2) {
            return Err(Error::Shape(format!("glu: odd channel count {}", s[0])));
        }
        let half = self.value(x).len() / 2;
        let d = self.value(x).data();
        let y: Vec<T> = (0..half).map(|i| d[i] * sigmoid(d[half + i])).collect();
        let mut shape = s;
        shape[0] /= 2;
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(shape, y)?, Op::Glu(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.requires_grad(x);
        self.push(y, Op::Relu(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[Some(a), Some(b)]);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let y = self.value(x).map(|v| v * s);
        let rg = self.requires_grad(x);
        self.push(y, Op::Scale(x, s), rg)
    }

    /// Elementwise sum of equally shaped values.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Empty("sum of no values".into()))?;
        let mut acc = self.value(first).clone();
        for &x in &xs[1..] {
            self.same_shape(first, x, "sum")?;
            acc.add_assign(self.value(x));
        }
        let rg = xs.iter().any(|&x| self.requires_grad(x));
        Ok(self.push(acc, Op::Sum(xs.to_vec()), rg))
    }

    /// `m: [r, c]`, `h: [c]`, `b: [r]` → `m h + b`.
    pub fn linear(&mut self, m: Var, h: Var, b: Option<Var>) -> Result<Var> {
        let ms = self.expect_rank(m, 2, "linear matrix")?.to_vec();
        let hs = self.value(h).shape();
        if hs != [ms[1]] {
            return Err(Error::Shape(format!("linear: matrix {ms:?} with vector {hs:?}")));
        }
        self.check_bias(b, ms[0], "linear")?;
        let (r, c) = (ms[0], ms[1]);
        let md = self.value(m).data();
        let hd = self.value(h).data();
        let mut y: Vec<T> = (0..r)
            .map(|i| md[i * c..(i + 1) * c].iter().zip(hd).map(|(&a, &b)| a * b).sum())
            .collect();
        if let Some(b) = b {
            for (yi, &bi) in y.iter_mut().zip(self.value(b).data()) {
                *yi += bi;
            }
        }
        let rg = self.any_grad(&[Some(m), Some(h), b]);
        Ok(self.push(Tensor::from_vec(y), Op::Linear { m, h, b }, rg))
    }

    /// Row `row` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        let s = self.expect_rank(x, 2, "row")?.to_vec();
        if row >= s[0] {
            return Err(Error::Shape(format!("row {row} of {s:?}")));
        }
        let d = self.value(x).data()[row * s[1]..(row + 1) * s[1]].to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_vec(d), Op::Row { x, row }, rg))
    }

    /// Zero-pads or truncates the time axis of `[c, t]` to `len`.
    pub fn resize_time(&mut self, x: Var, len: usize) -> Result<Var> {
        let s = self.expect_rank(x, 2, "resize_time")?.to_vec();
        if len == 0 {
            return Err(Error::Shape("resize_time to zero length".into()));
        }
        let (c, t) = (s[0], s[1]);
        let keep = t.min(len);
        let src = self.value(x).data();
        let mut y = vec![T::zero(); c * len];
        for ci in 0..c {
            y[ci * len..ci * len + keep].copy_from_slice(&src[ci * t..ci * t + keep]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![c, len], y)?, Op::Resize { x }, rg))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: Tensor<T>) -> Result<Var> {
        let ps = self.value(pred).shape();
        if ps != target.shape() {
            return Err(Error::Shape(format!(
                "l1: prediction {ps:?} vs target {:?}",
                target.shape()
            )));
        }
        let n = T::cast(target.len() as f64);
        let s: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let rg = self.requires_grad(pred);
        Ok(self.push(Tensor::scalar(s / n), Op::L1 { pred, target }, rg))
    }

    /// Scalar `sum(x * weights)` against constant weights of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs != weights.shape() {
            return Err(Error::Shape(format!(
                "weighted_sum: input {xs:?} vs weights {:?}",
                weights.shape()
            )));
        }
        let s: T = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &w)| a * w)
            .sum();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, rg))
    }

    /// Sparse convolution of row features `x: [n_in, c_in]` with
    /// `w: [kernel_volume, c_in, c_out]` along `map`.
    pub fn sparse_conv(&mut self, x: Var, w: Var, b: Option<Var>, map: Arc<KernelMap>) -> Result<Var> {
        let xs = self.expect_rank(x, 2, "sparse_conv input")?.to_vec();
        let ws = self.expect_rank(w, 3, "sparse_conv weight")?.to_vec();
        if ws[0] != map.kernel_volume() {
            return Err(Error::Shape(format!(
                "sparse_conv: weight has {} offsets, kernel map has {}",
                ws[0],
                map.kernel_volume()
            )));
        }
        if ws[1] != xs[1] {
            return Err(Error::Shape(format!(
                "sparse_conv: feature width {} but weight expects {}",
                xs[1], ws[1]
            )));
        }
        if xs[0] != map.n_in() {
            return Err(Error::Shape(format!(
                "sparse_conv: {} rows but kernel map expects {}",
                xs[0],
                map.n_in()
            )));
        }
        let (c_in, c_out) = (ws[1], ws[2]);
        self.check_bias(b, c_out, "sparse_conv")?;
        let y = sparse::conv::forward(
            self.value(x).data(),
            c_in,
            self.value(w).data(),
            c_out,
            b.map(|b| self.value(b).data()),
            &map,
        );
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(
            Tensor::new(vec![map.n_out(), c_out], y)?,
            Op::SparseConv { x, w, b, map },
            rg,
        ))
    }

    fn check_channel_params(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let xs = self.expect_rank(x, 2, "batch_norm input")?.to_vec();
        for (p, name) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(p).shape() != [xs[1]] {
                return Err(Error::Shape(format!(
                    "batch_norm: {name} {:?} for width {}",
                    self.value(p).shape(),
                    xs[1]
                )));
            }
        }
        Ok((xs[0], xs[1]))
    }

    /// Training-mode batch norm over the rows of `x: [n, c]`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<T>)> {
        let (n, c) = self.check_channel_params(x, gamma, beta)?;
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_norm: training mode needs at least 2 rows, got {n}"
            )));
        }
        let xd = self.value(x).data();
        let nt = T::cast(n as f64);
        let mut mean = vec![T::zero(); c];
        for row in xd.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nt);
        let mut var = vec![T::zero(); c];
        for row in xd.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= nt);
        let eps = T::cast(BN_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, y) = self.normalize(xd, &mean, &inv_std, gamma, beta, c);
        let unbias = nt / T::cast((n - 1) as f64);
        let stats = BatchStats {
            mean,
            var: var.iter().map(|&v| v * unbias).collect(),
        };
        let rg = self.any_grad(&[Some(x), Some(gamma), Some(beta)]);
        let out = self.push(
            Tensor::new(vec![n, c], y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((out, stats))
    }

    /// Eval-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T]) -> Result<Var> {
        let (n, c) = self.check_channel_params(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::Shape("batch_norm: running stats width".into()));
        }
        let eps = T::cast(BN_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xd = self.value(x).data();
        let (xhat, y) = self.normalize(xd, mean, &inv_std, gamma, beta, c);
        let rg = self.any_grad(&[Some(x), Some(gamma), Some(beta)]);
        Ok(self.push(
            Tensor::new(vec![n, c], y)?,
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    fn normalize(&self, xd: &[T], mean: &[T], inv_std: &[T], gamma: Var, beta: Var, c: usize) -> (Vec<T>, Vec<T>) {
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xd.len());
        let mut y = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                y.push(g[j] * h + b[j]);
            }
        }
        (xhat, y)
    }

    /// Per-channel maximum over the rows of each batch item.
    /// `batch_of_row[i]` is the item row `i` belongs to. Ties go to the first row.
    pub fn max_pool(&mut self, x: Var, batch_of_row: &[usize], batch_size: usize) -> Result<Var> {
        let xs = self.expect_rank(x, 2, "max_pool")?.to_vec();
        let (n, c) = (xs[0], xs[1]);
        if batch_of_row.len() != n {
            return Err(Error::Shape("max_pool: batch index length".into()));
        }
        let xd = self.value(x).data();
        let mut argmax = vec![usize::MAX; batch_size * c];
        for (i, &b) in batch_of_row.iter().enumerate() {
            for j in 0..c {
                let slot = &mut argmax[b * c + j];
                if *slot == usize::MAX || xd[i * c + j] > xd[*slot * c + j] {
                    *slot = i;
                }
            }
        }
        if let Some(pos) = argmax.iter().position(|&a| a == usize::MAX) {
            return Err(Error::Empty(format!("max_pool: batch item {} has no rows", pos / c)));
        }
        let y: Vec<T> = argmax
            .iter()
            .enumerate()
            .map(|(k, &i)| xd[i * c + k % c])
            .collect();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![batch_size, c], y)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Gradients of scalar `loss` with respect to every leaf created with
    /// [`Tape::param`]. The tape must be [`reset`](Tape::reset) before another
    /// backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape; reset it first".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, g, &mut grads)?;
        }

        // keep only trainable leaves
        for (i, n) in self.nodes.iter().enumerate() {
            if !(matches!(n.op, Op::Leaf) && n.requires_grad) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(data) {
                    *a += d;
                }
            }
            slot @ None => {
                *slot = Some(
                    Tensor::new(self.nodes[v.0].value.shape().to_vec(), data)
                        .expect("gradient matches value shape"),
                );
            }
        }
    }

    fn backprop_node(&self, i: usize, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, stride } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (dx, dw, db) = conv::conv1d_backward(
                    gd,
                    self.value(*x).data(),
                    xs[0],
                    xs[1],
                    self.value(*w).data(),
                    ws[0],
                    ws[2],
                    *stride,
                );
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::ConvTranspose1d { x, w, b, stride } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (dx, dw, db) = conv::conv1d_transpose_backward(
                    gd,
                    self.value(*x).data(),
                    xs[0],
                    xs[1],
                    self.value(*w).data(),
                    ws[1],
                    ws[2],
                    *stride,
                );
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Glu(x) => {
                let xd = self.value(*x).data();
                let half = xd.len() / 2;
                let mut dx = vec![T::zero(); xd.len()];
                for k in 0..half {
                    let a = xd[k];
                    let s = sigmoid(xd[half + k]);
                    dx[k] = gd[k] * s;
                    dx[half + k] = gd[k] * a * s * (T::one() - s);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let dx = xd
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                self.accumulate(grads, *a, gd.iter().zip(bd).map(|(&g, &y)| g * y).collect());
                self.accumulate(grads, *b, gd.iter().zip(ad).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, gd.iter().map(|&v| v * *s).collect());
            }
            Op::Sum(xs) => {
                for x in xs {
                    self.accumulate(grads, *x, gd.to_vec());
                }
            }
            Op::Linear { m, h, b } => {
                let ms = self.value(*m).shape();
                let (r, c) = (ms[0], ms[1]);
                let md = self.value(*m).data();
                let hd = self.value(*h).data();
                let mut dm = vec![T::zero(); r * c];
                for ri in 0..r {
                    for ci in 0..c {
                        dm[ri * c + ci] = gd[ri] * hd[ci];
                    }
                }
                let dh = (0..c)
                    .map(|ci| (0..r).map(|ri| md[ri * c + ci] * gd[ri]).sum())
                    .collect();
                self.accumulate(grads, *m, dm);
                self.accumulate(grads, *h, dh);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gd.to_vec());
                }
            }
            Op::Row { x, row } => {
                let xs = self.value(*x).shape();
                let mut dx = vec![T::zero(); xs[0] * xs[1]];
                dx[row * xs[1]..(row + 1) * xs[1]].copy_from_slice(gd);
                self.accumulate(grads, *x, dx);
            }
            Op::Resize { x } => {
                let xs = self.value(*x).shape();
                let (c, t) = (xs[0], xs[1]);
                let len = g.shape()[1];
                let keep = t.min(len);
                let mut dx = vec![T::zero(); c * t];
                for ci in 0..c {
                    dx[ci * t..ci * t + keep].copy_from_slice(&gd[ci * len..ci * len + keep]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::WeightedSum { x, weights } => {
                let dx = weights.data().iter().map(|&w| w * gd[0]).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::L1 { pred, target } => {
                let pd = self.value(*pred).data();
                let scale = gd[0] / T::cast(target.len() as f64);
                let dp = pd
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        let d = p - t;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *pred, dp);
            }
            Op::SparseConv { x, w, b, map } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (dx, dw, db) = sparse::conv::backward(
                    gd,
                    self.value(*x).data(),
                    xs[1],
                    self.value(*w).data(),
                    ws[2],
                    map,
                );
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let n = xhat.len() / c;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (grow, hrow) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * hrow[j];
                    }
                }
                let nt = T::cast(n as f64);
                let mut dx = Vec::with_capacity(xhat.len());
                for (grow, hrow) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        let k = gam[j] * inv_std[j] / nt;
                        dx.push(k * (nt * grow[j] - sum_g[j] - hrow[j] * sum_gx[j]));
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, sum_gx);
                self.accumulate(grads, *beta, sum_g);
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                let mut dx = Vec::with_capacity(xhat.len());
                for (grow, hrow) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * hrow[j];
                        dx.push(grow[j] * gam[j] * inv_std[j]);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, sum_gx);
                self.accumulate(grads, *beta, sum_g);
            }
            Op::MaxPool { x, argmax } => {
                let xs = self.value(*x).shape();
                let c = xs[1];
                let mut dx = vec![T::zero(); xs[0] * c];
                for (k, &row) in argmax.iter().enumerate() {
                    dx[row * c + k % c] += gd[k];
                }
                self.accumulate(grads, *x, dx);
            }
        }
        Ok(())
    }
}
