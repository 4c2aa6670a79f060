//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as an append-only
//! list of nodes. Inputs always precede outputs, so the reverse sweep is a
//! single pass from the loss node back to index 0 and the graph cannot
//! contain cycles.

use std::collections::HashMap;

use super::kernels::{gelu_derivative, gelu_scalar, matmul_into, matmul_nt_acc, matmul_tn_acc, softmax_in_place};
use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    SumAll(Var),
    MeanRows(Var),
    LogClamp {
        src: Var,
        floor: f64,
    },
    Square(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Tape::gradients`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn dims2(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(var)
            .dims2()
            .map_err(|_| Error::shape(op, format!("expected matrix, got {:?}", self.shape(var))))
    }

    /// Records a leaf. Gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let mut value = value;
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Snapshots a named parameter onto the tape. Repeated lookups of the same
    /// name return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let v = self.leaf(t.clone(), t.requires_grad());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        let needs = self.needs(&[a, b]);
        self.push(Tensor::new(shape, data).expect("same shape"), op, needs)
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

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_row")?;
        if self.value(row).numel() != n {
            return Err(Error::shape(
                "add_row",
                format!("row {:?} onto [{m}x{n}]", self.shape(row)),
            ));
        }
        let b = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..m {
            for (v, &bv) in data[r * n..(r + 1) * n].iter_mut().zip(b) {
                *v += bv;
            }
        }
        let needs = self.needs(&[x, row]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(x, row), needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|e| e * c);
        let needs = self.needs(&[x]);
        self.push(v, Op::Scale(x, c), needs)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Transpose(x), needs))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "softmax_rows")?;
        if !self.value(x).is_finite() {
            return Err(Error::NonFinite("softmax_rows input".into()));
        }
        let mut data = self.value(x).data().to_vec();
        for r in 0..m {
            softmax_in_place(&mut data[r * n..(r + 1) * n]);
        }
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::SoftmaxRows(x), needs))
    }

    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.value(scale).numel() != n || self.value(shift).numel() != n {
            return Err(Error::shape("layer_norm", format!("affine size vs width {n}")));
        }
        let src = self.value(x).data();
        let g = self.value(scale).data();
        let b = self.value(shift).data();
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let needs = self.needs(&[x, scale, shift]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x,
                scale,
                shift,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu_scalar);
        let needs = self.needs(&[x]);
        self.push(v, Op::Gelu(x), needs)
    }

    /// General element gather: `out.flat[i] = src.flat[index[i]]`, reshaped to
    /// `shape`. Backward scatter-adds, so repeated indices are allowed.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let numel = self.value(src).numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= numel) {
            return Err(Error::shape("gather", format!("index {bad} out of {numel}")));
        }
        let s = self.value(src).data();
        let data = index.iter().map(|&i| s[i]).collect();
        let t = Tensor::new(shape, data)?;
        let needs = self.needs(&[src]);
        Ok(self.push(t, Op::Gather { src, index }, needs))
    }

    /// Selects whole rows of a matrix, in the given order.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {m}")));
        }
        let index = rows.iter().flat_map(|&r| (r * n)..(r * n + n)).collect();
        self.gather(x, index, vec![rows.len(), n])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut n = None;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, c) = self.dims2(p, "concat_rows")?;
            if *n.get_or_insert(c) != c {
                return Err(Error::shape("concat_rows", "column counts differ"));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        let n = n.ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let needs = self.needs(parts);
        Ok(self.push(Tensor::new(vec![rows, n], data)?, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut m = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if *m.get_or_insert(r) != r {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
            widths.push(c);
        }
        let m = m.ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..m {
                data[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let needs = self.needs(parts);
        Ok(self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n || len == 0 {
            return Err(Error::shape("slice_cols", format!("{start}+{len} of {n}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols { src: x, start }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    /// Column means of a matrix as a `1×n` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "mean_rows")?;
        if m == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; n];
        for r in 0..m {
            for (d, &v) in data.iter_mut().zip(&src[r * n..(r + 1) * n]) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d /= m as f64);
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![1, n], data)?, Op::MeanRows(x), needs))
    }

    /// Natural log of `max(x, floor)`; the gradient is zero on the clamped side.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x).map(|e| e.max(floor).ln());
        let needs = self.needs(&[x]);
        self.push(v, Op::LogClamp { src: x, floor }, needs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        let needs = self.needs(&[x]);
        self.push(v, Op::Square(x), needs)
    }

    /// `x · W + b` for a row-major activation matrix.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Reverse sweep from a scalar `loss`. Every node that depends on a
    /// gradient-tracking leaf receives `∂loss/∂node`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("loss {loss:?} not on this tape")));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads })
    }

    /// Runs the reverse sweep and accumulates into every gradient-tracking
    /// parameter of `params` that was recorded on this tape.
    pub fn backward(&self, loss: Var, params: &mut ParameterStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (name, &var) in &self.params {
            let Some(g) = grads.get(var) else { continue };
            let t = params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if let Some(acc) = t.grad_mut() {
                if acc.len() != g.len() {
                    return Err(Error::shape("backward", format!("parameter {name} changed shape")));
                }
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        Ok(())
    }

    /// Gradients of every gradient-tracking parameter recorded on this tape,
    /// keyed by name.
    pub fn param_gradients(&self, loss: Var) -> Result<Vec<(String, Vec<f64>)>> {
        let grads = self.gradients(loss)?;
        let mut out: Vec<(String, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|(name, &var)| grads.get(var).map(|g| (name.clone(), g.to_vec())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |var: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[var.0].needs_grad {
                return;
            }
            let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("checked");
                let n = self.value(*b).shape()[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |da| matmul_nt_acc(g, bv, da, m, n, k));
                acc(*b, &mut |db| matmul_tn_acc(av, g, db, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, &v)| *d -= v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddRow(x, row) => {
                let n = self.value(*row).numel();
                acc(*x, &mut |dx| add_into(dx, g));
                acc(*row, &mut |db| {
                    for chunk in g.chunks(n) {
                        add_into(db, chunk);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, &v)| *d += c * v)),
            Op::Transpose(x) => {
                let (m, n) = self.value(*x).dims2().expect("checked");
                acc(*x, &mut |dx| {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let n = node.value.shape()[1];
                acc(*x, &mut |dx| {
                    for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                scale,
                shift,
                xhat,
                rstd,
            } => {
                let n = node.value.shape()[1];
                let gamma = self.value(*scale).data();
                acc(*scale, &mut |dg| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*shift, &mut |db| {
                    for gr in g.chunks(n) {
                        add_into(db, gr);
                    }
                });
                acc(*x, &mut |dx| {
                    for (r, ((gr, hr), dr)) in g.chunks(n).zip(xhat.chunks(n)).zip(dx.chunks_mut(n)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * gamma[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for j in 0..n {
                            let dh = gr[j] * gamma[j];
                            dr[j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * gelu_derivative(xv[i]);
                    }
                });
            }
            Op::Gather { src, index } => acc(*src, &mut |ds| {
                for (&i, &v) in index.iter().zip(g) {
                    ds[i] += v;
                }
            }),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, &mut |dp| add_into(dp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let m = node.value.shape()[0];
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    acc(p, &mut |dp| {
                        for r in 0..m {
                            add_into(&mut dp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { src, start } => {
                let n = self.value(*src).shape()[1];
                let (m, len) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*src, &mut |ds| {
                    for r in 0..m {
                        add_into(&mut ds[r * n + start..r * n + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanRows(x) => {
                let m = self.value(*x).shape()[0] as f64;
                let n = g.len();
                acc(*x, &mut |dx| {
                    for row in dx.chunks_mut(n) {
                        for j in 0..n {
                            row[j] += g[j] / m;
                        }
                    }
                });
            }
            Op::LogClamp { src, floor } => {
                let xv = self.value(*src).data();
                acc(*src, &mut |dx| {
                    for i in 0..dx.len() {
                        if xv[i] > *floor {
                            dx[i] += g[i] / xv[i];
                        }
                    }
                });
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += 2.0 * xv[i] * g[i];
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]).with_grad());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum(w);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad().unwrap(), &[1.0; 4]);
    }

    #[test]
    fn squared_norm_gives_twice_w_and_accumulates() {
        let mut store = ParameterStore::new();
        let w0 = Tensor::from_rows(&[&[1.0, -2.0, 0.25]]);
        store.insert("w", w0.clone().with_grad());
        for round in 1..=2 {
            let mut tape = Tape::new();
            let w = tape.param(&store, "w").unwrap();
            let sq = tape.square(w);
            let loss = tape.sum(sq);
            tape.backward(loss, &mut store).unwrap();
            let g = store.get("w").unwrap().grad().unwrap();
            for (gv, wv) in g.iter().zip(w0.data()) {
                assert_eq!(*gv, 2.0 * wv * round as f64);
            }
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(tape.gradients(x).is_err());
    }

    #[test]
    fn matmul_shape_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[0.0, f64::NAN]]));
        assert!(tape.softmax_rows(a).is_err());
    }

    #[test]
    fn frozen_subgraph_gets_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[&[1.0, 2.0]]), false);
        let b = tape.leaf(Tensor::from_rows(&[&[3.0, 4.0]]), true);
        let c = tape.mul(a, b).unwrap();
        let loss = tape.sum(c);
        let g = tape.gradients(loss).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap(), &[1.0, 2.0]);
    }
}
