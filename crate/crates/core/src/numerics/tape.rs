//! Reverse-mode differentiation over a linear record of primitive ops.
//!
//! Nodes are appended in execution order, so the record is already a
//! topological order: replaying it from the loss back to index 0 visits
//! every op after all of its consumers.

use std::cell::RefCell;
use std::sync::Arc;

use super::real::{lit, Real};
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, matmul_dims, Tensor};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    MulScalar(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Gather { input: usize, index: Arc<[Option<usize>]> },
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(usize),
    L1(usize, usize),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Single-threaded op record. One tape per forward/backward pass; parallel
/// work uses independent tapes.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    check_finite: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite: false,
        }
    }

    /// Tape that rejects any op producing NaN or infinity.
    pub fn with_finite_checks(enabled: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite: enabled,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (data, adjacency, masks).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(Arc::new(value), Op::Leaf, false)
    }

    pub fn constant_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&self, value: Arc<Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var<'_, T>> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].needs_grad)
        };
        Ok(self.push_raw(Arc::new(value), op, needs_grad))
    }

    fn value(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Populates gradients of a scalar `loss` with respect to every
    /// differentiable leaf that contributed to it.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.map(|data| Tensor::new(nodes[id].value.shape(), data).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of one backward pass, indexed by the leaf they belong to.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the leaf did not influence the loss.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient, or zeros of the leaf's shape when it was unused.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn acc<'g, T: Real>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize) -> Option<&'g mut Vec<T>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backprop<T: Real>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if let Some(da) = acc(grads, nodes, a) {
                gemm_nt(g, bv.data(), da, m, n, k);
            }
            if let Some(db) = acc(grads, nodes, b) {
                gemm_tn(av.data(), g, db, k, m, n);
            }
        }
        &Op::MatMulNt(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
            if let Some(da) = acc(grads, nodes, a) {
                gemm_nn(g, bv.data(), da, m, n, k);
            }
            if let Some(db) = acc(grads, nodes, b) {
                gemm_tn(g, av.data(), db, n, m, k);
            }
        }
        &Op::Add(a, b) => {
            for input in [a, b] {
                if let Some(d) = acc(grads, nodes, input) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
            }
        }
        &Op::Sub(a, b) => {
            if let Some(d) = acc(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = acc(grads, nodes, b) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (Arc::clone(&nodes[a].value), Arc::clone(&nodes[b].value));
            if let Some(d) = acc(grads, nodes, a) {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(bv.data()) {
                    *d += g * y;
                }
            }
            if let Some(d) = acc(grads, nodes, b) {
                for ((d, &g), &x) in d.iter_mut().zip(g).zip(av.data()) {
                    *d += g * x;
                }
            }
        }
        &Op::AddRow(a, b) => {
            if let Some(d) = acc(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            let n = out.cols();
            if let Some(d) = acc(grads, nodes, b) {
                for row in g.chunks_exact(n) {
                    d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
        }
        &Op::Scale(a, c) => {
            if let Some(d) = acc(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * c);
            }
        }
        &Op::MulScalar(a, s) => {
            let (av, sv) = (Arc::clone(&nodes[a].value), nodes[s].value.data()[0]);
            if let Some(d) = acc(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * sv);
            }
            if let Some(d) = acc(grads, nodes, s) {
                let mut total = T::zero();
                for (&g, &x) in g.iter().zip(av.data()) {
                    total += g * x;
                }
                d[0] += total;
            }
        }
        &Op::Transpose(a) => {
            let (m, n) = (out.shape()[1], out.shape()[0]);
            if let Some(d) = acc(grads, nodes, a) {
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        &Op::Reshape(a) => {
            if let Some(d) = acc(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
        }
        Op::Concat { parts, axis } => {
            let out_cols = out.cols();
            let mut offset = 0;
            for &p in parts {
                let shape = nodes[p].value.shape().to_vec();
                let (pr, pc) = (shape[0], shape[1]);
                if let Some(d) = acc(grads, nodes, p) {
                    for r in 0..pr {
                        for c in 0..pc {
                            let src = if *axis == 0 {
                                (offset + r) * out_cols + c
                            } else {
                                r * out_cols + offset + c
                            };
                            d[r * pc + c] += g[src];
                        }
                    }
                }
                offset += if *axis == 0 { pr } else { pc };
            }
        }
        &Op::Slice { input, axis, start } => {
            let in_cols = nodes[input].value.shape()[1];
            let (or, oc) = (out.shape()[0], out.shape()[1]);
            if let Some(d) = acc(grads, nodes, input) {
                for r in 0..or {
                    for c in 0..oc {
                        let dst = if axis == 0 {
                            (start + r) * in_cols + c
                        } else {
                            r * in_cols + start + c
                        };
                        d[dst] += g[r * oc + c];
                    }
                }
            }
        }
        Op::Gather { input, index } => {
            if let Some(d) = acc(grads, nodes, *input) {
                for (&g, src) in g.iter().zip(index.iter()) {
                    if let Some(s) = *src {
                        d[s] += g;
                    }
                }
            }
        }
        &Op::Sum(a) => {
            if let Some(d) = acc(grads, nodes, a) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        &Op::Mean(a) => {
            let scale = g[0] / lit::<T>(nodes[a].value.numel() as f64);
            if let Some(d) = acc(grads, nodes, a) {
                d.iter_mut().for_each(|d| *d += scale);
            }
        }
        &Op::MeanRows(a) => {
            let rows = nodes[a].value.rows();
            let inv = T::one() / lit::<T>(rows as f64);
            if let Some(d) = acc(grads, nodes, a) {
                for row in d.chunks_exact_mut(g.len()) {
                    row.iter_mut().zip(g).for_each(|(d, &g)| *d += g * inv);
                }
            }
        }
        &Op::Softmax(a) => {
            let n = out.cols();
            if let Some(d) = acc(grads, nodes, a) {
                for ((drow, grow), yrow) in d.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(out.data().chunks_exact(n)) {
                    let mut dot = T::zero();
                    for (&gi, &yi) in grow.iter().zip(yrow) {
                        dot += gi * yi;
                    }
                    for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let n = out.cols();
            let gam = Arc::clone(&nodes[*gamma].value);
            if let Some(d) = acc(grads, nodes, *gamma) {
                for (grow, hrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                    for ((d, &gi), &hi) in d.iter_mut().zip(grow).zip(hrow) {
                        *d += gi * hi;
                    }
                }
            }
            if let Some(d) = acc(grads, nodes, *beta) {
                for grow in g.chunks_exact(n) {
                    d.iter_mut().zip(grow).for_each(|(d, &gi)| *d += gi);
                }
            }
            if let Some(d) = acc(grads, nodes, *x) {
                let nf = lit::<T>(n as f64);
                let mut dxhat = vec![T::zero(); n];
                for (r, ((drow, grow), hrow)) in d
                    .chunks_exact_mut(n)
                    .zip(g.chunks_exact(n))
                    .zip(xhat.chunks_exact(n))
                    .enumerate()
                {
                    let mut sum = T::zero();
                    let mut sum_h = T::zero();
                    for j in 0..n {
                        dxhat[j] = grow[j] * gam.data()[j];
                        sum += dxhat[j];
                        sum_h += dxhat[j] * hrow[j];
                    }
                    let k = inv_std[r] / nf;
                    for j in 0..n {
                        drow[j] += k * (nf * dxhat[j] - sum - hrow[j] * sum_h);
                    }
                }
            }
        }
        &Op::Gelu(a) => {
            let xv = Arc::clone(&nodes[a].value);
            if let Some(d) = acc(grads, nodes, a) {
                for ((d, &gi), &x) in d.iter_mut().zip(g).zip(xv.data()) {
                    *d += gi * gelu_grad(x);
                }
            }
        }
        &Op::L1(a, b) => {
            let (av, bv) = (Arc::clone(&nodes[a].value), Arc::clone(&nodes[b].value));
            let scale = g[0] / lit::<T>(av.numel() as f64);
            let sign = |x: T, y: T| {
                let diff = x - y;
                if diff > T::zero() {
                    scale
                } else if diff < T::zero() {
                    -scale
                } else {
                    T::zero()
                }
            };
            if let Some(d) = acc(grads, nodes, a) {
                for ((d, &x), &y) in d.iter_mut().zip(av.data()).zip(bv.data()) {
                    *d += sign(x, y);
                }
            }
            if let Some(d) = acc(grads, nodes, b) {
                for ((d, &x), &y) in d.iter_mut().zip(av.data()).zip(bv.data()) {
                    *d -= sign(x, y);
                }
            }
        }
    }
}

/// x·Φ(x) with the exact Gaussian CDF.
pub fn gelu_scalar<T: Real>(x: T) -> T {
    x * lit::<T>(0.5) * (T::one() + (x * lit::<T>(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = lit::<T>(0.5) * (T::one() + (x * lit::<T>(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * lit::<T>(0.5)).exp() * lit::<T>(0.398_942_280_401_432_7);
    cdf + x * pdf
}

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(op, a.shape(), b.shape());
    }
    Ok(())
}

fn require_matrix(op: &'static str, t: &Tensor<impl Real>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return dim_err(op, t.shape(), &[0, 0]);
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn binary_elementwise(
        self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape(name, &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(a.shape(), data)?;
        self.tape.push(name, out, op, &[self.id, other.id])
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
        let mut out = vec![T::zero(); m * n];
        gemm_nn(a.data(), b.data(), &mut out, m, k, n);
        self.tape
            .push("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    /// self · otherᵀ without materializing the transpose on the tape.
    pub fn matmul_t(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
            return dim_err("matmul_t", a.shape(), b.shape());
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
        let mut out = vec![T::zero(); m * n];
        gemm_nt(a.data(), b.data(), &mut out, m, k, n);
        self.tape
            .push("matmul_t", Tensor::new(&[m, n], out)?, Op::MatMulNt(self.id, other.id), &[self.id, other.id])
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_elementwise(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_elementwise(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_elementwise(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    /// Matrix plus a row vector repeated over every row.
    pub fn add_row(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), bias.value());
        let (_, n) = require_matrix("add_row", &a)?;
        if b.numel() != n || b.shape().len() > 2 || (b.shape().len() == 2 && b.shape()[0] != 1) {
            return dim_err("add_row", a.shape(), b.shape());
        }
        let mut data = a.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(b.data()).for_each(|(x, &bv)| *x += bv);
        }
        self.tape
            .push("add_row", Tensor::new(a.shape(), data)?, Op::AddRow(self.id, bias.id), &[self.id, bias.id])
    }

    pub fn scale(self, c: f64) -> Result<Var<'t, T>> {
        let c = lit::<T>(c);
        let out = self.value().map(|x| x * c);
        self.tape.push("scale", out, Op::Scale(self.id, c), &[self.id])
    }

    /// Multiplies every entry by a one-element tensor.
    pub fn mul_scalar(self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        let sv = s.value();
        if sv.numel() != 1 {
            return dim_err("mul_scalar", &self.shape(), sv.shape());
        }
        let k = sv.data()[0];
        let out = self.value().map(|x| x * k);
        self.tape.push("mul_scalar", out, Op::MulScalar(self.id, s.id), &[self.id, s.id])
    }

    pub fn transpose(self) -> Result<Var<'t, T>> {
        let out = self.value().transpose()?;
        self.tape.push("transpose", out, Op::Transpose(self.id), &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = (*self.value()).clone().reshaped(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let tape = first.tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let (r0, c0) = require_matrix("concat", &values[0])?;
        if axis > 1 {
            return Err(Error::Input(format!("concat axis {axis} on a matrix")));
        }
        let mut total = 0;
        for v in &values {
            let (r, c) = require_matrix("concat", v)?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return dim_err("concat", values[0].shape(), v.shape());
            }
            total += if axis == 0 { r } else { c };
        }
        let shape = if axis == 0 { [total, c0] } else { [r0, total] };
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        if axis == 0 {
            for v in &values {
                data.extend_from_slice(v.data());
            }
        } else {
            for r in 0..r0 {
                for v in &values {
                    data.extend_from_slice(v.row(r));
                }
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push("concat", Tensor::new(&shape, data)?, Op::Concat { parts: ids.clone(), axis }, &ids)
    }

    /// Rows (axis 0) or columns (axis 1) `start..start+len` of a matrix.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        let (r, c) = require_matrix("slice", &v)?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(Error::Input(format!(
                "slice {start}..{} on axis {axis} of shape {:?}",
                start + len,
                v.shape()
            )));
        }
        let (shape, data) = if axis == 0 {
            ([len, c], v.data()[start * c..(start + len) * c].to_vec())
        } else {
            let mut d = Vec::with_capacity(r * len);
            for row in 0..r {
                d.extend_from_slice(&v.row(row)[start..start + len]);
            }
            ([r, len], d)
        };
        self.tape.push(
            "slice",
            Tensor::new(&shape, data)?,
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
            &[self.id],
        )
    }

    /// out.flat[i] = self.flat[index[i]], or 0 where the index is `None`.
    pub fn gather(self, index: Arc<[Option<usize>]>, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value();
        if shape.iter().product::<usize>() != index.len() {
            return dim_err("gather", shape, &[index.len()]);
        }
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= v.numel()) {
            return Err(Error::Input(format!("gather index {bad} out of range {}", v.numel())));
        }
        let data = index.iter().map(|s| s.map_or(T::zero(), |i| v.data()[i])).collect();
        self.tape.push(
            "gather",
            Tensor::new(shape, data)?,
            Op::Gather {
                input: self.id,
                index,
            },
            &[self.id],
        )
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let total = self.value().data().iter().copied().sum();
        self.tape.push("sum", Tensor::scalar(total), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let v = self.value();
        let total: T = v.data().iter().copied().sum();
        let out = Tensor::scalar(total / lit::<T>(v.numel() as f64));
        self.tape.push("mean", out, Op::Mean(self.id), &[self.id])
    }

    /// Column-wise mean of a matrix, as a 1×n row.
    pub fn mean_rows(self) -> Result<Var<'t, T>> {
        let v = self.value();
        let (r, c) = require_matrix("mean_rows", &v)?;
        let mut out = vec![T::zero(); c];
        for row in v.data().chunks_exact(c) {
            out.iter_mut().zip(row).for_each(|(o, &x)| *o += x);
        }
        let inv = T::one() / lit::<T>(r as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        self.tape.push("mean_rows", Tensor::new(&[1, c], out)?, Op::MeanRows(self.id), &[self.id])
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(self) -> Result<Var<'t, T>> {
        let v = self.value();
        let (_, c) = require_matrix("softmax_rows", &v)?;
        let mut data = v.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            let inv = T::one() / total;
            row.iter_mut().for_each(|x| *x *= inv);
        }
        self.tape.push("softmax_rows", Tensor::new(v.shape(), data)?, Op::Softmax(self.id), &[self.id])
    }

    /// Per-row normalization to zero mean and unit (biased) variance, then
    /// `gamma * xhat + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let v = self.value();
        let (r, c) = require_matrix("layer_norm", &v)?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.numel() != c || bv.numel() != c {
            return dim_err("layer_norm", v.shape(), gv.shape());
        }
        let eps = lit::<T>(eps);
        let nf = lit::<T>(c as f64);
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = v.row(i);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        self.tape.push(
            "layer_norm",
            Tensor::new(v.shape(), out)?,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            &[self.id, gamma.id, beta.id],
        )
    }

    pub fn gelu(self) -> Result<Var<'t, T>> {
        let out = self.value().map(gelu_scalar);
        self.tape.push("gelu", out, Op::Gelu(self.id), &[self.id])
    }

    /// Mean absolute difference over all entries.
    pub fn l1(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), target.value());
        same_shape("l1", &a, &b)?;
        let total: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let out = Tensor::scalar(total / lit::<T>(a.numel() as f64));
        self.tape.push("l1", out, Op::L1(self.id, target.id), &[self.id, target.id])
    }
}
