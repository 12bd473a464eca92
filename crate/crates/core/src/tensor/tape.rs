//! Dynamic computation tape for reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive op in execution order, which is a
//! topological order by construction; [`Tape::backward`] walks it once in
//! reverse accumulating vector-Jacobian products. Tapes are single-threaded;
//! independent tapes may run in parallel against a read-only
//! [`ParameterStore`](super::ParameterStore).

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

use super::{matmul_nn, matmul_nt, matmul_tn, sigmoid, softmax_rows, ParameterStore, Tensor};

// Some recorded fields (scalar constants, output row counts) exist only
// for the Debug rendering used in check-finite panics.
#[allow(dead_code)]
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `[n,d] + [d]`, bias broadcast over rows.
    AddRow(usize, usize),
    /// `[n,d] ⊙ [d]`, vector broadcast over rows.
    MulRow(usize, usize),
    /// `[n,d]` with row `i` scaled by `s[i]`.
    ScaleRows(usize, usize),
    Concat {
        axis: usize,
        inputs: Vec<usize>,
    },
    /// Softmax over the last axis.
    Softmax(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    PowScalar(usize, f64),
    SumAll(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    SelectRows {
        input: usize,
        indices: Vec<usize>,
    },
    ScatterAddRows {
        input: usize,
        indices: Vec<usize>,
        rows: usize,
    },
    Reshape(usize),
    Transpose(usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered record of primitive ops with their saved activations.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    check_finite: Cell<bool>,
}

/// Handle to a tracked tensor on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Tape handles for every parameter of a store, by name.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    /// Panics if `name` was never registered; parameter names are static.
    pub fn get(&self, name: &str) -> Var<'t> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound to tape"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            check_finite: Cell::new(false),
        }
    }

    /// Verification mode: panic as soon as any op produces NaN/Inf.
    pub fn set_check_finite(&self, on: bool) {
        self.check_finite.set(on);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        if self.check_finite.get() && !value.is_finite() {
            panic!("non-finite value produced by {op:?}");
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op, value });
        Var { tape: self, id }
    }

    /// A leaf the gradient flows into (inputs under test, parameters).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    /// A leaf whose gradient nobody reads (masks, fixed weights, p^(0)).
    /// Structurally identical to `leaf`; the name documents intent.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    /// Load every parameter of `store` onto the tape.
    pub fn bind<'t>(&'t self, store: &ParameterStore) -> BoundParams<'t> {
        let vars = store
            .iter()
            .map(|(name, param)| (name.clone(), self.leaf(param.value.clone())))
            .collect();
        BoundParams { vars }
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    /// Stack rank-1 vectors of equal length into a `[k, d]` matrix.
    pub fn stack_rows<'t>(&'t self, rows: &[Var<'t>]) -> Var<'t> {
        assert!(!rows.is_empty(), "stack_rows: empty input");
        let reshaped: Vec<Var<'t>> = rows
            .iter()
            .map(|v| {
                let d = self.shape_of(v.id);
                assert_eq!(d.len(), 1, "stack_rows: expected rank-1 inputs, got {d:?}");
                v.reshape(vec![1, d[0]])
            })
            .collect();
        self.concat(0, &reshaped)
    }

    /// Concatenate along `axis` (0: rows or vector elements, 1: columns).
    pub fn concat<'t>(&'t self, axis: usize, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat: empty input");
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let tensors: Vec<&Tensor> = ids.iter().map(|&i| &nodes[i].value).collect();
            concat_value(axis, &tensors)
        };
        self.push(Op::Concat { axis, inputs: ids }, value)
    }

    /// Reverse pass from a scalar loss. Panics if `loss` is not a
    /// single-element tensor.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.numel(),
            1,
            "backward: loss must be scalar, got shape {:?}",
            nodes[loss.id].value.shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g); // keep leaf gradients for readers
                }
                Op::MatMul(a, b) => {
                    let (da, db) = matmul_backward(&g, &nodes[*a].value, &nodes[*b].value);
                    accumulate(&mut grads, *a, da, &nodes);
                    accumulate(&mut grads, *b, db, &nodes);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone(), &nodes);
                    accumulate(&mut grads, *b, g, &nodes);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone(), &nodes);
                    accumulate(&mut grads, *b, g.iter().map(|x| -x).collect(), &nodes);
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let da = g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect();
                    let db = g.iter().zip(av).map(|(gi, ai)| gi * ai).collect();
                    accumulate(&mut grads, *a, da, &nodes);
                    accumulate(&mut grads, *b, db, &nodes);
                }
                Op::AddRow(a, b) => {
                    let d = nodes[*b].value.numel();
                    let mut db = vec![0.0; d];
                    for chunk in g.chunks(d) {
                        for (s, gi) in db.iter_mut().zip(chunk) {
                            *s += gi;
                        }
                    }
                    accumulate(&mut grads, *a, g, &nodes);
                    accumulate(&mut grads, *b, db, &nodes);
                }
                Op::MulRow(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let d = bv.len();
                    let mut da = vec![0.0; av.len()];
                    let mut db = vec![0.0; d];
                    for (r, chunk) in g.chunks(d).enumerate() {
                        let a_row = &av[r * d..(r + 1) * d];
                        let da_row = &mut da[r * d..(r + 1) * d];
                        for j in 0..d {
                            da_row[j] = chunk[j] * bv[j];
                            db[j] += chunk[j] * a_row[j];
                        }
                    }
                    accumulate(&mut grads, *a, da, &nodes);
                    accumulate(&mut grads, *b, db, &nodes);
                }
                Op::ScaleRows(a, s) => {
                    let av = nodes[*a].value.data();
                    let sv = nodes[*s].value.data();
                    let d = av.len() / sv.len();
                    let mut da = vec![0.0; av.len()];
                    let mut ds = vec![0.0; sv.len()];
                    for (r, chunk) in g.chunks(d).enumerate() {
                        let a_row = &av[r * d..(r + 1) * d];
                        let da_row = &mut da[r * d..(r + 1) * d];
                        for j in 0..d {
                            da_row[j] = chunk[j] * sv[r];
                            ds[r] += chunk[j] * a_row[j];
                        }
                    }
                    accumulate(&mut grads, *a, da, &nodes);
                    accumulate(&mut grads, *s, ds, &nodes);
                }
                Op::Concat { axis, inputs } => {
                    concat_backward(&g, *axis, inputs, &nodes, &mut grads);
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let cols = node.value.cols().max(1);
                    let cols = if node.value.rank() == 1 {
                        node.value.numel()
                    } else {
                        cols
                    };
                    let mut da = vec![0.0; y.len()];
                    for r in 0..y.len() / cols {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        let dr = &mut da[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let da = g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let da = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::Relu(a) => {
                    let x = nodes[*a].value.data();
                    let da = g
                        .iter()
                        .zip(x)
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    let da = g.iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::Ln(a) => {
                    let x = nodes[*a].value.data();
                    let da = g.iter().zip(x).map(|(gi, xi)| gi / xi).collect();
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::Neg(a) => {
                    accumulate(&mut grads, *a, g.iter().map(|x| -x).collect(), &nodes);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|x| x * c).collect(), &nodes);
                }
                Op::AddScalar(a, _) => {
                    accumulate(&mut grads, *a, g, &nodes);
                }
                Op::PowScalar(a, p) => {
                    let x = nodes[*a].value.data();
                    let da = g
                        .iter()
                        .zip(x)
                        .map(|(gi, xi)| {
                            if *p == 0.0 {
                                0.0
                            } else {
                                gi * p * xi.powf(p - 1.0)
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::SumAll(a) => {
                    let n = nodes[*a].value.numel();
                    accumulate(&mut grads, *a, vec![g[0]; n], &nodes);
                }
                Op::SumAxis(a, axis) => {
                    let da = sum_axis_backward(&g, &nodes[*a].value, *axis, 1.0);
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::MeanAxis(a, axis) => {
                    let count = nodes[*a].value.shape()[*axis] as f64;
                    let da = sum_axis_backward(&g, &nodes[*a].value, *axis, 1.0 / count);
                    accumulate(&mut grads, *a, da, &nodes);
                }
                Op::SelectRows { input, indices } => {
                    let src = &nodes[*input].value;
                    let d = if src.rank() == 1 { 1 } else { src.cols() };
                    let mut da = vec![0.0; src.numel()];
                    for (r, &idx) in indices.iter().enumerate() {
                        for j in 0..d {
                            da[idx * d + j] += g[r * d + j];
                        }
                    }
                    accumulate(&mut grads, *input, da, &nodes);
                }
                Op::ScatterAddRows { input, indices, .. } => {
                    let src = &nodes[*input].value;
                    let d = if src.rank() == 1 { 1 } else { src.cols() };
                    let mut da = vec![0.0; src.numel()];
                    for (r, &idx) in indices.iter().enumerate() {
                        for j in 0..d {
                            da[r * d + j] = g[idx * d + j];
                        }
                    }
                    accumulate(&mut grads, *input, da, &nodes);
                }
                Op::Reshape(a) => {
                    accumulate(&mut grads, *a, g, &nodes);
                }
                Op::Transpose(a) => {
                    let (rows, cols) = (node.value.rows(), node.value.cols());
                    let mut da = vec![0.0; g.len()];
                    for i in 0..rows {
                        for j in 0..cols {
                            da[j * rows + i] = g[i * cols + j];
                        }
                    }
                    accumulate(&mut grads, *a, da, &nodes);
                }
            }
        }

        let shapes = nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect::<Vec<_>>();
        Gradients { grads, shapes }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>, nodes: &[Node]) {
    debug_assert_eq!(contrib.len(), nodes[id].value.numel());
    match &mut grads[id] {
        Some(g) => {
            for (gi, ci) in g.iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
        slot => *slot = Some(contrib),
    }
}

fn matmul_backward(g: &[f64], a: &Tensor, b: &Tensor) -> (Vec<f64>, Vec<f64>) {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let da = matmul_nt(g, b.data(), m, n, k);
            let db = matmul_tn(a.data(), g, m, k, n);
            (da, db)
        }
        // [k] @ [k,n] -> [n]
        (1, 2) => {
            let (k, n) = (b.rows(), b.cols());
            let mut da = vec![0.0; k];
            for p in 0..k {
                let b_row = &b.data()[p * n..(p + 1) * n];
                da[p] = b_row.iter().zip(g).map(|(bj, gj)| bj * gj).sum();
            }
            let mut db = vec![0.0; k * n];
            for p in 0..k {
                let ap = a.data()[p];
                for j in 0..n {
                    db[p * n + j] = ap * g[j];
                }
            }
            (da, db)
        }
        // [m,k] @ [k] -> [m]
        (2, 1) => {
            let (m, k) = (a.rows(), a.cols());
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    da[i * k + p] = g[i] * b.data()[p];
                }
            }
            let mut db = vec![0.0; k];
            for i in 0..m {
                let a_row = &a.data()[i * k..(i + 1) * k];
                for p in 0..k {
                    db[p] += a_row[p] * g[i];
                }
            }
            (da, db)
        }
        (ra, rb) => panic!("matmul backward: unsupported ranks {ra}/{rb}"),
    }
}

fn sum_axis_backward(g: &[f64], input: &Tensor, axis: usize, scale: f64) -> Vec<f64> {
    let (rows, cols) = (input.rows(), input.cols());
    let mut da = vec![0.0; input.numel()];
    match axis {
        0 => {
            for i in 0..rows {
                for j in 0..cols {
                    da[i * cols + j] = g[j] * scale;
                }
            }
        }
        1 => {
            for i in 0..rows {
                for j in 0..cols {
                    da[i * cols + j] = g[i] * scale;
                }
            }
        }
        _ => panic!("sum/mean axis {axis} out of range"),
    }
    da
}

fn concat_value(axis: usize, parts: &[&Tensor]) -> Tensor {
    match axis {
        0 => {
            if parts[0].rank() == 1 {
                let mut data = Vec::new();
                for p in parts {
                    assert_eq!(p.rank(), 1, "concat axis 0: mixed ranks");
                    data.extend_from_slice(p.data());
                }
                Tensor::vector(data)
            } else {
                let cols = parts[0].cols();
                let mut rows = 0;
                let mut data = Vec::new();
                for p in parts {
                    assert_eq!(
                        p.cols(),
                        cols,
                        "concat axis 0: column mismatch {:?} vs {:?}",
                        p.shape(),
                        parts[0].shape()
                    );
                    rows += p.rows();
                    data.extend_from_slice(p.data());
                }
                Tensor::matrix(rows, cols, data)
            }
        }
        1 => {
            let rows = parts[0].rows();
            let total_cols: usize = parts.iter().map(|p| p.cols()).sum();
            let mut data = vec![0.0; rows * total_cols];
            let mut offset = 0;
            for p in parts {
                assert_eq!(
                    p.rows(),
                    rows,
                    "concat axis 1: row mismatch {:?} vs {:?}",
                    p.shape(),
                    parts[0].shape()
                );
                let c = p.cols();
                for r in 0..rows {
                    data[r * total_cols + offset..r * total_cols + offset + c]
                        .copy_from_slice(p.row(r));
                }
                offset += c;
            }
            Tensor::matrix(rows, total_cols, data)
        }
        _ => panic!("concat: axis {axis} out of range"),
    }
}

fn concat_backward(
    g: &[f64],
    axis: usize,
    inputs: &[usize],
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
) {
    match axis {
        0 => {
            let mut offset = 0;
            for &id in inputs {
                let n = nodes[id].value.numel();
                accumulate(grads, id, g[offset..offset + n].to_vec(), nodes);
                offset += n;
            }
        }
        1 => {
            let rows = nodes[inputs[0]].value.rows();
            let total_cols: usize = inputs.iter().map(|&id| nodes[id].value.cols()).sum();
            let mut offset = 0;
            for &id in inputs {
                let c = nodes[id].value.cols();
                let mut da = vec![0.0; rows * c];
                for r in 0..rows {
                    da[r * c..(r + 1) * c]
                        .copy_from_slice(&g[r * total_cols + offset..r * total_cols + offset + c]);
                }
                accumulate(grads, id, da, nodes);
                offset += c;
            }
        }
        _ => unreachable!(),
    }
}

/// Gradients of one backward pass, addressable by tape handle or by
/// parameter name through the [`BoundParams`] used in the forward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        let shape = self.shapes[v.id].clone();
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    /// Gradient map over every bound parameter (zeros for untouched ones).
    pub fn named(&self, bound: &BoundParams<'_>) -> BTreeMap<String, Tensor> {
        bound
            .iter()
            .map(|(name, var)| (name.clone(), self.wrt(*var)))
            .collect()
    }
}

macro_rules! binary_op {
    ($name:ident, $op:ident, $kernel:expr) => {
        pub fn $name(self, rhs: Var<'t>) -> Var<'t> {
            let value = {
                let nodes = self.tape.nodes.borrow();
                let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
                assert_eq!(
                    a.shape(),
                    b.shape(),
                    concat!(stringify!($name), ": shape mismatch {:?} vs {:?}"),
                    a.shape(),
                    b.shape()
                );
                let f: fn(f64, f64) -> f64 = $kernel;
                let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            };
            self.tape.push(Op::$op(self.id, rhs.id), value)
        }
    };
}

macro_rules! unary_op {
    ($name:ident, $op:ident, $kernel:expr) => {
        pub fn $name(self) -> Var<'t> {
            let value = {
                let nodes = self.tape.nodes.borrow();
                let a = &nodes[self.id].value;
                let f: fn(f64) -> f64 = $kernel;
                let data = a.data().iter().map(|x| f(*x)).collect();
                Tensor::new(a.shape().to_vec(), data)
            };
            self.tape.push(Op::$op(self.id), value)
        }
    };
}

impl<'t> Var<'t> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    /// Copy the current value out of the tape.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let (data, shape) = match (a.rank(), b.rank()) {
                (2, 2) => {
                    assert_eq!(
                        a.cols(),
                        b.rows(),
                        "matmul: inner dimensions differ, lhs {:?} rhs {:?}",
                        a.shape(),
                        b.shape()
                    );
                    (
                        matmul_nn(a.data(), b.data(), a.rows(), a.cols(), b.cols()),
                        vec![a.rows(), b.cols()],
                    )
                }
                (1, 2) => {
                    assert_eq!(
                        a.numel(),
                        b.rows(),
                        "matmul: inner dimensions differ, lhs {:?} rhs {:?}",
                        a.shape(),
                        b.shape()
                    );
                    (
                        matmul_nn(a.data(), b.data(), 1, a.numel(), b.cols()),
                        vec![b.cols()],
                    )
                }
                (2, 1) => {
                    assert_eq!(
                        a.cols(),
                        b.numel(),
                        "matmul: inner dimensions differ, lhs {:?} rhs {:?}",
                        a.shape(),
                        b.shape()
                    );
                    (
                        matmul_nn(a.data(), b.data(), a.rows(), a.cols(), 1),
                        vec![a.rows()],
                    )
                }
                (ra, rb) => panic!("matmul: unsupported ranks {ra}/{rb}"),
            };
            Tensor::new(shape, data)
        };
        self.tape.push(Op::MatMul(self.id, rhs.id), value)
    }

    binary_op!(add, Add, |x, y| x + y);
    binary_op!(sub, Sub, |x, y| x - y);
    binary_op!(mul, Mul, |x, y| x * y);

    /// `[n,d] + [d]` bias broadcast.
    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        let value = self.row_broadcast("add_row", bias, |x, y| x + y);
        self.tape.push(Op::AddRow(self.id, bias.id), value)
    }

    /// `[n,d] ⊙ [d]` elementwise with the vector repeated per row.
    pub fn mul_row(self, v: Var<'t>) -> Var<'t> {
        let value = self.row_broadcast("mul_row", v, |x, y| x * y);
        self.tape.push(Op::MulRow(self.id, v.id), value)
    }

    fn row_broadcast(self, op: &str, rhs: Var<'t>, f: fn(f64, f64) -> f64) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
        assert_eq!(b.rank(), 1, "{op}: broadcast side must be rank 1, got {:?}", b.shape());
        assert_eq!(
            a.cols(),
            b.numel(),
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        let d = b.numel();
        let mut data = vec![0.0; a.numel()];
        for (r, chunk) in a.data().chunks(d).enumerate() {
            for j in 0..d {
                data[r * d + j] = f(chunk[j], b.data()[j]);
            }
        }
        Tensor::new(a.shape().to_vec(), data)
    }

    /// Scale row `i` of `[n,d]` by `s[i]`.
    pub fn scale_rows(self, s: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, sv) = (&nodes[self.id].value, &nodes[s.id].value);
            assert_eq!(
                a.rows(),
                sv.numel(),
                "scale_rows: shape mismatch {:?} vs {:?}",
                a.shape(),
                sv.shape()
            );
            let d = a.cols();
            let mut data = vec![0.0; a.numel()];
            for r in 0..a.rows() {
                let scale = sv.data()[r];
                for j in 0..d {
                    data[r * d + j] = a.data()[r * d + j] * scale;
                }
            }
            Tensor::new(a.shape().to_vec(), data)
        };
        self.tape.push(Op::ScaleRows(self.id, s.id), value)
    }

    /// Softmax over the last axis (per row for matrices).
    pub fn softmax(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let cols = if a.rank() == 1 { a.numel() } else { a.cols() };
            let rows = a.numel() / cols;
            Tensor::new(a.shape().to_vec(), softmax_rows(a.data(), rows, cols))
        };
        self.tape.push(Op::Softmax(self.id), value)
    }

    unary_op!(sigmoid, Sigmoid, sigmoid);
    unary_op!(tanh, Tanh, |x| x.tanh());
    unary_op!(relu, Relu, |x| x.max(0.0));
    unary_op!(exp, Exp, |x| x.exp());
    unary_op!(ln, Ln, |x| x.ln());
    unary_op!(neg, Neg, |x| -x);

    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.map_value(|x| x * c);
        self.tape.push(Op::Scale(self.id, c), value)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.map_value(|x| x + c);
        self.tape.push(Op::AddScalar(self.id, c), value)
    }

    /// Elementwise `x^p` with constant exponent (convention `0^0 = 1`).
    pub fn pow_scalar(self, p: f64) -> Var<'t> {
        let value = self.map_value(|x| x.powf(p));
        self.tape.push(Op::PowScalar(self.id, p), value)
    }

    fn map_value(self, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| f(*x)).collect())
    }

    pub fn sum_all(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::scalar(nodes[self.id].value.data().iter().sum())
        };
        self.tape.push(Op::SumAll(self.id), value)
    }

    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        let value = self.reduce_axis("sum_axis", axis, 1.0);
        self.tape.push(Op::SumAxis(self.id, axis), value)
    }

    pub fn mean_axis(self, axis: usize) -> Var<'t> {
        let count = self.shape()[axis] as f64;
        let value = self.reduce_axis("mean_axis", axis, 1.0 / count);
        self.tape.push(Op::MeanAxis(self.id, axis), value)
    }

    fn reduce_axis(self, op: &str, axis: usize, scale: f64) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        assert_eq!(a.rank(), 2, "{op}: expected rank 2, got {:?}", a.shape());
        let (rows, cols) = (a.rows(), a.cols());
        match axis {
            0 => {
                let mut out = vec![0.0; cols];
                for r in 0..rows {
                    for j in 0..cols {
                        out[j] += a.data()[r * cols + j];
                    }
                }
                out.iter_mut().for_each(|x| *x *= scale);
                Tensor::vector(out)
            }
            1 => {
                let mut out = vec![0.0; rows];
                for (r, slot) in out.iter_mut().enumerate() {
                    *slot = a.row(r).iter().sum::<f64>() * scale;
                }
                Tensor::vector(out)
            }
            _ => panic!("{op}: axis {axis} out of range for {:?}", a.shape()),
        }
    }

    /// Gather rows (or vector elements) by index; duplicates allowed.
    pub fn select_rows(self, indices: &[usize]) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let d = if a.rank() == 1 { 1 } else { a.cols() };
            let n = a.numel() / d;
            let mut data = Vec::with_capacity(indices.len() * d);
            for &idx in indices {
                assert!(
                    idx < n,
                    "select_rows: index {idx} out of range for {:?}",
                    a.shape()
                );
                data.extend_from_slice(&a.data()[idx * d..(idx + 1) * d]);
            }
            if a.rank() == 1 {
                Tensor::vector(data)
            } else {
                Tensor::matrix(indices.len(), d, data)
            }
        };
        self.tape.push(
            Op::SelectRows {
                input: self.id,
                indices: indices.to_vec(),
            },
            value,
        )
    }

    /// Scatter rows into a zero tensor of `rows` rows, accumulating
    /// duplicates in input order.
    pub fn scatter_add_rows(self, indices: &[usize], rows: usize) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let d = if a.rank() == 1 { 1 } else { a.cols() };
            assert_eq!(
                indices.len(),
                a.numel() / d,
                "scatter_add_rows: {} indices for {:?}",
                indices.len(),
                a.shape()
            );
            let mut data = vec![0.0; rows * d];
            for (r, &idx) in indices.iter().enumerate() {
                assert!(idx < rows, "scatter_add_rows: index {idx} out of range");
                for j in 0..d {
                    data[idx * d + j] += a.data()[r * d + j];
                }
            }
            if a.rank() == 1 {
                Tensor::vector(data)
            } else {
                Tensor::matrix(rows, d, data)
            }
        };
        self.tape.push(
            Op::ScatterAddRows {
                input: self.id,
                indices: indices.to_vec(),
                rows,
            },
            value,
        )
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            Tensor::new(shape, a.data().to_vec())
        };
        self.tape.push(Op::Reshape(self.id), value)
    }

    pub fn transpose(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            assert_eq!(a.rank(), 2, "transpose: expected rank 2, got {:?}", a.shape());
            let (rows, cols) = (a.rows(), a.cols());
            let mut data = vec![0.0; a.numel()];
            for i in 0..rows {
                for j in 0..cols {
                    data[j * rows + i] = a.data()[i * cols + j];
                }
            }
            Tensor::matrix(cols, rows, data)
        };
        self.tape.push(Op::Transpose(self.id), value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn softmax_single_element_row() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.7]));
        assert_eq!(x.softmax().value().data(), &[1.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.0, 0.0, 0.0]));
        let y = x.softmax().value();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_identity_is_noop() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let eye = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(a.matmul(eye).value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "matmul: inner dimensions differ")]
    fn matmul_shape_mismatch_names_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![4, 5]));
        let _ = a.matmul(b);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let w = tape.leaf(t(&[3], &[5.0, -1.0, 2.0]));
        let loss = w.sum_all();
        let grads = tape.backward(loss);
        assert_eq!(grads.wrt(w).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0]));
        let loss = w.mul(w).sum_all();
        let grads = tape.backward(loss);
        assert_eq!(grads.wrt(w).data(), &[2.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "loss must be scalar")]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0]));
        let _ = tape.backward(w);
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0]));
        let u = tape.leaf(t(&[3], &[1.0, 1.0, 1.0]));
        let grads = tape.backward(w.sum_all());
        assert_eq!(grads.wrt(u).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn check_finite_mode_catches_nan() {
        let tape = Tape::new();
        tape.set_check_finite(true);
        let x = tape.leaf(t(&[1], &[-1.0]));
        let _ = x.ln();
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let a = tape.leaf(t(&[2, 2], &[0.3, -1.7, 2.2, 0.9]));
            let b = tape.leaf(t(&[2, 2], &[1.1, 0.2, -0.4, 0.8]));
            let y = a.matmul(b).sigmoid().softmax();
            let loss = y.sum_all();
            let grads = tape.backward(loss);
            (grads.wrt(a).data().to_vec(), grads.wrt(b).data().to_vec())
        };
        let (ga1, gb1) = run();
        let (ga2, gb2) = run();
        assert!(ga1.iter().zip(&ga2).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(gb1.iter().zip(&gb2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    // Central finite differences over every primitive op, rel err <= 1e-6.
    mod finite_differences {
        use super::*;
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};

        const STEP: f64 = 1e-5;
        const TOL: f64 = 1e-6;

        fn rand_tensor(rng: &mut StdRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
            let numel = shape.iter().product();
            let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
            Tensor::new(shape.to_vec(), data)
        }

        /// Compare backward() to central differences for every element of
        /// every input; `f` must build a scalar on the given tape.
        fn check<F>(inputs: &[Tensor], f: F)
        where
            F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
        {
            let analytic: Vec<Tensor> = {
                let tape = Tape::new();
                let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
                let loss = f(&tape, &vars);
                let grads = tape.backward(loss);
                vars.iter().map(|v| grads.wrt(*v)).collect()
            };
            let eval = |perturbed: &[Tensor]| -> f64 {
                let tape = Tape::new();
                let vars: Vec<Var<'_>> =
                    perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
                f(&tape, &vars).value().item()
            };
            for (ti, t) in inputs.iter().enumerate() {
                for e in 0..t.numel() {
                    let mut plus = inputs.to_vec();
                    plus[ti].data_mut()[e] += STEP;
                    let mut minus = inputs.to_vec();
                    minus[ti].data_mut()[e] -= STEP;
                    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
                    let a = analytic[ti].data()[e];
                    let diff = (a - numeric).abs();
                    let denom = a.abs().max(numeric.abs()).max(1.0);
                    assert!(
                        diff / denom <= TOL,
                        "input {ti} element {e}: analytic {a} vs numeric {numeric}"
                    );
                }
            }
        }

        #[test]
        fn matmul_all_rank_combinations() {
            let mut rng = StdRng::seed_from_u64(11);
            let a = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
            check(&[a.clone(), b.clone()], |_, v| v[0].matmul(v[1]).sum_all());
            let va = rand_tensor(&mut rng, &[3], -1.0, 1.0);
            check(&[va.clone(), b], |_, v| v[0].matmul(v[1]).sum_all());
            let vb = rand_tensor(&mut rng, &[3], -1.0, 1.0);
            check(&[a, vb], |_, v| v[0].matmul(v[1]).mul(v[0].matmul(v[1])).sum_all());
        }

        #[test]
        fn elementwise_binary_ops() {
            let mut rng = StdRng::seed_from_u64(12);
            let a = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
            check(&[a.clone(), b.clone()], |_, v| v[0].add(v[1]).mul(v[0]).sum_all());
            check(&[a.clone(), b.clone()], |_, v| v[0].sub(v[1]).mul(v[1]).sum_all());
            check(&[a, b], |_, v| v[0].mul(v[1]).sum_all());
        }

        #[test]
        fn row_broadcast_ops() {
            let mut rng = StdRng::seed_from_u64(13);
            let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let bias = rand_tensor(&mut rng, &[4], -1.0, 1.0);
            let s = rand_tensor(&mut rng, &[3], -1.0, 1.0);
            check(&[a.clone(), bias.clone()], |_, v| {
                v[0].add_row(v[1]).sigmoid().sum_all()
            });
            check(&[a.clone(), bias], |_, v| v[0].mul_row(v[1]).tanh().sum_all());
            check(&[a, s], |_, v| v[0].scale_rows(v[1]).sum_all());
        }

        #[test]
        fn activations_and_scalar_ops() {
            let mut rng = StdRng::seed_from_u64(14);
            // keep ReLU inputs away from zero kinks
            let numel = 8;
            let data: Vec<f64> = (0..numel)
                .map(|_| {
                    let x: f64 = rng.gen_range(0.2..1.0);
                    if rng.gen_bool(0.5) {
                        x
                    } else {
                        -x
                    }
                })
                .collect();
            let a = Tensor::new(vec![2, 4], data);
            check(&[a.clone()], |_, v| v[0].sigmoid().sum_all());
            check(&[a.clone()], |_, v| v[0].tanh().sum_all());
            check(&[a.clone()], |_, v| v[0].relu().sum_all());
            check(&[a.clone()], |_, v| v[0].exp().sum_all());
            check(&[a.clone()], |_, v| v[0].neg().scale(2.5).add_scalar(0.3).sum_all());
            let pos = rand_tensor(&mut rng, &[6], 0.3, 1.5);
            check(&[pos.clone()], |_, v| v[0].ln().sum_all());
            check(&[pos], |_, v| v[0].pow_scalar(2.0).sum_all());
        }

        #[test]
        fn softmax_rows_and_vector() {
            let mut rng = StdRng::seed_from_u64(15);
            let a = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
            let w = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            check(&[a.clone(), w.clone()], |_, v| v[0].softmax().mul(v[1]).sum_all());
            let x = rand_tensor(&mut rng, &[5], -2.0, 2.0);
            let u = rand_tensor(&mut rng, &[5], -1.0, 1.0);
            check(&[x, u], |_, v| v[0].softmax().mul(v[1]).sum_all());
        }

        #[test]
        fn reductions() {
            let mut rng = StdRng::seed_from_u64(16);
            let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let w0 = rand_tensor(&mut rng, &[4], -1.0, 1.0);
            let w1 = rand_tensor(&mut rng, &[3], -1.0, 1.0);
            check(&[a.clone(), w0.clone()], |_, v| v[0].sum_axis(0).mul(v[1]).sum_all());
            check(&[a.clone(), w1.clone()], |_, v| v[0].sum_axis(1).mul(v[1]).sum_all());
            check(&[a.clone(), w0], |_, v| v[0].mean_axis(0).mul(v[1]).sum_all());
            check(&[a, w1], |_, v| v[0].mean_axis(1).mul(v[1]).sum_all());
        }

        #[test]
        fn gather_scatter_reshape_transpose() {
            let mut rng = StdRng::seed_from_u64(17);
            let a = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            // duplicate index on purpose
            check(&[a.clone()], |_, v| {
                v[0].select_rows(&[0, 2, 2, 3]).sigmoid().sum_all()
            });
            check(&[a.clone()], |_, v| {
                v[0].scatter_add_rows(&[1, 0, 1, 2], 3).tanh().sum_all()
            });
            check(&[a.clone()], |_, v| v[0].reshape(vec![3, 4]).sigmoid().sum_all());
            check(&[a.clone()], |_, v| v[0].transpose().sigmoid().sum_all());
            let p = rand_tensor(&mut rng, &[5], 0.1, 0.9);
            check(&[p], |_, v| v[0].select_rows(&[1, 3]).ln().sum_all());
        }

        #[test]
        fn concat_both_axes() {
            let mut rng = StdRng::seed_from_u64(18);
            let a = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[2, 2], -1.0, 1.0);
            check(&[a.clone(), b.clone()], |tape, v| {
                tape.concat(1, &[v[0], v[1]]).sigmoid().sum_all()
            });
            let c = rand_tensor(&mut rng, &[1, 3], -1.0, 1.0);
            check(&[a, c], |tape, v| {
                tape.concat(0, &[v[0], v[1]]).tanh().sum_all()
            });
            let x = rand_tensor(&mut rng, &[3], -1.0, 1.0);
            let y = rand_tensor(&mut rng, &[2], -1.0, 1.0);
            check(&[x, y], |tape, v| {
                tape.concat(0, &[v[0], v[1]]).sigmoid().sum_all()
            });
        }

        #[test]
        fn composite_expression() {
            let mut rng = StdRng::seed_from_u64(19);
            let a = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[2], -1.0, 1.0);
            check(&[a, w, b], |_, v| {
                v[0].matmul(v[1])
                    .add_row(v[2])
                    .sigmoid()
                    .softmax()
                    .ln()
                    .neg()
                    .sum_all()
            });
        }
    }
}
