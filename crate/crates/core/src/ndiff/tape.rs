use std::cell::{Cell, Ref, RefCell};
use std::sync::Arc;

use super::{Activation, NdiffError, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Affine {
        x: usize,
        scale: f64,
    },
    AddRowBroadcast(usize, usize),
    AddColBroadcast(usize, usize),
    MulColBroadcast(usize, usize),
    Activation(usize, Activation),
    MaskedSoftmax(usize),
    Concat(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    GatherRows {
        x: usize,
        index: Vec<usize>,
    },
    ScatterRows {
        x: usize,
        index: Vec<usize>,
    },
    SegmentSum {
        x: usize,
        group: usize,
    },
    Sum(usize),
    Clamp {
        x: usize,
        lo: f64,
        hi: f64,
    },
    Ln(usize),
    Pick {
        x: usize,
        cells: Vec<(usize, usize)>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in creation order, which is already a topological
/// order of the differentiation graph.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when nothing flowed into it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.id].clone()))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// A constant leaf sharing storage with the caller.
    pub fn shared(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_arc(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept once.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, NdiffError> {
        if self.consumed.get() {
            return Err(NdiffError::AlreadyBackpropagated);
        }
        let nodes = self.nodes.borrow();
        let root = &*nodes[loss.id].value;
        if root.len() != 1 {
            return Err(NdiffError::NonScalarLoss {
                shape: root.shape().to_vec(),
            });
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(root.shape().to_vec(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &*nodes[id].value;
    let val = |i: usize| &*nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            // dA = G Bᵀ, dB = Aᵀ G
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, matmul_rhs_t(g, val(*b)));
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, matmul_lhs_t(val(*a), g));
            }
        }
        Op::Transpose(x) => {
            accumulate(grads, nodes, *x, g.transpose().expect("rank-2"));
        }
        Op::Reshape(x) => {
            let gx = g.reshaped(val(*x).shape().to_vec()).expect("same length");
            accumulate(grads, nodes, *x, gx);
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Mul(a, b) => {
            let ga = zip_map(g, val(*b), |g, b| g * b);
            let gb = zip_map(g, val(*a), |g, a| g * a);
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::Affine { x, scale } => {
            accumulate(grads, nodes, *x, g.map(|v| v * scale));
        }
        Op::AddRowBroadcast(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            let cols = g.cols();
            let mut gb = vec![0.0; cols];
            for r in 0..g.rows() {
                for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                    *acc += v;
                }
            }
            let gb = Tensor::new(val(*b).shape().to_vec(), gb).expect("bias shape");
            accumulate(grads, nodes, *b, gb);
        }
        Op::AddColBroadcast(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            let gb: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
            accumulate(grads, nodes, *b, Tensor::column(gb));
        }
        Op::MulColBroadcast(a, b) => {
            let av = val(*a);
            let bv = val(*b);
            let cols = g.cols();
            let mut ga = vec![0.0; g.len()];
            let mut gb = vec![0.0; g.rows()];
            for r in 0..g.rows() {
                let s = bv.data()[r];
                let grow = g.row(r);
                let arow = av.row(r);
                let mut acc = 0.0;
                for c in 0..cols {
                    ga[r * cols + c] = grow[c] * s;
                    acc += grow[c] * arow[c];
                }
                gb[r] = acc;
            }
            accumulate(
                grads,
                nodes,
                *a,
                Tensor::new(av.shape().to_vec(), ga).unwrap(),
            );
            accumulate(grads, nodes, *b, Tensor::column(gb));
        }
        Op::Activation(x, kind) => {
            let xv = val(*x);
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(out.data())
                .map(|((g, &x), &y)| g * kind.derivative(x, y))
                .collect();
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(xv.shape().to_vec(), data).unwrap(),
            );
        }
        Op::MaskedSoftmax(x) => {
            let cols = out.cols();
            let mut gx = vec![0.0; out.len()];
            for r in 0..out.rows() {
                let y = out.row(r);
                let gr = g.row(r);
                let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                for c in 0..cols {
                    gx[r * cols + c] = y[c] * (gr[c] - dot);
                }
            }
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(out.shape().to_vec(), gx).unwrap(),
            );
        }
        Op::Concat(parts) => {
            let rows = g.rows();
            let total = g.cols();
            let mut offset = 0;
            for &p in parts {
                let width = val(p).cols();
                let mut gp = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + width]);
                }
                offset += width;
                accumulate(
                    grads,
                    nodes,
                    p,
                    Tensor::new(val(p).shape().to_vec(), gp).unwrap(),
                );
            }
        }
        Op::SliceRows { x, start } => {
            let xv = val(*x);
            let cols = xv.cols();
            let mut gx = vec![0.0; xv.len()];
            gx[start * cols..start * cols + g.len()].copy_from_slice(g.data());
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(xv.shape().to_vec(), gx).unwrap(),
            );
        }
        Op::SliceCols { x, start } => {
            let xv = val(*x);
            let cols = xv.cols();
            let width = g.cols();
            let mut gx = vec![0.0; xv.len()];
            for r in 0..g.rows() {
                gx[r * cols + start..r * cols + start + width].copy_from_slice(g.row(r));
            }
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(xv.shape().to_vec(), gx).unwrap(),
            );
        }
        Op::GatherRows { x, index } => {
            let xv = val(*x);
            let cols = xv.cols();
            let mut gx = vec![0.0; xv.len()];
            for (r, &src) in index.iter().enumerate() {
                for c in 0..cols {
                    gx[src * cols + c] += g.data()[r * cols + c];
                }
            }
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(xv.shape().to_vec(), gx).unwrap(),
            );
        }
        Op::ScatterRows { x, index } => {
            let xv = val(*x);
            let cols = xv.cols();
            let mut gx = Vec::with_capacity(xv.len());
            for &dst in index {
                gx.extend_from_slice(&g.data()[dst * cols..(dst + 1) * cols]);
            }
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(xv.shape().to_vec(), gx).unwrap(),
            );
        }
        Op::SegmentSum { x, group } => {
            let xv = val(*x);
            let cols = xv.cols();
            let mut gx = vec![0.0; xv.len()];
            for r in 0..xv.rows() {
                let src = g.row(r / group);
                gx[r * cols..(r + 1) * cols].copy_from_slice(src);
            }
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(xv.shape().to_vec(), gx).unwrap(),
            );
        }
        Op::Sum(x) => {
            let xv = val(*x);
            let s = g.data()[0];
            accumulate(grads, nodes, *x, Tensor::full(xv.shape().to_vec(), s));
        }
        Op::Clamp { x, lo, hi } => {
            let xv = val(*x);
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .map(|(g, &x)| if x < *lo || x > *hi { 0.0 } else { *g })
                .collect();
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(xv.shape().to_vec(), data).unwrap(),
            );
        }
        Op::Ln(x) => {
            let xv = val(*x);
            accumulate(grads, nodes, *x, zip_map(g, xv, |g, x| g / x));
        }
        Op::Pick { x, cells } => {
            let xv = val(*x);
            let cols = xv.cols();
            let mut gx = vec![0.0; xv.len()];
            for (k, &(r, c)) in cells.iter().enumerate() {
                gx[r * cols + c] += g.data()[k];
            }
            accumulate(
                grads,
                nodes,
                *x,
                Tensor::new(xv.shape().to_vec(), gx).unwrap(),
            );
        }
    }
}

/// `G · Bᵀ` without materializing the transpose.
fn matmul_rhs_t(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (g.rows(), g.cols());
    let k = b.rows();
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = g.row(i);
        for p in 0..k {
            out[i * k + p] = grow.iter().zip(b.row(p)).map(|(x, y)| x * y).sum();
        }
    }
    debug_assert_eq!(b.cols(), n);
    Tensor::matrix(m, k, out).unwrap()
}

/// `Aᵀ · G` without materializing the transpose; zero entries of `A` are skipped.
fn matmul_lhs_t(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = g.cols();
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = g.row(i);
        for (p, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += x * gv;
            }
        }
    }
    Tensor::matrix(k, n, out).unwrap()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(b.shape().to_vec(), data).unwrap()
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NdiffError {
    NdiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrows the recorded value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &*n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn emit(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let rg = inputs.iter().any(|&i| self.tape.requires_grad(i));
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>, NdiffError> {
        let v = self.value().matmul(&rhs.value())?;
        Ok(self.emit(v, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    pub fn transpose(self) -> Result<Var<'t>, NdiffError> {
        let v = self.value().transpose()?;
        Ok(self.emit(v, Op::Transpose(self.id), &[self.id]))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>, NdiffError> {
        let v = self.value().reshaped(shape)?;
        Ok(self.emit(v, Op::Reshape(self.id), &[self.id]))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>, NdiffError> {
        let v = {
            let (a, b) = (self.value(), rhs.value());
            if a.shape() != b.shape() {
                return Err(mismatch("add", &a, &b));
            }
            zip_map(&a, &b, |x, y| x + y)
        };
        Ok(self.emit(v, Op::Add(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Elementwise product.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>, NdiffError> {
        let v = {
            let (a, b) = (self.value(), rhs.value());
            if a.shape() != b.shape() {
                return Err(mismatch("mul", &a, &b));
            }
            zip_map(&a, &b, |x, y| x * y)
        };
        Ok(self.emit(v, Op::Mul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        let v = self.value().map(|x| scale * x + shift);
        self.emit(v, Op::Affine { x: self.id, scale }, &[self.id])
    }

    /// Adds a `[1, n]` row to every row of an `[m, n]` matrix.
    pub fn add_row_broadcast(self, row: Var<'t>) -> Result<Var<'t>, NdiffError> {
        let v = {
            let (a, b) = (self.value(), row.value());
            let (m, n) = a.dims2()?;
            if b.len() != n {
                return Err(mismatch("add_row_broadcast", &a, &b));
            }
            let mut out = a.data().to_vec();
            for r in 0..m {
                for (o, x) in out[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
                    *o += x;
                }
            }
            Tensor::matrix(m, n, out)?
        };
        Ok(self.emit(v, Op::AddRowBroadcast(self.id, row.id), &[self.id, row.id]))
    }

    /// Adds an `[m, 1]` column to every column of an `[m, n]` matrix.
    pub fn add_col_broadcast(self, col: Var<'t>) -> Result<Var<'t>, NdiffError> {
        let v = {
            let (a, b) = (self.value(), col.value());
            let (m, n) = a.dims2()?;
            if b.shape() != [m, 1] {
                return Err(mismatch("add_col_broadcast", &a, &b));
            }
            let mut out = a.data().to_vec();
            for r in 0..m {
                let s = b.data()[r];
                out[r * n..(r + 1) * n].iter_mut().for_each(|o| *o += s);
            }
            Tensor::matrix(m, n, out)?
        };
        Ok(self.emit(v, Op::AddColBroadcast(self.id, col.id), &[self.id, col.id]))
    }

    /// Scales row `r` of an `[m, n]` matrix by entry `r` of an `[m, 1]` column.
    pub fn mul_col_broadcast(self, col: Var<'t>) -> Result<Var<'t>, NdiffError> {
        let v = {
            let (a, b) = (self.value(), col.value());
            let (m, n) = a.dims2()?;
            if b.shape() != [m, 1] {
                return Err(mismatch("mul_col_broadcast", &a, &b));
            }
            let mut out = a.data().to_vec();
            for r in 0..m {
                let s = b.data()[r];
                out[r * n..(r + 1) * n].iter_mut().for_each(|o| *o *= s);
            }
            Tensor::matrix(m, n, out)?
        };
        Ok(self.emit(v, Op::MulColBroadcast(self.id, col.id), &[self.id, col.id]))
    }

    pub fn activation(self, kind: Activation) -> Var<'t> {
        let v = self.value().map(|x| kind.apply(x));
        self.emit(v, Op::Activation(self.id, kind), &[self.id])
    }

    /// Row-wise softmax restricted to entries whose `mask` bit is set.
    /// Masked-out entries are exactly 0.
    pub fn masked_softmax(self, mask: &[bool]) -> Result<Var<'t>, NdiffError> {
        let v = masked_softmax_rows(&self.value(), mask)?;
        Ok(self.emit(v, Op::MaskedSoftmax(self.id), &[self.id]))
    }

    pub fn softmax(self) -> Result<Var<'t>, NdiffError> {
        let mask = vec![true; self.value().len()];
        self.masked_softmax(&mask)
    }

    /// Concatenation along the last axis.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>, NdiffError> {
        let first = *parts.first().ok_or(NdiffError::EmptyConcat)?;
        let v = {
            let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let (rows, _) = values[0].dims2()?;
            let mut total = 0;
            for v in &values {
                let (r, c) = v.dims2()?;
                if r != rows {
                    return Err(mismatch("concat", &values[0], v));
                }
                total += c;
            }
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &values {
                    out.extend_from_slice(v.row(r));
                }
            }
            Tensor::matrix(rows, total, out)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.emit(v, Op::Concat(ids.clone()), &ids))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>, NdiffError> {
        let v = {
            let a = self.value();
            let (m, n) = a.dims2()?;
            if start + len > m {
                return Err(NdiffError::IndexOutOfRange {
                    index: start + len,
                    len: m,
                });
            }
            Tensor::matrix(len, n, a.data()[start * n..(start + len) * n].to_vec())?
        };
        Ok(self.emit(v, Op::SliceRows { x: self.id, start }, &[self.id]))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>, NdiffError> {
        let v = {
            let a = self.value();
            let (m, n) = a.dims2()?;
            if start + len > n {
                return Err(NdiffError::IndexOutOfRange {
                    index: start + len,
                    len: n,
                });
            }
            let mut out = Vec::with_capacity(m * len);
            for r in 0..m {
                out.extend_from_slice(&a.row(r)[start..start + len]);
            }
            Tensor::matrix(m, len, out)?
        };
        Ok(self.emit(v, Op::SliceCols { x: self.id, start }, &[self.id]))
    }

    /// Row `i` of the output is row `index[i]` of the input.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>, NdiffError> {
        let v = {
            let a = self.value();
            let (m, n) = a.dims2()?;
            let mut out = Vec::with_capacity(index.len() * n);
            for &i in index {
                if i >= m {
                    return Err(NdiffError::IndexOutOfRange { index: i, len: m });
                }
                out.extend_from_slice(a.row(i));
            }
            Tensor::matrix(index.len(), n, out)?
        };
        Ok(self.emit(
            v,
            Op::GatherRows {
                x: self.id,
                index: index.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Places row `i` of the input at row `index[i]` of a zero `[rows, n]`
    /// matrix. Indices must be distinct.
    pub fn scatter_rows(self, index: &[usize], rows: usize) -> Result<Var<'t>, NdiffError> {
        let v = {
            let a = self.value();
            let (m, n) = a.dims2()?;
            if index.len() != m {
                return Err(NdiffError::IndexOutOfRange {
                    index: index.len(),
                    len: m,
                });
            }
            let mut out = vec![0.0; rows * n];
            for (src, &dst) in index.iter().enumerate() {
                if dst >= rows {
                    return Err(NdiffError::IndexOutOfRange {
                        index: dst,
                        len: rows,
                    });
                }
                out[dst * n..(dst + 1) * n].copy_from_slice(a.row(src));
            }
            Tensor::matrix(rows, n, out)?
        };
        Ok(self.emit(
            v,
            Op::ScatterRows {
                x: self.id,
                index: index.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Sums consecutive groups of `group` rows: `[m·group, n] -> [m, n]`.
    pub fn segment_sum(self, group: usize) -> Result<Var<'t>, NdiffError> {
        let v = {
            let a = self.value();
            let (m, n) = a.dims2()?;
            if group == 0 || m % group != 0 {
                return Err(NdiffError::ShapeMismatch {
                    op: "segment_sum",
                    left: a.shape().to_vec(),
                    right: vec![group],
                });
            }
            let mut out = vec![0.0; (m / group) * n];
            for r in 0..m {
                let dst = &mut out[(r / group) * n..(r / group + 1) * n];
                for (o, x) in dst.iter_mut().zip(a.row(r)) {
                    *o += x;
                }
            }
            Tensor::matrix(m / group, n, out)?
        };
        Ok(self.emit(v, Op::SegmentSum { x: self.id, group }, &[self.id]))
    }

    /// Sum of all entries as a `[1, 1]` tensor.
    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.emit(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.emit(v, Op::Clamp { x: self.id, lo, hi }, &[self.id])
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.value().map(f64::ln);
        self.emit(v, Op::Ln(self.id), &[self.id])
    }

    /// Selects `(row, col)` cells into a `[k, 1]` column.
    pub fn pick(self, cells: &[(usize, usize)]) -> Result<Var<'t>, NdiffError> {
        let v = {
            let a = self.value();
            let (m, n) = a.dims2()?;
            let mut out = Vec::with_capacity(cells.len());
            for &(r, c) in cells {
                if r >= m || c >= n {
                    return Err(NdiffError::IndexOutOfRange {
                        index: r * n + c,
                        len: m * n,
                    });
                }
                out.push(a.at(r, c));
            }
            Tensor::column(out)
        };
        Ok(self.emit(
            v,
            Op::Pick {
                x: self.id,
                cells: cells.to_vec(),
            },
            &[self.id],
        ))
    }
}

pub(crate) fn masked_softmax_rows(x: &Tensor, mask: &[bool]) -> Result<Tensor, NdiffError> {
    if mask.len() != x.len() {
        return Err(NdiffError::ShapeMismatch {
            op: "masked_softmax",
            left: x.shape().to_vec(),
            right: vec![mask.len()],
        });
    }
    let rows = if x.shape().len() >= 2 { x.rows() } else { 1 };
    let cols = x.len() / rows.max(1);
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let lo = r * cols;
        let row = &x.data()[lo..lo + cols];
        let keep = &mask[lo..lo + cols];
        let max = row
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if !keep.iter().any(|&k| k) {
            return Err(NdiffError::EmptySupport { row: r });
        }
        if !max.is_finite() || row.iter().zip(keep).any(|(v, &k)| k && v.is_nan()) {
            for c in (0..cols).filter(|&c| keep[c]) {
                out[lo + c] = f64::NAN;
            }
            continue;
        }
        let mut total = 0.0;
        for c in 0..cols {
            if keep[c] {
                let e = (row[c] - max).exp();
                out[lo + c] = e;
                total += e;
            }
        }
        out[lo..lo + cols].iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(x.shape().to_vec(), out)
}
