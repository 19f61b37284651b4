//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Values are flat row-major `Vec<f64>` with a shape. Differentiable
//! computations run through a [`Tape`]: leaves are registered first, every
//! operation appends a node, and [`Tape::backward`] walks the record in
//! reverse. Tapes are built per training step and discarded afterwards.
//!
//! All forward ops accumulate row-major, left-to-right, so results are
//! bit-reproducible across runs. Any non-finite forward value is an error,
//! never a silent NaN.

use crate::error::{Error, Result};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_TAGS: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

/// Dense n-dimensional value. `node_id` is set when the tensor was produced
/// by (or registered on) a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    /// Shared buffer: tape nodes and the tensors handed back from ops alias
    /// the same allocation; mutation copies on demand.
    data: Rc<Vec<f64>>,
    pub requires_grad: bool,
    pub node_id: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} does not describe {} elements",
                shape,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor::new" });
        }
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            requires_grad: false,
            node_id: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Rc::new(vec![0.0; numel]),
            requires_grad: false,
            node_id: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).expect("finite scalar")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("from_rows: empty".into()));
        }
        let d = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: vec![rows.len(), d],
                    right: vec![rows.len(), r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Rc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a 2D tensor (or 1 for 1D).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.cols();
        &self.data[i * d..(i + 1) * d]
    }

    /// Extract the value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NonScalarRoot {
                shape: self.shape.clone(),
            })
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    SumAll(usize),
    MeanAll(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    SqL2(usize),
    RowInner(usize, usize),
    Silu(usize),
    Tanh(usize),
    Abs(usize),
    ConcatCols(usize, usize),
    Gram(usize),
    NormalizeRows(usize),
    PairNegSqDist(usize),
    PairNegL1(usize),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    /// Leaves only: whether backward reports a gradient for this node.
    /// Frozen parameters and constants keep gradient flow alive through
    /// their consumers but never accumulate one themselves.
    wants_grad: bool,
    is_leaf: bool,
}

/// Append-only operation record for one backward pass.
pub struct Tape {
    tag: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradient map produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a tensor registered on the originating tape.
    /// `None` for constants, frozen parameters, and nodes unreachable from
    /// the root.
    pub fn wrt(&self, t: &Tensor) -> Option<&Tensor> {
        let id = t.node_id?;
        if id.tape != self.tape {
            return None;
        }
        self.grads.get(id.index).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::wrt`], but a parameter the root does not depend on
    /// gets an explicit zero gradient of matching shape.
    pub fn wrt_or_zeros(&self, t: &Tensor) -> Tensor {
        self.wrt(t)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape.clone()))
    }
}

fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// True when `b` is a row vector broadcastable over the rows of `a`.
fn row_broadcast(a: &[usize], b: &[usize]) -> bool {
    match (a, b) {
        ([_, d], [e]) => d == e,
        ([_, d], [1, e]) => d == e,
        _ => false,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            tag: TAPE_TAGS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        let index = self.nodes.len();
        let data = Rc::new(data);
        self.nodes.push(Node {
            op,
            shape: shape.clone(),
            data: Rc::clone(&data),
            wants_grad: true,
            is_leaf: false,
        });
        Tensor {
            shape,
            data,
            requires_grad,
            node_id: Some(NodeId {
                tape: self.tag,
                index,
            }),
        }
    }

    fn register(&mut self, t: &Tensor, requires_grad: bool, wants_grad: bool) -> Tensor {
        let index = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: t.shape.clone(),
            data: Rc::clone(&t.data),
            wants_grad,
            is_leaf: true,
        });
        Tensor {
            shape: t.shape.clone(),
            data: Rc::clone(&t.data),
            requires_grad,
            node_id: Some(NodeId {
                tape: self.tag,
                index,
            }),
        }
    }

    /// Register a trainable leaf: backward reports its gradient.
    pub fn param(&mut self, t: &Tensor) -> Tensor {
        self.register(t, true, true)
    }

    /// Register a frozen leaf: gradients flow through its consumers but are
    /// never accumulated for the leaf itself.
    pub fn frozen(&mut self, t: &Tensor) -> Tensor {
        self.register(t, false, false)
    }

    /// Register plain input data.
    pub fn constant(&mut self, t: &Tensor) -> Tensor {
        self.register(t, false, false)
    }

    /// Register a non-trainable leaf whose gradient is still reported
    /// (inputs we want sensitivities for, e.g. grad checks through x).
    pub fn watched(&mut self, t: &Tensor) -> Tensor {
        self.register(t, false, true)
    }

    fn idx(&self, t: &Tensor) -> Result<usize> {
        let id = t.node_id.ok_or(Error::NotOnTape)?;
        if id.tape != self.tag {
            return Err(Error::WrongTape);
        }
        Ok(id.index)
    }

    fn val(&self, i: usize) -> (&[usize], &[f64]) {
        (&self.nodes[i].shape, &self.nodes[i].data)
    }

    // ── Forward operations ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ash, ad) = self.val(ia);
        let (bsh, bd) = self.val(ib);
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: ash.to_vec(),
                right: bsh.to_vec(),
            });
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        ensure_finite("matmul", &out)?;
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(Op::MatMul(ia, ib), vec![m, n], out, rg))
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Tensor> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ash, ad) = self.val(ia);
        let (bsh, bd) = self.val(ib);
        let out = if ash == bsh {
            ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else if row_broadcast(ash, bsh) {
            let (n, d) = (ash[0], ash[1]);
            let mut out = Vec::with_capacity(n * d);
            for i in 0..n {
                for j in 0..d {
                    out.push(f(ad[i * d + j], bd[j]));
                }
            }
            out
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                left: ash.to_vec(),
                right: bsh.to_vec(),
            });
        };
        ensure_finite(name, &out)?;
        let shape = ash.to_vec();
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(op(ia, ib), shape, out, rg))
    }

    /// Elementwise sum; also broadcasts a row vector over the rows of `a`.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (ash, ad) = self.val(ia);
        let out: Vec<f64> = ad.iter().map(|&x| c * x).collect();
        ensure_finite("scale", &out)?;
        let shape = ash.to_vec();
        let rg = a.requires_grad;
        Ok(self.push(Op::Scale(ia, c), shape, out, rg))
    }

    pub fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (_, ad) = self.val(ia);
        let mut s = 0.0;
        for &v in ad {
            s += v;
        }
        ensure_finite("sum", &[s])?;
        let rg = a.requires_grad;
        Ok(self.push(Op::SumAll(ia), vec![1], vec![s], rg))
    }

    pub fn mean_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (_, ad) = self.val(ia);
        let mut s = 0.0;
        for &v in ad {
            s += v;
        }
        let m = s / ad.len() as f64;
        ensure_finite("mean", &[m])?;
        let rg = a.requires_grad;
        Ok(self.push(Op::MeanAll(ia), vec![1], vec![m], rg))
    }

    fn axis_reduce(&mut self, name: &'static str, a: &Tensor, axis: usize, mean: bool) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (ash, ad) = self.val(ia);
        if ash.len() != 2 || axis > 1 {
            return Err(Error::ShapeMismatch {
                op: name,
                left: ash.to_vec(),
                right: vec![axis],
            });
        }
        let (n, d) = (ash[0], ash[1]);
        let (out_shape, mut out) = if axis == 0 {
            (vec![d], vec![0.0; d])
        } else {
            (vec![n], vec![0.0; n])
        };
        for i in 0..n {
            for j in 0..d {
                let v = ad[i * d + j];
                if axis == 0 {
                    out[j] += v;
                } else {
                    out[i] += v;
                }
            }
        }
        if mean {
            let denom = if axis == 0 { n } else { d } as f64;
            for v in &mut out {
                *v /= denom;
            }
        }
        ensure_finite(name, &out)?;
        let rg = a.requires_grad;
        let op = if mean {
            Op::MeanAxis(ia, axis)
        } else {
            Op::SumAxis(ia, axis)
        };
        Ok(self.push(op, out_shape, out, rg))
    }

    pub fn sum_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.axis_reduce("sum_axis", a, axis, false)
    }

    pub fn mean_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.axis_reduce("mean_axis", a, axis, true)
    }

    /// Squared L2 norm over all elements.
    pub fn sq_l2(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (_, ad) = self.val(ia);
        let mut s = 0.0;
        for &v in ad {
            s += v * v;
        }
        ensure_finite("sq_l2", &[s])?;
        let rg = a.requires_grad;
        Ok(self.push(Op::SqL2(ia), vec![1], vec![s], rg))
    }

    /// Row-wise inner product of two [n, d] matrices, yielding [n].
    pub fn row_inner(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ash, ad) = self.val(ia);
        let (bsh, bd) = self.val(ib);
        if ash != bsh || ash.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "row_inner",
                left: ash.to_vec(),
                right: bsh.to_vec(),
            });
        }
        let (n, d) = (ash[0], ash[1]);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..d {
                s += ad[i * d + j] * bd[i * d + j];
            }
            out[i] = s;
        }
        ensure_finite("row_inner", &out)?;
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(Op::RowInner(ia, ib), vec![n], out, rg))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: &Tensor,
        f: impl Fn(f64) -> f64,
        op: impl Fn(usize) -> Op,
    ) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (ash, ad) = self.val(ia);
        let out: Vec<f64> = ad.iter().map(|&x| f(x)).collect();
        ensure_finite(name, &out)?;
        let shape = ash.to_vec();
        let rg = a.requires_grad;
        Ok(self.push(op(ia), shape, out, rg))
    }

    pub fn silu(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary("silu", a, |x| x * sigmoid(x), Op::Silu)
    }

    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary("tanh", a, f64::tanh, Op::Tanh)
    }

    pub fn abs(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary("abs", a, f64::abs, Op::Abs)
    }

    /// Concatenate two matrices along the last axis: [n,p] ++ [n,q] → [n,p+q].
    pub fn concat_cols(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ash, ad) = self.val(ia);
        let (bsh, bd) = self.val(ib);
        if ash.len() != 2 || bsh.len() != 2 || ash[0] != bsh[0] {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: ash.to_vec(),
                right: bsh.to_vec(),
            });
        }
        let (n, p, q) = (ash[0], ash[1], bsh[1]);
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&ad[i * p..(i + 1) * p]);
            out.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(Op::ConcatCols(ia, ib), vec![n, p + q], out, rg))
    }

    /// Gram matrix A·Aᵀ of an [n,d] matrix: all pairwise row inner products.
    pub fn gram(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (ash, ad) = self.val(ia);
        if ash.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gram",
                left: ash.to_vec(),
                right: vec![],
            });
        }
        let (n, d) = (ash[0], ash[1]);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..d {
                    s += ad[i * d + k] * ad[j * d + k];
                }
                out[i * n + j] = s;
            }
        }
        ensure_finite("gram", &out)?;
        let rg = a.requires_grad;
        Ok(self.push(Op::Gram(ia), vec![n, n], out, rg))
    }

    /// Normalize each row to unit L2 norm. Zero rows are an error (the
    /// quantity is undefined there).
    pub fn normalize_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (ash, ad) = self.val(ia);
        if ash.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "normalize_rows",
                left: ash.to_vec(),
                right: vec![],
            });
        }
        let (n, d) = (ash[0], ash[1]);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..d {
                s += ad[i * d + j] * ad[i * d + j];
            }
            let norm = s.sqrt();
            if norm == 0.0 {
                return Err(Error::NonFinite {
                    op: "normalize_rows (zero row)",
                });
            }
            for j in 0..d {
                out[i * d + j] = ad[i * d + j] / norm;
            }
        }
        ensure_finite("normalize_rows", &out)?;
        let rg = a.requires_grad;
        Ok(self.push(Op::NormalizeRows(ia), vec![n, d], out, rg))
    }

    /// Pairwise negated squared Euclidean distances: M[i][j] = −‖aᵢ−aⱼ‖².
    pub fn pairwise_neg_sqdist(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (ash, ad) = self.val(ia);
        if ash.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "pairwise_neg_sqdist",
                left: ash.to_vec(),
                right: vec![],
            });
        }
        let (n, d) = (ash[0], ash[1]);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..d {
                    let diff = ad[i * d + k] - ad[j * d + k];
                    s += diff * diff;
                }
                out[i * n + j] = -s;
            }
        }
        ensure_finite("pairwise_neg_sqdist", &out)?;
        let rg = a.requires_grad;
        Ok(self.push(Op::PairNegSqDist(ia), vec![n, n], out, rg))
    }

    /// Pairwise negated L1 distances: M[i][j] = −Σₖ|aᵢₖ−aⱼₖ|.
    pub fn pairwise_neg_l1(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.idx(a)?;
        let (ash, ad) = self.val(ia);
        if ash.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "pairwise_neg_l1",
                left: ash.to_vec(),
                right: vec![],
            });
        }
        let (n, d) = (ash[0], ash[1]);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..d {
                    s += (ad[i * d + k] - ad[j * d + k]).abs();
                }
                out[i * n + j] = -s;
            }
        }
        ensure_finite("pairwise_neg_l1", &out)?;
        let rg = a.requires_grad;
        Ok(self.push(Op::PairNegL1(ia), vec![n, n], out, rg))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar root. Consumes the tape: a second
    /// call is an error.
    pub fn backward(&mut self, root: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let ir = self.idx(root)?;
        if self.nodes[ir].data.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[ir].shape.clone(),
            });
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[ir] = Some(vec![1.0]);

        for i in (0..=ir).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                if node.is_leaf && !node.wants_grad {
                    return None;
                }
                g.map(|data| Tensor {
                    shape: node.shape.clone(),
                    data: Rc::new(data),
                    requires_grad: false,
                    node_id: None,
                })
            })
            .collect();
        Ok(Gradients {
            tape: self.tag,
            grads: out,
        })
    }

    fn accum(grads: &mut [Option<Vec<f64>>], idx: usize, node_len: usize, add: impl FnOnce(&mut [f64])) {
        let slot = grads[idx].get_or_insert_with(|| vec![0.0; node_len]);
        add(slot);
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match self.nodes[i].op {
            Op::Leaf => {}

            Op::MatMul(ia, ib) => {
                let (ash, ad) = self.val(ia);
                let (_, bd) = self.val(ib);
                let (m, k) = (ash[0], ash[1]);
                let n = self.nodes[i].shape[1];
                // dA = G·Bᵀ
                Self::accum(grads, ia, m * k, |da| {
                    for r in 0..m {
                        for c in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * bd[c * n + j];
                            }
                            da[r * k + c] += s;
                        }
                    }
                });
                // dB = Aᵀ·G, accumulated as rank-1 updates so the inner
                // loop is stride-1 in both operands
                Self::accum(grads, ib, k * n, |db| {
                    for j in 0..m {
                        let grow = &g[j * n..(j + 1) * n];
                        for r in 0..k {
                            let av = ad[j * k + r];
                            let drow = &mut db[r * n..(r + 1) * n];
                            for c in 0..n {
                                drow[c] += av * grow[c];
                            }
                        }
                    }
                });
            }

            Op::Add(ia, ib) | Op::Sub(ia, ib) => {
                let negate = matches!(self.nodes[i].op, Op::Sub(_, _));
                let alen = self.nodes[ia].data.len();
                let blen = self.nodes[ib].data.len();
                Self::accum(grads, ia, alen, |da| {
                    for (d, &gv) in da.iter_mut().zip(g.iter()) {
                        *d += gv;
                    }
                });
                Self::accum(grads, ib, blen, |db| {
                    if blen == g.len() {
                        for (d, &gv) in db.iter_mut().zip(g.iter()) {
                            *d += if negate { -gv } else { gv };
                        }
                    } else {
                        // row vector broadcast over rows: reduce over rows
                        let d = blen;
                        let rows = g.len() / d;
                        for r in 0..rows {
                            for c in 0..d {
                                let gv = g[r * d + c];
                                db[c] += if negate { -gv } else { gv };
                            }
                        }
                    }
                });
            }

            Op::Mul(ia, ib) => {
                let (_, ad) = self.val(ia);
                let (_, bd) = self.val(ib);
                let alen = ad.len();
                let blen = bd.len();
                let (ad, bd) = (ad.to_vec(), bd.to_vec());
                Self::accum(grads, ia, alen, |da| {
                    if blen == alen {
                        for idx in 0..alen {
                            da[idx] += g[idx] * bd[idx];
                        }
                    } else {
                        let d = blen;
                        for idx in 0..alen {
                            da[idx] += g[idx] * bd[idx % d];
                        }
                    }
                });
                Self::accum(grads, ib, blen, |db| {
                    if blen == alen {
                        for idx in 0..alen {
                            db[idx] += g[idx] * ad[idx];
                        }
                    } else {
                        let d = blen;
                        let rows = alen / d;
                        for r in 0..rows {
                            for c in 0..d {
                                db[c] += g[r * d + c] * ad[r * d + c];
                            }
                        }
                    }
                });
            }

            Op::Scale(ia, c) => {
                let alen = self.nodes[ia].data.len();
                Self::accum(grads, ia, alen, |da| {
                    for (d, &gv) in da.iter_mut().zip(g.iter()) {
                        *d += c * gv;
                    }
                });
            }

            Op::SumAll(ia) => {
                let alen = self.nodes[ia].data.len();
                Self::accum(grads, ia, alen, |da| {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                });
            }

            Op::MeanAll(ia) => {
                let alen = self.nodes[ia].data.len();
                let inv = 1.0 / alen as f64;
                Self::accum(grads, ia, alen, |da| {
                    for d in da.iter_mut() {
                        *d += g[0] * inv;
                    }
                });
            }

            Op::SumAxis(ia, axis) | Op::MeanAxis(ia, axis) => {
                let (ash, _) = self.val(ia);
                let (n, d) = (ash[0], ash[1]);
                let mean = matches!(self.nodes[i].op, Op::MeanAxis(_, _));
                let denom = if axis == 0 { n } else { d } as f64;
                let w = if mean { 1.0 / denom } else { 1.0 };
                Self::accum(grads, ia, n * d, |da| {
                    for r in 0..n {
                        for c in 0..d {
                            let gv = if axis == 0 { g[c] } else { g[r] };
                            da[r * d + c] += w * gv;
                        }
                    }
                });
            }

            Op::SqL2(ia) => {
                let (_, ad) = self.val(ia);
                let ad = ad.to_vec();
                Self::accum(grads, ia, ad.len(), |da| {
                    for (idx, d) in da.iter_mut().enumerate() {
                        *d += 2.0 * g[0] * ad[idx];
                    }
                });
            }

            Op::RowInner(ia, ib) => {
                let (ash, ad) = self.val(ia);
                let (_, bd) = self.val(ib);
                let (n, d) = (ash[0], ash[1]);
                let (ad, bd) = (ad.to_vec(), bd.to_vec());
                Self::accum(grads, ia, n * d, |da| {
                    for r in 0..n {
                        for c in 0..d {
                            da[r * d + c] += g[r] * bd[r * d + c];
                        }
                    }
                });
                Self::accum(grads, ib, n * d, |db| {
                    for r in 0..n {
                        for c in 0..d {
                            db[r * d + c] += g[r] * ad[r * d + c];
                        }
                    }
                });
            }

            Op::Silu(ia) => {
                let (_, ad) = self.val(ia);
                let ad = ad.to_vec();
                Self::accum(grads, ia, ad.len(), |da| {
                    for (idx, d) in da.iter_mut().enumerate() {
                        let s = sigmoid(ad[idx]);
                        *d += g[idx] * s * (1.0 + ad[idx] * (1.0 - s));
                    }
                });
            }

            Op::Tanh(ia) => {
                let y = self.nodes[i].data.clone();
                Self::accum(grads, ia, y.len(), |da| {
                    for (idx, d) in da.iter_mut().enumerate() {
                        *d += g[idx] * (1.0 - y[idx] * y[idx]);
                    }
                });
            }

            Op::Abs(ia) => {
                let (_, ad) = self.val(ia);
                let ad = ad.to_vec();
                Self::accum(grads, ia, ad.len(), |da| {
                    for (idx, d) in da.iter_mut().enumerate() {
                        // subgradient convention: sign(0) = 0
                        let s = if ad[idx] > 0.0 {
                            1.0
                        } else if ad[idx] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *d += g[idx] * s;
                    }
                });
            }

            Op::ConcatCols(ia, ib) => {
                let (ash, _) = self.val(ia);
                let (bsh, _) = self.val(ib);
                let (n, p, q) = (ash[0], ash[1], bsh[1]);
                Self::accum(grads, ia, n * p, |da| {
                    for r in 0..n {
                        for c in 0..p {
                            da[r * p + c] += g[r * (p + q) + c];
                        }
                    }
                });
                Self::accum(grads, ib, n * q, |db| {
                    for r in 0..n {
                        for c in 0..q {
                            db[r * q + c] += g[r * (p + q) + p + c];
                        }
                    }
                });
            }

            Op::Gram(ia) => {
                let (ash, ad) = self.val(ia);
                let (n, d) = (ash[0], ash[1]);
                let ad = ad.to_vec();
                // dA = (G + Gᵀ)·A
                Self::accum(grads, ia, n * d, |da| {
                    for r in 0..n {
                        for c in 0..d {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += (g[r * n + j] + g[j * n + r]) * ad[j * d + c];
                            }
                            da[r * d + c] += s;
                        }
                    }
                });
            }

            Op::NormalizeRows(ia) => {
                let (ash, ad) = self.val(ia);
                let (n, d) = (ash[0], ash[1]);
                let ad = ad.to_vec();
                Self::accum(grads, ia, n * d, |da| {
                    for r in 0..n {
                        let row = &ad[r * d..(r + 1) * d];
                        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = row.iter().zip(gr.iter()).map(|(&x, &gv)| x * gv).sum();
                        let n3 = norm * norm * norm;
                        for c in 0..d {
                            da[r * d + c] += gr[c] / norm - row[c] * dot / n3;
                        }
                    }
                });
            }

            Op::PairNegSqDist(ia) => {
                let (ash, ad) = self.val(ia);
                let (n, d) = (ash[0], ash[1]);
                let ad = ad.to_vec();
                Self::accum(grads, ia, n * d, |da| {
                    for r in 0..n {
                        for c in 0..d {
                            let arc = ad[r * d + c];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += (g[r * n + j] + g[j * n + r]) * (arc - ad[j * d + c]);
                            }
                            da[r * d + c] += -2.0 * s;
                        }
                    }
                });
            }

            Op::PairNegL1(ia) => {
                let (ash, ad) = self.val(ia);
                let (n, d) = (ash[0], ash[1]);
                let ad = ad.to_vec();
                Self::accum(grads, ia, n * d, |da| {
                    for r in 0..n {
                        for c in 0..d {
                            let arc = ad[r * d + c];
                            let mut s = 0.0;
                            for j in 0..n {
                                let diff = arc - ad[j * d + c];
                                let sg = if diff > 0.0 {
                                    1.0
                                } else if diff < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                };
                                s += (g[r * n + j] + g[j * n + r]) * sg;
                            }
                            da[r * d + c] += -s;
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(&t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(&t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let c = tape.matmul(&a, &i).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn squared_l2_of_3_4_is_25() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let s = tape.sq_l2(&x).unwrap();
        assert_eq!(s.item().unwrap(), 25.0);
    }

    #[test]
    fn row_inner_hand_computed() {
        let mut tape = Tape::new();
        let a = tape.constant(&t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = tape.constant(&t2(&[&[1.0, 1.0], &[1.0, 1.0]]));
        let r = tape.row_inner(&a, &b).unwrap();
        assert_eq!(r.data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_x_squared_is_2x() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let xx = tape.mul(&x, &x).unwrap();
        let root = tape.sum_all(&xx).unwrap();
        let grads = tape.backward(&root).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn frozen_middle_layer_gets_no_gradient_but_input_does() {
        let mut tape = Tape::new();
        let x = tape.param(&t2(&[&[0.5, -0.3]]));
        let w1 = tape.frozen(&t2(&[&[1.0, 2.0], &[0.5, -1.0]]));
        let w2 = tape.param(&t2(&[&[0.7], &[-0.2]]));
        let h = tape.matmul(&x, &w1).unwrap();
        let y = tape.matmul(&h, &w2).unwrap();
        let root = tape.sum_all(&y).unwrap();
        let grads = tape.backward(&root).unwrap();
        assert!(grads.wrt(&w1).is_none(), "frozen gradient must be absent");
        let gx = grads.wrt(&x).unwrap();
        // y = x·W1·W2, so dy/dx = (W1·W2)ᵀ
        let expect = [
            1.0 * 0.7 + 2.0 * -0.2,
            0.5 * 0.7 + -1.0 * -0.2,
        ];
        for (a, e) in gx.data().iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(grads.wrt(&w2).is_some());
    }

    #[test]
    fn constant_root_yields_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let c = tape.constant(&Tensor::scalar(7.0));
        let root = tape.sum_all(&c).unwrap();
        let grads = tape.backward(&root).unwrap();
        assert!(grads.wrt(&x).is_none());
        assert_eq!(grads.wrt_or_zeros(&x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_on_non_scalar_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.param(&t2(&[&[1.0, 2.0]]));
        let y = tape.scale(&x, 2.0).unwrap();
        match tape.backward(&y) {
            Err(Error::NonScalarRoot { shape }) => assert_eq!(shape, vec![1, 2]),
            other => panic!("expected NonScalarRoot, got {other:?}"),
        }
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let root = tape.sq_l2(&x).unwrap();
        tape.backward(&root).unwrap();
        assert!(matches!(tape.backward(&root), Err(Error::BackwardTwice)));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&t2(&[&[1.0, 2.0]]));
        let b = tape.constant(&t2(&[&[1.0, 2.0, 3.0]]));
        match tape.matmul(&a, &b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![1, 2]);
                assert_eq!(right, vec![1, 3]);
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn overflow_is_an_error_not_a_value() {
        let mut tape = Tape::new();
        let big = tape.constant(&Tensor::new(vec![1], vec![1e308]).unwrap());
        let doubled = tape.add(&big, &big);
        assert!(matches!(doubled, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn wrong_tape_is_detected() {
        let mut tape_a = Tape::new();
        let mut tape_b = Tape::new();
        let x = tape_a.param(&Tensor::scalar(1.0));
        let y = tape_b.param(&Tensor::scalar(2.0));
        assert!(matches!(tape_a.add(&x, &y), Err(Error::WrongTape)));
    }

    // Linearity of backward: grad(a·f + b·g) == a·grad(f) + b·grad(g).
    #[test]
    fn backward_is_linear() {
        let x0 = Tensor::new(vec![4], vec![0.3, -1.1, 0.8, 2.0]).unwrap();
        let (a, b) = (1.75, -0.4);

        let grads_of = |which: u8| -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape.param(&x0);
            let f = tape.sq_l2(&x).unwrap();
            let xt = tape.tanh(&x).unwrap();
            let g = tape.sum_all(&xt).unwrap();
            let root = match which {
                0 => f,
                1 => g,
                _ => {
                    let fa = tape.scale(&f, a).unwrap();
                    let gb = tape.scale(&g, b).unwrap();
                    tape.add(&fa, &gb).unwrap()
                }
            };
            let grads = tape.backward(&root).unwrap();
            grads.wrt(&x).unwrap().data().to_vec()
        };

        let gf = grads_of(0);
        let gg = grads_of(1);
        let gc = grads_of(2);
        for i in 0..4 {
            assert!((gc[i] - (a * gf[i] + b * gg[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_and_backward_are_bit_deterministic() {
        let run = || -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.param(&t2(&[&[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6]]));
            let w = tape.param(&t2(&[&[0.7, -0.2], &[0.1, 0.9], &[-0.5, 0.3]]));
            let h = tape.matmul(&x, &w).unwrap();
            let s = tape.silu(&h).unwrap();
            let m = tape.gram(&s).unwrap();
            let root = tape.sq_l2(&m).unwrap();
            let value = root.data().to_vec();
            let grads = tape.backward(&root).unwrap();
            (value, grads.wrt(&w).unwrap().data().to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn concat_cols_layout() {
        let mut tape = Tape::new();
        let a = tape.constant(&t2(&[&[1.0], &[3.0]]));
        let b = tape.constant(&t2(&[&[2.0, 5.0], &[4.0, 6.0]]));
        let c = tape.concat_cols(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    }

    #[test]
    fn gram_matches_matmul_with_transpose() {
        let mut tape = Tape::new();
        let a = tape.constant(&t2(&[&[1.0, 2.0], &[3.0, 4.0], &[0.5, -1.0]]));
        let m = tape.gram(&a).unwrap();
        assert_eq!(m.shape(), &[3, 3]);
        // hand-check a couple of entries
        assert_eq!(m.data()[0 * 3 + 1], 1.0 * 3.0 + 2.0 * 4.0);
        assert_eq!(m.data()[2 * 3 + 0], 0.5 * 1.0 + -1.0 * 2.0);
        // symmetry is exact: entry (i,j) and (j,i) are the same sum
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.data()[i * 3 + j], m.data()[j * 3 + i]);
            }
        }
    }
}
