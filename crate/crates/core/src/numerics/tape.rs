//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Nodes are recorded in evaluation order, so the node list is always a
//! topological order of the graph. Each non-leaf node owns a [`Backward`]
//! implementation that maps the adjoint of its output to adjoints of its
//! inputs; heavier primitives (LSTM, overlap-add, mask algebra) live next
//! to the code that defines their forward pass and plug in through the
//! same trait.

use std::rc::Rc;

use crate::error::{Error, Result};

/// Dense row-major tensor. The last axis is the "feature" axis: row-wise
/// operations treat every leading index combination as one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} elements",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Size of the last axis (1 for scalars).
    pub fn row_len(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        self.numel() / self.row_len().max(1)
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint rule of one recorded primitive.
///
/// `grad` has the shape of `output`; the returned vector holds one adjoint
/// per input, in input order, each with the shape of that input. Inputs that
/// do not need a gradient may be answered with `None`.
pub trait Backward {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

/// Single-writer record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: vec![],
            rule: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a primitive whose forward value has already been computed.
    pub fn record(&mut self, value: Tensor, inputs: Vec<Var>, rule: Box<dyn Backward>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs,
            rule: if requires_grad { Some(rule) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates `d loss / d loss = 1` back to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(loss_node.value.shape.clone(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = rule.backward(&grad, &inputs, &node.value);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (v, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // Interior adjoints are released once consumed; leaves keep theirs.
        }
        Ok(Gradients { grads })
    }
}

// ---------------------------------------------------------------------------
// dense GEMM

/// `c ← α·op(a)·op(b) + β·c` on strided row-major views.
///
/// `a` is `m×k` with strides `(rsa, csa)`, `b` is `k×n`, `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: lhs out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: output out of bounds");
    // SAFETY: every index touched lies inside the slices (checked above), and
    // `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

// ---------------------------------------------------------------------------
// primitive operations

struct AddRule;
impl Backward for AddRule {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone()), Some(grad.clone())]
    }
}

struct MulRule;
impl Backward for MulRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let ga = grad.data.iter().zip(&b.data).map(|(g, y)| g * y).collect();
        let gb = grad.data.iter().zip(&a.data).map(|(g, x)| g * x).collect();
        vec![
            Some(Tensor::new(a.shape.clone(), ga)),
            Some(Tensor::new(b.shape.clone(), gb)),
        ]
    }
}

struct ScaleRule(f64);
impl Backward for ScaleRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.data.iter().map(|g| g * self.0).collect();
        vec![Some(Tensor::new(inputs[0].shape.clone(), g))]
    }
}

struct LinearRule {
    has_bias: bool,
}
impl Backward for LinearRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (rows, din) = (x.rows(), x.row_len());
        let dout = w.shape[0];
        let mut dx = Tensor::zeros(x.shape.clone());
        gemm(rows, dout, din, 1.0, &grad.data, dout, 1, &w.data, din, 1, 0.0, &mut dx.data, din, 1);
        let mut dw = Tensor::zeros(w.shape.clone());
        gemm(dout, rows, din, 1.0, &grad.data, 1, dout, &x.data, din, 1, 0.0, &mut dw.data, din, 1);
        let mut out = vec![Some(dx), Some(dw)];
        if self.has_bias {
            let mut db = vec![0.0; dout];
            for row in grad.data.chunks_exact(dout) {
                for (acc, g) in db.iter_mut().zip(row) {
                    *acc += g;
                }
            }
            out.push(Some(Tensor::new(vec![dout], db)));
        }
        out
    }
}

struct TanhRule;
impl Backward for TanhRule {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], out: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.data.iter().zip(&out.data).map(|(g, y)| g * (1.0 - y * y)).collect();
        vec![Some(Tensor::new(out.shape.clone(), g))]
    }
}

struct SigmoidRule;
impl Backward for SigmoidRule {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], out: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.data.iter().zip(&out.data).map(|(g, y)| g * y * (1.0 - y)).collect();
        vec![Some(Tensor::new(out.shape.clone(), g))]
    }
}

struct ConcatRule {
    left: usize,
    right: usize,
}
impl Backward for ConcatRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let width = self.left + self.right;
        let mut ga = Vec::with_capacity(inputs[0].numel());
        let mut gb = Vec::with_capacity(inputs[1].numel());
        for row in grad.data.chunks_exact(width) {
            ga.extend_from_slice(&row[..self.left]);
            gb.extend_from_slice(&row[self.left..]);
        }
        vec![
            Some(Tensor::new(inputs[0].shape.clone(), ga)),
            Some(Tensor::new(inputs[1].shape.clone(), gb)),
        ]
    }
}

struct GatherRowsRule {
    index: Rc<Vec<usize>>,
}
impl Backward for GatherRowsRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let w = x.row_len();
        let mut gx = Tensor::zeros(x.shape.clone());
        for (r, &src) in self.index.iter().enumerate() {
            let dst = &mut gx.data[src * w..(src + 1) * w];
            for (d, g) in dst.iter_mut().zip(&grad.data[r * w..(r + 1) * w]) {
                *d += g;
            }
        }
        vec![Some(gx)]
    }
}

struct ReshapeRule;
impl Backward for ReshapeRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::new(inputs[0].shape.clone(), grad.data.clone()))]
    }
}

struct SumRule;
impl Backward for SumRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.item();
        vec![Some(Tensor::new(inputs[0].shape.clone(), vec![g; inputs[0].numel()]))]
    }
}

struct WeightedSumRule(Vec<f64>);
impl Backward for WeightedSumRule {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.item();
        self.0.iter().map(|w| Some(Tensor::scalar(g * w))).collect()
    }
}

struct L1DistRule {
    target: Rc<Vec<f64>>,
}
impl Backward for L1DistRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.item();
        let gx = inputs[0]
            .data
            .iter()
            .zip(self.target.iter())
            .map(|(x, t)| g * subgradient_sign(x - t))
            .collect();
        vec![Some(Tensor::new(inputs[0].shape.clone(), gx))]
    }
}

struct ComplexAbsRule;
impl Backward for ComplexAbsRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], out: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let mut gx = Vec::with_capacity(x.numel());
        for ((z, m), g) in x.data.chunks_exact(2).zip(&out.data).zip(&grad.data) {
            if *m == 0.0 {
                gx.extend_from_slice(&[0.0, 0.0]);
            } else {
                gx.push(g * z[0] / m);
                gx.push(g * z[1] / m);
            }
        }
        vec![Some(Tensor::new(x.shape.clone(), gx))]
    }
}

/// `sign(x)` with the subgradient convention `sign(0) = 0`.
pub fn subgradient_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
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

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "add: shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape.clone(), data);
        self.record(out, vec![a, b], Box::new(AddRule))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "mul: shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape.clone(), data);
        self.record(out, vec![a, b], Box::new(MulRule))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let va = self.value(a);
        let out = Tensor::new(va.shape.clone(), va.data.iter().map(|x| x * s).collect());
        self.record(out, vec![a], Box::new(ScaleRule(s)))
    }

    /// Row-wise affine map `x Wᵀ + b` with `W` of shape `(out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vw.shape.len(), 2, "linear: weight must be a matrix");
        let (dout, din) = (vw.shape[0], vw.shape[1]);
        assert_eq!(vx.row_len(), din, "linear: feature size mismatch");
        let rows = vx.rows();
        let mut shape = vx.shape.clone();
        *shape.last_mut().expect("linear input needs an axis") = dout;
        let mut out = Tensor::zeros(shape);
        if let Some(b) = b {
            let vb = self.value(b);
            assert_eq!(vb.numel(), dout, "linear: bias size mismatch");
            for row in out.data.chunks_exact_mut(dout) {
                row.copy_from_slice(&vb.data);
            }
        }
        gemm(rows, din, dout, 1.0, &vx.data, din, 1, &vw.data, 1, din, 1.0, &mut out.data, dout, 1);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record(out, inputs, Box::new(LinearRule { has_bias: b.is_some() }))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Tensor::new(va.shape.clone(), va.data.iter().map(|x| x.tanh()).collect());
        self.record(out, vec![a], Box::new(TanhRule))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Tensor::new(va.shape.clone(), va.data.iter().map(|&x| sigmoid(x)).collect());
        self.record(out, vec![a], Box::new(SigmoidRule))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (left, right) = (va.row_len(), vb.row_len());
        assert_eq!(va.rows(), vb.rows(), "concat: row count mismatch");
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        for (ra, rb) in va.data.chunks_exact(left).zip(vb.data.chunks_exact(right)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = va.shape.clone();
        *shape.last_mut().expect("concat needs an axis") = left + right;
        let out = Tensor::new(shape, data);
        self.record(out, vec![a, b], Box::new(ConcatRule { left, right }))
    }

    /// Output row `r` is input row `index[r]`; the result has shape `out_shape`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<Vec<usize>>, out_shape: Vec<usize>) -> Var {
        let vx = self.value(x);
        let w = vx.row_len();
        assert_eq!(out_shape.last().copied().unwrap_or(1), w, "gather_rows: row width changed");
        let mut data = Vec::with_capacity(index.len() * w);
        for &src in index.iter() {
            data.extend_from_slice(&vx.data[src * w..(src + 1) * w]);
        }
        let out = Tensor::new(out_shape, data);
        self.record(out, vec![x], Box::new(GatherRowsRule { index }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let out = self.value(x).clone().reshaped(shape);
        self.record(out, vec![x], Box::new(ReshapeRule))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.record(Tensor::scalar(s), vec![x], Box::new(SumRule))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let s = terms.iter().map(|(v, w)| self.value(*v).item() * w).sum();
        let inputs = terms.iter().map(|(v, _)| *v).collect();
        let weights = terms.iter().map(|(_, w)| *w).collect();
        self.record(Tensor::scalar(s), inputs, Box::new(WeightedSumRule(weights)))
    }

    /// `‖x − target‖₁` with subgradient 0 at the kink.
    pub fn l1_dist(&mut self, x: Var, target: Rc<Vec<f64>>) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.numel(), target.len(), "l1_dist: length mismatch");
        let s = vx.data.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum();
        self.record(Tensor::scalar(s), vec![x], Box::new(L1DistRule { target }))
    }

    /// Magnitude of complex values stored as trailing `(re, im)` pairs.
    pub fn complex_abs(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.row_len(), 2, "complex_abs: last axis must hold (re, im)");
        let data = vx.data.chunks_exact(2).map(|z| z[0].hypot(z[1])).collect();
        let shape = vx.shape[..vx.shape.len() - 1].to_vec();
        let out = Tensor::new(shape, data);
        self.record(out, vec![x], Box::new(ComplexAbsRule))
    }
}
