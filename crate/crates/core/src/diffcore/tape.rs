use std::ops::Deref;

use super::tensor::{dot, matvec_into, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Stored<'a> {
    Borrowed(&'a [f64]),
    Owned(Vec<f64>),
}

impl Deref for Stored<'_> {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        match self {
            Stored::Borrowed(s) => s,
            Stored::Owned(v) => v,
        }
    }
}

enum Op {
    Leaf,
    Affine {
        w: usize,
        x: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    OneMinus(usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    Mask(usize, Vec<f64>),
    Ln(usize),
    Square(usize),
    Dot(usize, usize),
    Sum(usize),
    Pick(usize, usize),
}

struct Node<'a> {
    shape: Shape,
    value: Stored<'a>,
    op: Op,
    needs_grad: bool,
}

/// Records a straight-line program of primitive operations for one reverse pass.
///
/// Leaves registered with [`Tape::param`] borrow their storage, so large weight
/// matrices are never copied onto the tape.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    factored: bool,
}

/// Rank-1 term `left ⊗ right` of a weight-matrix gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Outer {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Adjoints produced by [`Tape::backward`], one optional buffer per recorded slot.
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    factors: Vec<Vec<Outer>>,
}

/// A gradient as a dense part plus a sum of outer products.
#[derive(Debug, Clone, Copy)]
pub struct GradRef<'g> {
    pub dense: Option<&'g [f64]>,
    pub factors: &'g [Outer],
}

impl<'g> GradRef<'g> {
    pub fn dense(values: &'g [f64]) -> Self {
        GradRef {
            dense: Some(values),
            factors: &[],
        }
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = self.dense.map_or_else(|| vec![0.0; len], <[f64]>::to_vec);
        for f in self.factors {
            let cols = f.right.len();
            for (i, &l) in f.left.iter().enumerate() {
                for (o, &r) in out[i * cols..(i + 1) * cols].iter_mut().zip(&f.right) {
                    *o += l * r;
                }
            }
        }
        out
    }
}

impl Gradients {
    /// Dense gradient of the loss with respect to `var`, or `None` when the loss
    /// does not depend on it. On a factored tape weight matrices are only
    /// available through [`Gradients::grad`].
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.adjoints.get(var.0).and_then(|a| a.as_deref())
    }

    /// Full gradient with respect to `var` in dense-plus-factored form.
    pub fn grad(&self, var: Var) -> Option<GradRef<'_>> {
        let dense = self.get(var);
        let factors = self.factors.get(var.0).map_or(&[][..], Vec::as_slice);
        (dense.is_some() || !factors.is_empty()).then_some(GradRef { dense, factors })
    }

    /// Gradient with respect to `var`, materializing zeros when unreachable.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.grad(var).map_or_else(|| vec![0.0; len], |g| g.to_dense(len))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            factored: false,
        }
    }

    /// A tape whose backward pass keeps gradients of leaf weight matrices as
    /// outer products instead of dense buffers.
    pub fn factored() -> Self {
        Tape {
            nodes: Vec::new(),
            factored: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf backed by borrowed storage.
    pub fn param(&mut self, tensor: &'a Tensor) -> Var {
        self.push(tensor.shape(), Stored::Borrowed(tensor.values()), Op::Leaf, true)
    }

    /// Registers a differentiable leaf that owns its values.
    pub fn param_owned(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape();
        self.push(shape, Stored::Owned(tensor.into_values()), Op::Leaf, true)
    }

    /// Registers a constant; no adjoint is propagated into it.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape();
        self.push(shape, Stored::Owned(tensor.into_values()), Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].shape
    }

    pub fn scalar(&self, var: Var) -> Result<f64> {
        let node = &self.nodes[var.0];
        if !node.shape.is_scalar() {
            return Err(Error::Contract(format!(
                "expected a scalar slot, found shape {}",
                node.shape
            )));
        }
        Ok(node.value[0])
    }

    fn push(&mut self, shape: Shape, value: Stored<'a>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&v| self.nodes[v].needs_grad)
    }

    fn vector_len(&self, var: Var, op: &'static str) -> Result<usize> {
        match self.nodes[var.0].shape {
            Shape::Vector(n) => Ok(n),
            s => Err(Error::dims(op, s, "a vector")),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Shape> {
        let (sa, sb) = (self.nodes[a.0].shape, self.nodes[b.0].shape);
        if sa != sb {
            return Err(Error::dims(op, sa, sb));
        }
        Ok(sa)
    }

    /// `w · x + b`; `b` may be omitted for a plain matrix-vector product.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let (rows, cols) = match self.nodes[w.0].shape {
            Shape::Matrix { rows, cols } => (rows, cols),
            s => return Err(Error::dims("affine", s, "a matrix")),
        };
        let xn = self.vector_len(x, "affine")?;
        if xn != cols {
            return Err(Error::dims("affine", self.nodes[w.0].shape, self.nodes[x.0].shape));
        }
        if let Some(b) = b {
            let bn = self.vector_len(b, "affine")?;
            if bn != rows {
                return Err(Error::dims("affine", self.nodes[w.0].shape, self.nodes[b.0].shape));
            }
        }
        let mut out = vec![0.0; rows];
        matvec_into(
            &self.nodes[w.0].value,
            cols,
            &self.nodes[x.0].value,
            b.map(|b| &*self.nodes[b.0].value),
            &mut out,
        );
        let mut deps = vec![w.0, x.0];
        deps.extend(b.map(|b| b.0));
        let needs = self.grad_of(&deps);
        let op = Op::Affine {
            w: w.0,
            x: x.0,
            b: b.map(|b| b.0),
        };
        Ok(self.push(Shape::Vector(rows), Stored::Owned(out), op, needs))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.same_shape(a, b, name)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(self.nodes[b.0].value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.grad_of(&[a.0, b.0]);
        Ok(self.push(shape, Stored::Owned(out), op, needs))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let needs = self.nodes[a.0].needs_grad;
        let shape = self.nodes[a.0].shape;
        self.push(shape, Stored::Owned(out), op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a.0))
    }

    /// Max-shifted softmax over a vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.vector_len(a, "softmax")?;
        if n == 0 {
            return Err(Error::dims("softmax", "[0]", "at least one logit"));
        }
        let out = softmax(&self.nodes[a.0].value);
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(Shape::Vector(n), Stored::Owned(out), Op::Softmax(a.0), needs))
    }

    /// Multiplies by a constant elementwise mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let shape = self.nodes[a.0].shape;
        if mask.len() != shape.len() {
            return Err(Error::dims("mask", shape, format!("mask of {}", mask.len())));
        }
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(shape, Stored::Owned(out), Op::Mask(a.0, mask), needs))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let v = dot(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let needs = self.grad_of(&[a.0, b.0]);
        Ok(self.push(Shape::Vector(1), Stored::Owned(vec![v]), Op::Dot(a.0, b.0), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v: f64 = self.nodes[a.0].value.iter().sum();
        let needs = self.nodes[a.0].needs_grad;
        self.push(Shape::Vector(1), Stored::Owned(vec![v]), Op::Sum(a.0), needs)
    }

    /// Selects one entry of a vector as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.vector_len(a, "pick")?;
        if index >= n {
            return Err(Error::dims("pick", self.nodes[a.0].shape, format!("index {index}")));
        }
        let v = self.nodes[a.0].value[index];
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(Shape::Vector(1), Stored::Owned(vec![v]), Op::Pick(a.0, index), needs))
    }

    /// Reverse pass from a scalar slot. Operations are replayed in exact reverse
    /// recording order and fan-out adjoints are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract(format!("slot {} is not on this tape", loss.0)))?;
        if !node.shape.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, found shape {}",
                node.shape
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut factors: Vec<Vec<Outer>> = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut adj, &mut factors);
            adj[i] = Some(g);
        }
        Ok(Gradients { adjoints: adj, factors })
    }

    fn propagate(&self, node: &Node<'_>, g: &[f64], adj: &mut [Option<Vec<f64>>], factors: &mut [Vec<Outer>]) {
        let val = |k: usize| -> &[f64] { &self.nodes[k].value };
        match &node.op {
            Op::Leaf => {}
            &Op::Affine { w, x, b } => {
                let cols = self.nodes[x].shape.len();
                let xv = val(x);
                if self.nodes[w].needs_grad && self.factored && matches!(self.nodes[w].op, Op::Leaf) {
                    factors[w].push(Outer {
                        left: g.to_vec(),
                        right: xv.to_vec(),
                    });
                } else if self.nodes[w].needs_grad {
                    let gw = slot(adj, w, self.nodes[w].shape.len());
                    for (i, &gi) in g.iter().enumerate() {
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut gw[i * cols..(i + 1) * cols];
                        for (r, &xj) in row.iter_mut().zip(xv) {
                            *r += gi * xj;
                        }
                    }
                }
                if self.nodes[x].needs_grad {
                    let wv = val(w);
                    let gx = slot(adj, x, cols);
                    for (i, &gi) in g.iter().enumerate() {
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &wv[i * cols..(i + 1) * cols];
                        for (r, &wij) in gx.iter_mut().zip(row) {
                            *r += gi * wij;
                        }
                    }
                }
                if let Some(b) = b {
                    if self.nodes[b].needs_grad {
                        accumulate(adj, b, g.iter().copied());
                    }
                }
            }
            &Op::Add(a, b) => {
                self.accumulate_if(adj, a, g.iter().copied());
                self.accumulate_if(adj, b, g.iter().copied());
            }
            &Op::Sub(a, b) => {
                self.accumulate_if(adj, a, g.iter().copied());
                self.accumulate_if(adj, b, g.iter().map(|v| -v));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                self.accumulate_if(adj, a, g.iter().zip(bv).map(|(g, y)| g * y));
                self.accumulate_if(adj, b, g.iter().zip(av).map(|(g, x)| g * x));
            }
            &Op::OneMinus(a) => self.accumulate_if(adj, a, g.iter().map(|v| -v)),
            &Op::Scale(a, c) => self.accumulate_if(adj, a, g.iter().map(|v| c * v)),
            &Op::Sigmoid(a) => {
                let s = &node.value;
                self.accumulate_if(adj, a, g.iter().zip(s.iter()).map(|(g, s)| g * s * (1.0 - s)));
            }
            &Op::Tanh(a) => {
                let t = &node.value;
                self.accumulate_if(adj, a, g.iter().zip(t.iter()).map(|(g, t)| g * (1.0 - t * t)));
            }
            &Op::Softmax(a) => {
                let p = &node.value;
                let inner = dot(g, p);
                self.accumulate_if(adj, a, g.iter().zip(p.iter()).map(|(g, p)| p * (g - inner)));
            }
            Op::Mask(a, mask) => {
                self.accumulate_if(adj, *a, g.iter().zip(mask).map(|(g, m)| g * m));
            }
            &Op::Ln(a) => {
                let av = val(a);
                self.accumulate_if(adj, a, g.iter().zip(av).map(|(g, x)| g / x));
            }
            &Op::Square(a) => {
                let av = val(a);
                self.accumulate_if(adj, a, g.iter().zip(av).map(|(g, x)| 2.0 * g * x));
            }
            &Op::Dot(a, b) => {
                let (av, bv) = (val(a), val(b));
                let s = g[0];
                self.accumulate_if(adj, a, bv.iter().map(|y| s * y));
                self.accumulate_if(adj, b, av.iter().map(|x| s * x));
            }
            &Op::Sum(a) => {
                let n = self.nodes[a].shape.len();
                self.accumulate_if(adj, a, std::iter::repeat_n(g[0], n));
            }
            &Op::Pick(a, index) => {
                if self.nodes[a].needs_grad {
                    let n = self.nodes[a].shape.len();
                    slot(adj, a, n)[index] += g[0];
                }
            }
        }
    }

    fn accumulate_if(&self, adj: &mut [Option<Vec<f64>>], k: usize, it: impl ExactSizeIterator<Item = f64>) {
        if self.nodes[k].needs_grad {
            accumulate(adj, k, it);
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], k: usize, len: usize) -> &mut Vec<f64> {
    adj[k].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(adj: &mut [Option<Vec<f64>>], k: usize, it: impl ExactSizeIterator<Item = f64>) {
    let len = it.len();
    let buf = slot(adj, k, len);
    for (b, v) in buf.iter_mut().zip(it) {
        *b += v;
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

/// Max-shifted softmax. Entries are strictly positive for finite input.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}
