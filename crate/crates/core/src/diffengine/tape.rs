//! Reverse-mode tape over batched 2-D arrays.
//!
//! Every node holds an `Array2<f64>` whose rows are batch members. Forward-mode
//! input derivatives (Jacobian-vector products, second-order tangents) are not
//! a separate mechanism: they are built from ordinary nodes, so a single
//! reverse sweep differentiates losses that already contain input
//! derivatives of networks.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub(crate) type Backward = Box<dyn Fn(&Array2<f64>, &[&Array2<f64>], &Array2<f64>) -> Vec<Option<Array2<f64>>>>;

struct Node {
    value: Rc<Array2<f64>>,
    parents: Vec<usize>,
    backward: Option<Backward>,
    requires_grad: bool,
}

/// Recording context for one differentiable evaluation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    record: bool,
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
            record: true,
        }
    }

    /// A tape that evaluates values only; `backward` on it yields no gradients.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Array2<f64>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.record,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Data leaf; never receives a gradient.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push_leaf(value, false)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Trainable leaf.
    pub fn param(&self, value: Array2<f64>) -> Var<'_> {
        self.push_leaf(value, true)
    }

    pub(crate) fn push_op(&self, value: Array2<f64>, parents: &[Var<'_>], backward: Backward) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.record && parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: if requires_grad {
                parents.iter().map(|p| p.id).collect()
            } else {
                Vec::new()
            },
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse sweep from a `1x1` node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.dim();
        if shape != (1, 1) {
            return Err(Error::dim(format!("backward needs a 1x1 loss, got {shape:?}")));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[loss.id].requires_grad {
            return Ok(Gradients { grads: leaf_grads });
        }
        grads[loss.id] = Some(Array2::from_elem((1, 1), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                leaf_grads[id] = Some(g);
                continue;
            };
            let pvals: Vec<&Array2<f64>> = node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect();
            let pgrads = bw(&g, &pvals, &node.value);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.dim(), nodes[p].value.dim(), "gradient shape for node {p}");
                match grads[p].as_mut() {
                    Some(acc) => *acc += &pg,
                    None => grads[p] = Some(pg),
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Gradients of trainable leaves after a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Array2<f64> {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Array2::zeros(v.shape()),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Sums `g` down to `shape` along broadcast axes.
pub(crate) fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Array2<f64>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a `1x1` node.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    /// Copy of the value with no gradient path.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    fn binary(
        self,
        other: Var<'t>,
        f: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
        backward: Backward,
    ) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        broadcast_shape(a.dim(), b.dim()).unwrap_or_else(|e| panic!("{e}"));
        let out = f(&a, &b);
        self.tape.push_op(out, &[self, other], backward)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(
            other,
            |a, b| a + b,
            Box::new(|g, p, _| vec![Some(reduce_to(g.clone(), p[0].dim())), Some(reduce_to(g.clone(), p[1].dim()))]),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(
            other,
            |a, b| a - b,
            Box::new(|g, p, _| vec![Some(reduce_to(g.clone(), p[0].dim())), Some(reduce_to(-g, p[1].dim()))]),
        )
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(
            other,
            |a, b| a * b,
            Box::new(|g, p, _| {
                vec![
                    Some(reduce_to(g * p[1], p[0].dim())),
                    Some(reduce_to(g * p[0], p[1].dim())),
                ]
            }),
        )
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let out = &*self.value() * c;
        self.tape.push_op(out, &[self], Box::new(move |g, _, _| vec![Some(g * c)]))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = &*self.value() + c;
        self.tape.push_op(out, &[self], Box::new(|g, _, _| vec![Some(g.clone())]))
    }

    pub fn square(self) -> Var<'t> {
        let out = self.value().mapv(|x| x * x);
        self.tape.push_op(out, &[self], Box::new(|g, p, _| vec![Some(g * p[0] * 2.0)]))
    }

    /// Sum of all entries, `1x1`.
    pub fn sum(self) -> Var<'t> {
        let v = self.value();
        let shape = v.dim();
        let out = Array2::from_elem((1, 1), v.sum());
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, _| vec![Some(Array2::from_elem(shape, g[[0, 0]]))]),
        )
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Per-row sums, `B x 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.value();
        let cols = v.ncols();
        let out = v.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, _| {
                let rows = g.nrows();
                vec![Some(Array2::from_shape_fn((rows, cols), |(r, _)| g[[r, 0]]))]
            }),
        )
    }

    /// Per-column sums, `1 x C`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.value();
        let rows = v.nrows();
        let out = v.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, _| {
                let cols = g.ncols();
                vec![Some(Array2::from_shape_fn((rows, cols), |(_, c)| g[[0, c]]))]
            }),
        )
    }

    /// Row-wise squared Euclidean norm, `B x 1`.
    pub fn row_sq_norm(self) -> Var<'t> {
        self.square().sum_cols()
    }

    /// Row-wise inner product, `B x 1`.
    pub fn row_dot(self, other: Var<'t>) -> Var<'t> {
        self.mul(other).sum_cols()
    }

    /// Matrix product.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.ncols(), b.nrows(), "matmul {:?} x {:?}", a.dim(), b.dim());
        let out = a.dot(&*b);
        self.tape.push_op(
            out,
            &[self, other],
            Box::new(|g, p, _| vec![Some(g.dot(&p[1].t())), Some(p[0].t().dot(g))]),
        )
    }

    /// `self · otherᵀ`, the affine-layer product with row-major weights.
    pub fn matmul_t(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.ncols(), b.ncols(), "matmul_t {:?} x {:?}ᵀ", a.dim(), b.dim());
        let out = a.dot(&b.t());
        self.tape.push_op(
            out,
            &[self, other],
            Box::new(|g, p, _| vec![Some(g.dot(p[1])), Some(g.t().dot(p[0]))]),
        )
    }

    pub fn t(self) -> Var<'t> {
        let out = super::batched::transpose(&self.value());
        self.tape.push_op(out, &[self], Box::new(|g, _, _| vec![Some(super::batched::transpose(g))]))
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let v = self.value();
        let cols = v.ncols();
        let out = v.slice(ndarray::s![.., start..end]).to_owned();
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, _| {
                let mut full = Array2::zeros((g.nrows(), cols));
                full.slice_mut(ndarray::s![.., start..end]).assign(g);
                vec![Some(full)]
            }),
        )
    }

    /// Column gather: output column `c` copies input column `src[c]`, or is
    /// zero when `src[c]` is `None`. Columns may be repeated.
    pub fn gather_cols(self, src: Rc<Vec<Option<usize>>>) -> Var<'t> {
        let v = self.value();
        let in_cols = v.ncols();
        let rows = v.nrows();
        let mut out = Array2::zeros((rows, src.len()));
        for (c, s) in src.iter().enumerate() {
            if let Some(s) = *s {
                out.column_mut(c).assign(&v.column(s));
            }
        }
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, _| {
                let mut gi = Array2::zeros((g.nrows(), in_cols));
                for (c, s) in src.iter().enumerate() {
                    if let Some(s) = *s {
                        let mut col = gi.column_mut(s);
                        col += &g.column(c);
                    }
                }
                vec![Some(gi)]
            }),
        )
    }

    /// Stacks row blocks vertically.
    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts[0].tape;
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        let sizes: Vec<usize> = vals.iter().map(|v| v.nrows()).collect();
        tape.push_op(
            out,
            parts,
            Box::new(move |g, _, _| {
                let mut start = 0;
                sizes
                    .iter()
                    .map(|&s| {
                        let blk = g.slice(ndarray::s![start..start + s, ..]).to_owned();
                        start += s;
                        Some(blk)
                    })
                    .collect()
            }),
        )
    }

    /// Stacks column blocks horizontally.
    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts[0].tape;
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        let sizes: Vec<usize> = vals.iter().map(|v| v.ncols()).collect();
        tape.push_op(
            out,
            parts,
            Box::new(move |g, _, _| {
                let mut start = 0;
                sizes
                    .iter()
                    .map(|&s| {
                        let blk = g.slice(ndarray::s![.., start..start + s]).to_owned();
                        start += s;
                        Some(blk)
                    })
                    .collect()
            }),
        )
    }

    /// Rows `start..end`.
    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        let v = self.value();
        let rows = v.nrows();
        let out = v.slice(ndarray::s![start..end, ..]).to_owned();
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, _| {
                let mut full = Array2::zeros((rows, g.ncols()));
                full.slice_mut(ndarray::s![start..end, ..]).assign(g);
                vec![Some(full)]
            }),
        )
    }

    /// Row-major reshape.
    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let v = self.value();
        let shape = v.dim();
        assert_eq!(shape.0 * shape.1, rows * cols, "reshape {shape:?} to ({rows}, {cols})");
        let out = v.as_standard_layout().into_owned().into_shape_with_order((rows, cols)).expect("shape");
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, _| vec![Some(g.as_standard_layout().into_owned().into_shape_with_order(shape).expect("shape"))]),
        )
    }

    /// Multiplies each row by a fixed weight (zero weights cut the gradient).
    pub fn weight_rows(self, w: Rc<Vec<f64>>) -> Var<'t> {
        let v = self.value();
        let mut out = (*v).clone();
        for (mut row, &wi) in out.rows_mut().into_iter().zip(w.iter()) {
            if wi == 0.0 {
                row.fill(0.0);
            } else {
                row *= wi;
            }
        }
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, _| {
                let mut gi = g.clone();
                for (mut row, &wi) in gi.rows_mut().into_iter().zip(w.iter()) {
                    row *= wi;
                }
                vec![Some(gi)]
            }),
        )
    }

    /// Elementwise `k`-th derivative of an activation.
    pub fn act(self, act: super::Activation, order: usize) -> Var<'t> {
        let out = self.value().mapv(|x| act.eval(order, x));
        self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, p, _| {
                let mut d = p[0].mapv(|x| act.eval(order + 1, x));
                d *= g;
                vec![Some(d)]
            }),
        )
    }
}
