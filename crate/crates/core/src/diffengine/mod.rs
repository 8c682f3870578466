//! Differentiation engine: a reverse-mode tape over batched arrays, forward
//! jets for input derivatives, and finite-difference oracles.
//!
//! Parameter gradients come from one reverse sweep. Input derivatives that
//! appear inside losses (Jacobians of the mass network, the potential
//! gradient, autoencoder Jacobians and curvature terms) are built as graph
//! nodes first, so the same sweep differentiates through them.

mod activation;
mod batched;
mod check;
mod jet;
mod tape;

pub use activation::{Activation, AeSigma};
pub use batched::{Spectral, MAX_SOLVE_COND};
pub use check::{compare, fd_check, fd_jacobian, fd_step, input_hessian_contract, input_jacobian, riemannian_grad_check, FdReport, JetFn};
pub use jet::Jet;
pub use tape::{Gradients, Tape, Var};


use ndarray::Array2;

use crate::error::{Error, Result};
use crate::manifolds::{AmbientGrad, ParamId, Point, ProductPoint, ProductTangent};

enum Slot<'t> {
    Matrix(Var<'t>),
    Spd(Var<'t>, usize),
    Pair(Var<'t>, Var<'t>),
}

/// Parameters of a [`ProductPoint`] placed on a tape as trainable leaves.
/// SPD parameters appear flattened to `1 x n²` so they broadcast over
/// batched matrix nodes.
pub struct Bound<'t> {
    tape: &'t Tape,
    slots: Vec<Slot<'t>>,
}

impl<'t> Bound<'t> {
    pub fn new(tape: &'t Tape, params: &ProductPoint) -> Self {
        let slots = params
            .components
            .iter()
            .map(|c| match &c.point {
                Point::Euclidean(x) => Slot::Matrix(tape.param(x.clone())),
                Point::Spd(x) => {
                    let n = x.nrows();
                    let flat = x.as_standard_layout().into_owned().into_shape_with_order((1, n * n)).expect("shape");
                    Slot::Spd(tape.param(flat), n)
                }
                Point::Biorth(p) => Slot::Pair(tape.param(p.phi.clone()), tape.param(p.psi.clone())),
            })
            .collect();
        Bound { tape, slots }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Euclidean matrix or flattened SPD matrix.
    pub fn mat(&self, id: ParamId) -> Var<'t> {
        match self.slots[id.0] {
            Slot::Matrix(v) | Slot::Spd(v, _) => v,
            Slot::Pair(..) => panic!("parameter {} is a biorthogonal pair", id.0),
        }
    }

    /// `(Φ, Ψ)` of a biorthogonal parameter.
    pub fn pair(&self, id: ParamId) -> (Var<'t>, Var<'t>) {
        match self.slots[id.0] {
            Slot::Pair(a, b) => (a, b),
            _ => panic!("parameter {} is not a biorthogonal pair", id.0),
        }
    }

    /// Ambient gradients of all parameters after a reverse sweep.
    pub fn ambient(&self, grads: &Gradients) -> Vec<AmbientGrad> {
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Matrix(v) => AmbientGrad::Matrix(grads.wrt(v)),
                Slot::Spd(v, n) => AmbientGrad::Matrix(grads.wrt(v).into_shape_with_order((n, n)).expect("shape")),
                Slot::Pair(a, b) => AmbientGrad::Pair {
                    phi: grads.wrt(a),
                    psi: grads.wrt(b),
                },
            })
            .collect()
    }
}

/// Reverse sweep from `loss` followed by conversion of each ambient
/// gradient to a Riemannian gradient (identity for Euclidean factors,
/// `Σ sym(G) Σ` for SPD factors, tangent projection for biorthogonal ones).
/// Non-finite losses or gradients are reported as divergence.
pub fn gradient(tape: &Tape, bound: &Bound<'_>, params: &ProductPoint, loss: Var<'_>) -> Result<ProductTangent> {
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let ambient = bound.ambient(&grads);
    let mut components = Vec::with_capacity(ambient.len());
    for (c, g) in params.components.iter().zip(&ambient) {
        if !g.is_finite() {
            return Err(Error::Divergence(format!("non-finite gradient for parameter {}", c.name)));
        }
        components.push(c.point.riemannian_grad(g)?);
    }
    Ok(ProductTangent { components })
}

/// Builds a constant `1 x n` row.
pub fn row<'t>(tape: &'t Tape, v: &[f64]) -> Var<'t> {
    tape.constant(Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("shape"))
}
