//! Truncated Taylor jets for forward input derivatives.
//!
//! A [`Jet`] carries a point `x`, first-order tangents `ẋ₁..ẋₖ` and
//! optionally the second-order term `ẍ` of a curve whose velocity is `ẋ₁`.
//! Pushing a jet through a network yields its Jacobian-vector products and
//! the curvature term `d²f[ẋ₁, ẋ₁] + df[ẍ]` as ordinary tape nodes.

use super::activation::Activation;
use super::tape::Var;

#[derive(Clone, Debug)]
pub struct Jet<'t> {
    pub x: Var<'t>,
    pub d1: Vec<Var<'t>>,
    pub d2: Option<Var<'t>>,
}

impl<'t> Jet<'t> {
    pub fn point(x: Var<'t>) -> Self {
        Jet {
            x,
            d1: Vec::new(),
            d2: None,
        }
    }

    pub fn new(x: Var<'t>, d1: Vec<Var<'t>>, d2: Option<Var<'t>>) -> Self {
        Jet { x, d1, d2 }
    }

    /// Applies the same linear map to every component.
    pub fn linear(&self, f: impl Fn(Var<'t>) -> Var<'t>) -> Self {
        Jet {
            x: f(self.x),
            d1: self.d1.iter().map(|&v| f(v)).collect(),
            d2: self.d2.map(&f),
        }
    }

    /// Affine map: `lin` on every component, then `bias` added to the point.
    pub fn affine(&self, lin: impl Fn(Var<'t>) -> Var<'t>, bias: Var<'t>) -> Self {
        let mut j = self.linear(lin);
        j.x = j.x.add(bias);
        j
    }

    /// Elementwise activation with the chain rule up to second order.
    pub fn act(&self, act: Activation) -> Self {
        if act.is_linear() {
            return self.clone();
        }
        let y = self.x.act(act, 0);
        let s1 = if !self.d1.is_empty() { Some(self.x.act(act, 1)) } else { None };
        let d1: Vec<_> = self.d1.iter().map(|&v| s1.expect("tangent").mul(v)).collect();
        let d2 = self.d2.map(|a| {
            let v = self.d1[0];
            let s2 = self.x.act(act, 2);
            s2.mul(v.square()).add(s1.expect("tangent").mul(a))
        });
        Jet { x: y, d1, d2 }
    }
}
