//! Biorthogonal manifold `{(Φ, Ψ) : ΨᵀΦ = I}` embedded in `ℝ^{n×d} × ℝ^{n×d}`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{condition_number, frobenius, invert, solve_sylvester};

/// Above this condition number of `(Ψ+W)ᵀ(Φ+V)` a retraction is refused.
pub const MAX_RETRACT_COND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiorthPair {
    pub phi: Array2<f64>,
    pub psi: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiorthTangent {
    pub v: Array2<f64>,
    pub w: Array2<f64>,
}

impl BiorthPair {
    /// Validates shapes and the constraint `ΨᵀΦ = I` to `1e-10`.
    pub fn new(phi: Array2<f64>, psi: Array2<f64>) -> Result<Self> {
        let p = BiorthPair::new_unchecked(phi, psi)?;
        let r = p.residual();
        if r > 1e-10 {
            return Err(Error::Domain(format!("pair violates ΨᵀΦ = I (residual {r:e})")));
        }
        Ok(p)
    }

    fn new_unchecked(phi: Array2<f64>, psi: Array2<f64>) -> Result<Self> {
        if phi.dim() != psi.dim() {
            return Err(Error::dim(format!("Φ is {:?} but Ψ is {:?}", phi.dim(), psi.dim())));
        }
        let (n, d) = phi.dim();
        if d == 0 || n < d {
            return Err(Error::dim(format!("biorthogonal pair needs n ≥ d ≥ 1, got {n}x{d}")));
        }
        Ok(BiorthPair { phi, psi })
    }

    /// `Φ = Ψ =` the given column-orthonormal basis.
    pub fn from_orthonormal(q: Array2<f64>) -> Result<Self> {
        BiorthPair::new(q.clone(), q)
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    /// Max-abs deviation of `ΨᵀΦ` from the identity.
    pub fn residual(&self) -> f64 {
        let m = self.psi.t().dot(&self.phi);
        m.indexed_iter()
            .map(|((i, j), &x)| (x - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }
}

impl BiorthTangent {
    pub fn zeros(n: usize, d: usize) -> Self {
        BiorthTangent {
            v: Array2::zeros((n, d)),
            w: Array2::zeros((n, d)),
        }
    }

    /// Max-abs entry of `WᵀΦ + ΨᵀV` at `p`.
    pub fn residual(&self, p: &BiorthPair) -> f64 {
        let c = self.w.t().dot(&p.phi) + p.psi.t().dot(&self.v);
        c.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        BiorthTangent {
            v: &self.v * s,
            w: &self.w * s,
        }
    }

    pub fn norm(&self) -> f64 {
        bio_inner(self, self).sqrt()
    }
}

/// Embedding-space Frobenius inner product.
pub fn bio_inner(a: &BiorthTangent, b: &BiorthTangent) -> f64 {
    (&a.v * &b.v).sum() + (&a.w * &b.w).sum()
}

/// Orthogonal projection of `(X, Y)` onto the tangent space at `p`.
pub fn bio_project(p: &BiorthPair, x: &Array2<f64>, y: &Array2<f64>) -> Result<BiorthTangent> {
    if x.dim() != p.phi.dim() || y.dim() != p.phi.dim() {
        return Err(Error::dim(format!(
            "projection inputs {:?}, {:?} do not match pair {:?}",
            x.dim(),
            y.dim(),
            p.phi.dim()
        )));
    }
    let pp = p.phi.t().dot(&p.phi);
    let qq = p.psi.t().dot(&p.psi);
    let c = y.t().dot(&p.phi) + p.psi.t().dot(x);
    let a = solve_sylvester(&pp, &qq, &c)?;
    Ok(BiorthTangent {
        v: x - &p.psi.dot(&a),
        w: y - &p.phi.dot(&a.t()),
    })
}

/// Retraction `((Φ+V)[(Ψ+W)ᵀ(Φ+V)]⁻¹, Ψ+W)`.
pub fn bio_retract(p: &BiorthPair, t: &BiorthTangent) -> Result<BiorthPair> {
    if t.v.dim() != p.phi.dim() || t.w.dim() != p.phi.dim() {
        return Err(Error::dim("tangent does not match pair"));
    }
    if t.v.iter().chain(t.w.iter()).all(|&x| x == 0.0) {
        return Ok(p.clone());
    }
    let phi = &p.phi + &t.v;
    let psi = &p.psi + &t.w;
    let inner = psi.t().dot(&phi);
    let cond = condition_number(&inner).unwrap_or(f64::INFINITY);
    if !(cond <= MAX_RETRACT_COND) {
        return Err(Error::StepTooLarge { cond });
    }
    let inv = invert(&inner).map_err(|_| Error::StepTooLarge { cond })?;
    BiorthPair::new_unchecked(phi.dot(&inv), psi)
}

/// Transport of `t` from `p1` to `p2` by projection at `p2`.
pub fn bio_transport(p1: &BiorthPair, p2: &BiorthPair, t: &BiorthTangent) -> Result<BiorthTangent> {
    if p1.phi.dim() != p2.phi.dim() {
        return Err(Error::dim("transport between pairs of different shapes"));
    }
    bio_project(p2, &t.v, &t.w)
}

/// Frobenius distance between two pairs in the embedding space.
pub fn bio_embedding_dist(a: &BiorthPair, b: &BiorthPair) -> f64 {
    let dv = &a.phi - &b.phi;
    let dw = &a.psi - &b.psi;
    (frobenius(&dv).powi(2) + frobenius(&dw).powi(2)).sqrt()
}
