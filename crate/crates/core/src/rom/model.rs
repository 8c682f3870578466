//! Reduced-order Lagrangian model: a constrained autoencoder and a latent
//! Lagrangian network.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Bound, Jet, Tape, Var};
use crate::error::{Error, Result};
use crate::lagrangian::{Dynamics, LagrangianModel, LnnArch};
use crate::manifolds::ProductPoint;
use crate::networks::{AeActivation, ConstrainedAe};
use crate::numerics::min_eigenvalue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolnnModel {
    pub ae: ConstrainedAe,
    pub latent: LagrangianModel,
}

/// A full-order state mapped to latent coordinates.
pub struct Reduced<'t> {
    pub q: Var<'t>,
    pub dq: Var<'t>,
    pub ddq: Option<Var<'t>>,
}

/// A latent state mapped to full-order coordinates.
pub struct Lifted<'t> {
    pub q: Var<'t>,
    pub dq: Var<'t>,
    pub ddq: Option<Var<'t>>,
}

impl RolnnModel {
    /// `ae_sizes` runs from the latent width to the full width.
    pub fn new(
        params: &mut ProductPoint,
        ae_sizes: &[usize],
        act: AeActivation,
        overparam: bool,
        arch: &LnnArch,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let ae = ConstrainedAe::new(params, "ae", ae_sizes, act, overparam, rng)?;
        let latent = LagrangianModel::new(params, "lnn", ae.latent_dim(), arch, rng)?;
        Ok(RolnnModel { ae, latent })
    }

    pub fn full_dim(&self) -> usize {
        self.ae.full_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.ae.latent_dim()
    }

    /// `ρ(q, q̇) = (ρ(q), dρ q̇)`, and `dρ q̈ + d²ρ[q̇, q̇]` when `ddq` is given.
    pub fn reduce<'t>(&self, b: &Bound<'t>, q: Var<'t>, dq: Var<'t>, ddq: Option<Var<'t>>) -> Reduced<'t> {
        let j = self.ae.encode_jet(b, &Jet::new(q, vec![dq], ddq));
        Reduced {
            q: j.x,
            dq: j.d1[0],
            ddq: j.d2,
        }
    }

    /// `φ(q̌, q̇̌) = (φ(q̌), dφ q̇̌)`, and `dφ q̈̌ + d²φ[q̇̌, q̇̌]` when `ddq` is given.
    pub fn lift<'t>(&self, b: &Bound<'t>, q: Var<'t>, dq: Var<'t>, ddq: Option<Var<'t>>) -> Lifted<'t> {
        let (j, _) = self.ae.decode_jet(b, &Jet::new(q, vec![dq], ddq));
        Lifted {
            q: j.x,
            dq: j.d1[0],
            ddq: j.d2,
        }
    }

    /// `τ̌ = dφ|_q̌ᵀ τ`. Forces that are identically zero stay constant zero.
    pub fn reduce_force<'t>(&self, b: &Bound<'t>, q: Var<'t>, tau: Var<'t>) -> Var<'t> {
        let tape = b.tape();
        if !tau.requires_grad() && tau.value().iter().all(|&x| x == 0.0) {
            return tape.constant(Array2::zeros((q.rows(), self.latent_dim())));
        }
        let (_, trace) = self.ae.decode_jet(b, &Jet::point(q));
        self.ae.decoder_vjp(b, &trace, tau)
    }

    /// Latent forward dynamics driven by full-order forces.
    pub fn latent_accel<'t>(&self, b: &Bound<'t>, q: Var<'t>, dq: Var<'t>, tau: Var<'t>) -> Result<Var<'t>> {
        let t = self.reduce_force(b, q, tau);
        self.latent.accel(b, q, dq, t)
    }

    /// Reduced total energy `Ť + V̌` per row.
    pub fn reduced_energy(&self, params: &ProductPoint, q: &Array2<f64>, dq: &Array2<f64>) -> Result<Vec<f64>> {
        let (t, v) = self.latent.energies(params, q, dq)?;
        Ok(t.iter().zip(&v).map(|(a, b)| a + b).collect())
    }

    /// Encodes full-order rows to latent positions and velocities.
    pub fn encode_values(&self, params: &ProductPoint, q: &Array2<f64>, dq: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let tape = Tape::inference();
        let b = Bound::new(&tape, params);
        let r = self.reduce(&b, tape.constant(q.clone()), tape.constant(dq.clone()), None);
        (Rc::unwrap_or_clone(r.q.value()), Rc::unwrap_or_clone(r.dq.value()))
    }

    /// Decodes latent rows to full-order positions and velocities.
    pub fn decode_values(&self, params: &ProductPoint, q: &Array2<f64>, dq: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let tape = Tape::inference();
        let b = Bound::new(&tape, params);
        let l = self.lift(&b, tape.constant(q.clone()), tape.constant(dq.clone()), None);
        (Rc::unwrap_or_clone(l.q.value()), Rc::unwrap_or_clone(l.dq.value()))
    }

    /// Decoder Jacobian `dφ|_q̌` (`n x d`) at one latent point.
    pub fn decoder_jacobian(&self, params: &ProductPoint, q: &[f64]) -> Array2<f64> {
        let d = self.latent_dim();
        let tape = Tape::inference();
        let b = Bound::new(&tape, params);
        let x = tape.constant(Array2::from_shape_vec((1, d), q.to_vec()).expect("shape"));
        let (j, _) = self.ae.decode_jet(&b, &Jet::new(x, vec![tape.constant(Array2::eye(d))], None));
        j.d1[0].value().t().to_owned()
    }
}

/// Pullback of a known full-order model through the decoder at `q̌`:
/// `M̌ = dφᵀ M dφ` and `ǧ = dφᵀ g`, with `M`, `g` evaluated at `φ(q̌)`.
pub fn reduced_terms(dphi: &Array2<f64>, m: &Array2<f64>, g: &[f64]) -> Result<(Array2<f64>, Vec<f64>)> {
    let (n, d) = dphi.dim();
    if m.dim() != (n, n) || g.len() != n {
        return Err(Error::dim(format!("full-order terms must be {n}-dimensional")));
    }
    let gram = dphi.t().dot(dphi);
    let lo = min_eigenvalue(&gram)?;
    let hi = gram.diag().iter().fold(0.0f64, |a, &x| a.max(x));
    if !(lo > 1e-12 * hi.max(f64::MIN_POSITIVE)) || d > n {
        return Err(Error::Domain(format!("degenerate embedding: decoder Jacobian is rank deficient (min eigenvalue {lo:e})")));
    }
    let mr = dphi.t().dot(m).dot(dphi);
    let gr = dphi.t().dot(&ndarray::Array1::from(g.to_vec())).to_vec();
    Ok((mr, gr))
}

/// Latent dynamics with fixed parameters, for rollouts. The forces passed
/// to [`Dynamics::accel`] are full-order and reduced at the current latent
/// position.
pub struct LatentDynamics<'a> {
    pub model: &'a RolnnModel,
    pub params: &'a ProductPoint,
}

impl Dynamics for LatentDynamics<'_> {
    fn dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn accel(&self, q: &Array2<f64>, dq: &Array2<f64>, tau: &Array2<f64>) -> Result<Array2<f64>> {
        let tape = Tape::inference();
        let b = Bound::new(&tape, self.params);
        let a = self
            .model
            .latent_accel(&b, tape.constant(q.clone()), tape.constant(dq.clone()), tape.constant(tau.clone()))?;
        Ok(Rc::unwrap_or_clone(a.value()))
    }
}
