//! Learned Lagrangian `L = ½ q̇ᵀ M(q) q̇ − V(q)` and its Euler–Lagrange
//! forward dynamics.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Activation, Bound, Jet, Tape, Var};
use crate::error::{Error, Result};
use crate::manifolds::{ParamGroup, ParamId, Point, ProductPoint};
use crate::networks::{MassHead, Mlp, SpdLayerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MassArch {
    Spd {
        #[serde(default)]
        learned_basepoint: bool,
        #[serde(default)]
        layers: Vec<SpdLayerKind>,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Cholesky {
        #[serde(default = "default_delta")]
        delta: f64,
    },
}

fn default_eps() -> f64 {
    1e-4
}

fn default_delta() -> f64 {
    1e-6
}

/// Architecture knobs of a Lagrangian network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LnnArch {
    pub hidden: Vec<usize>,
    /// One trunk with kinetic and potential heads instead of two networks.
    #[serde(default)]
    pub shared: bool,
    pub mass: MassArch,
}

impl Default for LnnArch {
    fn default() -> Self {
        LnnArch {
            hidden: vec![64, 64],
            shared: false,
            mass: MassArch::Spd {
                learned_basepoint: false,
                layers: Vec::new(),
                eps: default_eps(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnergyNets {
    Separate { kinetic: Mlp, potential: Mlp },
    Shared { trunk: Mlp, kinetic: Mlp, potential: Mlp },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianModel {
    pub n: usize,
    pub nets: EnergyNets,
    pub mass: MassHead,
}

/// Quantities of the equations of motion `M q̈ + c + g = τ` at a batch of
/// states.
pub struct Terms<'t> {
    /// `B x n²` mass matrices.
    pub m: Var<'t>,
    /// `∂M/∂q_k`, one `B x n²` node per coordinate.
    pub dm: Vec<Var<'t>>,
    pub c: Var<'t>,
    pub g: Var<'t>,
    /// Potential energy, `B x 1`.
    pub v: Var<'t>,
}

impl LagrangianModel {
    pub fn new(params: &mut ProductPoint, name: &str, n: usize, arch: &LnnArch, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("configuration dimension must be positive"));
        }
        let tri = n * (n + 1) / 2;
        let soft = Activation::SoftPlus;
        let id = Activation::Identity;
        let widths = |out: Option<usize>| {
            let mut s = vec![n];
            s.extend(&arch.hidden);
            s.extend(out);
            s
        };
        let nets = if arch.shared {
            if arch.hidden.is_empty() {
                return Err(Error::invalid("a shared trunk needs at least one hidden layer"));
            }
            let h = *arch.hidden.last().expect("hidden");
            EnergyNets::Shared {
                trunk: Mlp::new(params, &format!("{name}.trunk"), ParamGroup::Lnn, &widths(None), soft, soft, rng)?,
                kinetic: Mlp::new(params, &format!("{name}.kinetic"), ParamGroup::Lnn, &[h, tri], id, id, rng)?,
                potential: Mlp::new(params, &format!("{name}.potential"), ParamGroup::Lnn, &[h, 1], id, id, rng)?,
            }
        } else {
            EnergyNets::Separate {
                kinetic: Mlp::new(params, &format!("{name}.kinetic"), ParamGroup::Lnn, &widths(Some(tri)), soft, id, rng)?,
                potential: Mlp::new(params, &format!("{name}.potential"), ParamGroup::Lnn, &widths(Some(1)), soft, id, rng)?,
            }
        };
        let mass = match &arch.mass {
            MassArch::Spd {
                learned_basepoint,
                layers,
                eps,
            } => MassHead::new_spd(params, &format!("{name}.mass"), n, *learned_basepoint, layers, *eps, rng)?,
            MassArch::Cholesky { delta } => MassHead::new_cholesky(n, *delta)?,
        };
        Ok(LagrangianModel { n, nets, mass })
    }

    /// Ids of every parameter owned by the model.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let nets = match &self.nets {
            EnergyNets::Separate { kinetic, potential } => [kinetic.param_ids(), potential.param_ids()].concat(),
            EnergyNets::Shared {
                trunk,
                kinetic,
                potential,
            } => [trunk.param_ids(), kinetic.param_ids(), potential.param_ids()].concat(),
        };
        [nets, self.mass.param_ids()].concat()
    }

    /// Evaluates `M`, `∂M/∂q`, `c(q, q̇)`, `g(q)` and `V(q)` for `B x n`
    /// batches of positions and velocities.
    pub fn terms<'t>(&self, b: &Bound<'t>, q: Var<'t>, dq: Var<'t>) -> Result<Terms<'t>> {
        let n = self.n;
        if q.cols() != n || dq.cols() != n {
            return Err(Error::dim(format!("expected {n} columns, got q {:?} and q̇ {:?}", q.shape(), dq.shape())));
        }
        let tape = q.tape();
        let basis: Vec<Var<'t>> = (0..n)
            .map(|k| {
                let mut e = Array2::zeros((1, n));
                e[[0, k]] = 1.0;
                tape.constant(e)
            })
            .collect();
        let qj = Jet::new(q, basis, None);
        let one = tape.constant(Array2::ones((1, 1)));
        let (raw, v, g) = match &self.nets {
            EnergyNets::Separate { kinetic, potential } => {
                let (raw, _) = kinetic.jet(b, &qj);
                let (v, trace) = potential.jet(b, &Jet::point(q));
                let g = potential.input_grad(b, &trace, one);
                (raw, v.x, g)
            }
            EnergyNets::Shared {
                trunk,
                kinetic,
                potential,
            } => {
                let (h, tt) = trunk.jet(b, &qj);
                let (raw, _) = kinetic.jet(b, &h);
                let (v, th) = potential.jet(b, &Jet::point(h.x));
                let g = trunk.input_grad(b, &tt, potential.input_grad(b, &th, one));
                (raw, v.x, g)
            }
        };
        let (m, dm) = self.mass.jet(b, &raw)?;
        let c = coriolis(n, &dm, dq);
        Ok(Terms { m, dm, c, g, v })
    }

    /// `q̈ = M⁻¹(τ − c − g)`.
    pub fn accel<'t>(&self, b: &Bound<'t>, q: Var<'t>, dq: Var<'t>, tau: Var<'t>) -> Result<Var<'t>> {
        let t = self.terms(b, q, dq)?;
        t.m.bsolve_spd(tau.sub(t.c).sub(t.g), self.n)
    }

    /// Forward dynamics on plain arrays, without recording gradients.
    pub fn accel_values(&self, params: &ProductPoint, q: &Array2<f64>, dq: &Array2<f64>, tau: &Array2<f64>) -> Result<Array2<f64>> {
        let tape = Tape::inference();
        let b = Bound::new(&tape, params);
        let a = self.accel(&b, tape.constant(q.clone()), tape.constant(dq.clone()), tape.constant(tau.clone()))?;
        Ok(Rc::unwrap_or_clone(a.value()))
    }

    /// `(T, V)` per row.
    pub fn energies(&self, params: &ProductPoint, q: &Array2<f64>, dq: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = Tape::inference();
        let b = Bound::new(&tape, params);
        let dqv = tape.constant(dq.clone());
        let t = self.terms(&b, tape.constant(q.clone()), dqv)?;
        let kin = kinetic_energy(self.n, t.m, dqv);
        Ok((kin.value().iter().copied().collect(), t.v.value().iter().copied().collect()))
    }

    /// Mass matrices `M(q)` per row, each flattened row-major.
    pub fn mass_values(&self, params: &ProductPoint, q: &Array2<f64>) -> Result<Array2<f64>> {
        let tape = Tape::inference();
        let b = Bound::new(&tape, params);
        let zero = tape.constant(Array2::zeros(q.dim()));
        let t = self.terms(&b, tape.constant(q.clone()), zero)?;
        Ok(Rc::unwrap_or_clone(t.m.value()))
    }
}

/// `½ q̇ᵀ M q̇` per row.
pub fn kinetic_energy<'t>(n: usize, m: Var<'t>, dq: Var<'t>) -> Var<'t> {
    m.bmv(dq, n).row_dot(dq).scale(0.5)
}

/// `c = Ṁ q̇ − ½ [q̇ᵀ ∂M/∂q_k q̇]_k` with `Ṁ = Σ_k ∂M/∂q_k q̇_k`.
pub fn coriolis<'t>(n: usize, dm: &[Var<'t>], dq: Var<'t>) -> Var<'t> {
    assert_eq!(dm.len(), n, "one mass derivative per coordinate");
    let mut mdot: Option<Var<'t>> = None;
    let mut quad = Vec::with_capacity(n);
    for (k, &d) in dm.iter().enumerate() {
        let term = d.mul(dq.slice_cols(k, k + 1));
        mdot = Some(match mdot {
            Some(acc) => acc.add(term),
            None => term,
        });
        quad.push(d.bmv(dq, n).row_dot(dq));
    }
    let mdot = mdot.expect("n > 0");
    mdot.bmv(dq, n).sub(Var::concat_cols(&quad).scale(0.5))
}

/// `Σ ‖θ‖²` over the Euclidean parameters of one group.
pub fn euclidean_sq_norm<'t>(b: &Bound<'t>, params: &ProductPoint, group: ParamGroup) -> Option<Var<'t>> {
    let mut acc: Option<Var<'t>> = None;
    for (i, c) in params.components.iter().enumerate() {
        if c.group == group && matches!(c.point, Point::Euclidean(_)) {
            let s = b.mat(ParamId(i)).square().sum();
            acc = Some(match acc {
                Some(a) => a.add(s),
                None => s,
            });
        }
    }
    acc
}
