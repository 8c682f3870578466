//! Planar serial chains of rigid links joined by hinges, hanging under gravity.
//!
//! Coordinates are relative joint angles measured from the downward vertical;
//! `q = 0` is the hanging rest position. Each link is a uniform body whose
//! joints sit at the two ends of its axis.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::Dynamics;
use crate::numerics::{cholesky, cholesky_solve};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkShape {
    /// Solid cylinder of the given length.
    Cylinder,
    /// Cylinder of the given length capped by two solid hemispheres.
    Capsule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub mass: f64,
    pub length: f64,
    pub radius: f64,
    pub shape: LinkShape,
}

impl Link {
    /// Moment of inertia about the centre of mass, perpendicular to the axis.
    pub fn inertia(&self) -> f64 {
        let (m, l, r) = (self.mass, self.length, self.radius);
        match self.shape {
            LinkShape::Cylinder => m * (3.0 * r * r + l * l) / 12.0,
            LinkShape::Capsule => {
                let v_cyl = l;
                let v_sph = 4.0 / 3.0 * r;
                let mc = m * v_cyl / (v_cyl + v_sph);
                let ms = m - mc;
                // each hemisphere: 2/5 m r² about its flat face, shifted to the capsule centre
                mc * (3.0 * r * r + l * l) / 12.0 + ms * (0.4 * r * r + 0.25 * l * l + 0.375 * l * r)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub links: Vec<Link>,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    GRAVITY
}

impl ChainConfig {
    pub fn new(links: Vec<Link>, gravity: f64) -> Result<Self> {
        let c = ChainConfig { links, gravity };
        c.validate()?;
        Ok(c)
    }

    /// Two identical cylinders, 0.1 kg, 0.4 m, radius 0.025 m.
    pub fn double_pendulum() -> Self {
        ChainConfig::uniform(2, Link {
            mass: 0.1,
            length: 0.4,
            radius: 0.025,
            shape: LinkShape::Cylinder,
        })
    }

    /// Four identical capsules, 1 kg, 0.5 m, radius 0.05 m.
    pub fn four_link_capsules() -> Self {
        ChainConfig::uniform(4, Link {
            mass: 1.0,
            length: 0.5,
            radius: 0.05,
            shape: LinkShape::Capsule,
        })
    }

    pub fn uniform(n: usize, link: Link) -> Self {
        ChainConfig {
            links: vec![link; n],
            gravity: GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::invalid("chain needs at least one link"));
        }
        for (i, l) in self.links.iter().enumerate() {
            if !(l.mass > 0.0 && l.length > 0.0 && l.radius >= 0.0) || !l.mass.is_finite() || !l.length.is_finite() {
                return Err(Error::invalid(format!("link {i}: mass and length must be positive, radius non-negative")));
            }
        }
        if !self.gravity.is_finite() {
            return Err(Error::invalid("gravity must be finite"));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Coupling coefficients `h_ij = l_i (m_j c_j + l_j Σ_{k>j} m_k)` for
    /// `i < j`, the diagonal inertias, and the gravity coefficients.
    fn coefficients(&self) -> (Array2<f64>, Array1<f64>) {
        let n = self.dof();
        let tail: Vec<f64> = (0..n).map(|i| self.links[i + 1..].iter().map(|l| l.mass).sum()).collect();
        let mut h = Array2::zeros((n, n));
        let mut grav = Array1::zeros(n);
        for i in 0..n {
            let li = &self.links[i];
            let c = 0.5 * li.length;
            h[[i, i]] = li.mass * c * c + li.inertia() + tail[i] * li.length * li.length;
            grav[i] = li.mass * c + li.length * tail[i];
            for j in i + 1..n {
                let lj = &self.links[j];
                let v = li.length * (0.5 * lj.mass * lj.length + lj.length * tail[j]);
                h[[i, j]] = v;
                h[[j, i]] = v;
            }
        }
        (h, grav)
    }
}

fn absolute(q: &[f64]) -> Vec<f64> {
    q.iter()
        .scan(0.0, |s, &x| {
            *s += x;
            Some(*s)
        })
        .collect()
}

/// Mass matrix, velocity-product and gravity terms in absolute angles.
fn absolute_terms(cfg: &ChainConfig, th: &[f64], dth: &[f64]) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = th.len();
    let (h, gc) = cfg.coefficients();
    let mut m = h.clone();
    let mut c = Array1::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = th[i] - th[j];
                m[[i, j]] = h[[i, j]] * d.cos();
                c[i] += h[[i, j]] * d.sin() * dth[j] * dth[j];
            }
        }
    }
    let g = Array1::from_shape_fn(n, |i| cfg.gravity * gc[i] * th[i].sin());
    (m, c, g)
}

/// `Sᵀ X S` with `S` the lower-triangular matrix of ones.
fn to_relative(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for i in (0..n - 1).rev() {
        let below = out.row(i + 1).to_owned();
        out.row_mut(i).zip_mut_with(&below, |a, b| *a += b);
    }
    for j in (0..n - 1).rev() {
        let right = out.column(j + 1).to_owned();
        out.column_mut(j).zip_mut_with(&right, |a, b| *a += b);
    }
    out
}

/// `Sᵀ v`: suffix sums.
fn suffix_sums(v: &Array1<f64>) -> Array1<f64> {
    let n = v.len();
    let mut out = Array1::zeros(n);
    let mut s = 0.0;
    for i in (0..n).rev() {
        s += v[i];
        out[i] = s;
    }
    out
}

/// Terms of the equations of motion `M q̈ + c + g = τ` in relative coordinates.
#[derive(Debug, Clone)]
pub struct ChainTerms {
    pub m: Array2<f64>,
    pub c: Array1<f64>,
    pub g: Array1<f64>,
}

pub fn chain_terms(cfg: &ChainConfig, q: &[f64], dq: &[f64]) -> ChainTerms {
    let (th, dth) = (absolute(q), absolute(dq));
    let (m, c, g) = absolute_terms(cfg, &th, &dth);
    ChainTerms {
        m: to_relative(&m),
        c: suffix_sums(&c),
        g: suffix_sums(&g),
    }
}

pub fn mass_matrix(cfg: &ChainConfig, q: &[f64]) -> Array2<f64> {
    chain_terms(cfg, q, &vec![0.0; q.len()]).m
}

/// Forward dynamics of a single state.
pub fn chain_accel(cfg: &ChainConfig, q: &[f64], dq: &[f64], tau: &[f64]) -> Result<Array1<f64>> {
    let n = cfg.dof();
    if q.len() != n || dq.len() != n || tau.len() != n {
        return Err(Error::dim(format!("chain has {n} joints, got state of sizes {}, {}, {}", q.len(), dq.len(), tau.len())));
    }
    let t = chain_terms(cfg, q, dq);
    let rhs = Array1::from_iter(tau.iter().copied()) - &t.c - &t.g;
    Ok(cholesky_solve(&cholesky(&t.m)?, &rhs))
}

/// Inverse dynamics `τ = M q̈ + c + g`.
pub fn chain_inverse(cfg: &ChainConfig, q: &[f64], dq: &[f64], ddq: &[f64]) -> Array1<f64> {
    let t = chain_terms(cfg, q, dq);
    t.m.dot(&Array1::from_iter(ddq.iter().copied())) + &t.c + &t.g
}

/// Kinetic and potential energy, with zero potential at the hanging rest position.
pub fn chain_energy(cfg: &ChainConfig, q: &[f64], dq: &[f64]) -> (f64, f64) {
    let th = absolute(q);
    let dth = Array1::from(absolute(dq));
    let (m, _, _) = absolute_terms(cfg, &th, &vec![0.0; th.len()]);
    let (_, gc) = cfg.coefficients();
    let t = 0.5 * dth.dot(&m.dot(&dth));
    let v = (0..th.len()).map(|i| cfg.gravity * gc[i] * (1.0 - th[i].cos())).sum();
    (t, v)
}

/// Two-link forward dynamics.
pub fn double_pendulum_dynamics(cfg: &ChainConfig, q: [f64; 2], dq: [f64; 2], tau: [f64; 2]) -> Result<[f64; 2]> {
    if cfg.dof() != 2 {
        return Err(Error::dim(format!("double pendulum needs 2 links, config has {}", cfg.dof())));
    }
    let a = chain_accel(cfg, &q, &dq, &tau)?;
    Ok([a[0], a[1]])
}

/// Batched [`Dynamics`] adapter.
pub struct Chain<'a>(pub &'a ChainConfig);

impl Dynamics for Chain<'_> {
    fn dim(&self) -> usize {
        self.0.dof()
    }

    fn accel(&self, q: &Array2<f64>, dq: &Array2<f64>, tau: &Array2<f64>) -> Result<Array2<f64>> {
        let n = self.0.dof();
        let mut out = Array2::zeros((q.nrows(), n));
        for r in 0..q.nrows() {
            let a = chain_accel(self.0, &q.row(r).to_vec(), &dq.row(r).to_vec(), &tau.row(r).to_vec())?;
            out.row_mut(r).assign(&a);
        }
        Ok(out)
    }
}
