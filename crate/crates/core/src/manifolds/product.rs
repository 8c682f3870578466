//! Product of Euclidean, SPD and biorthogonal factors: the parameter space
//! of every model.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::biorth::{bio_inner, bio_project, bio_retract, bio_transport, BiorthPair, BiorthTangent};
use super::spd::{spd_exp, spd_inner, spd_riemannian_grad, spd_transport};
use crate::error::{Error, Result};
use crate::numerics::{is_spd, is_symmetric};

/// Optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Autoencoder parameters.
    Ae,
    /// Lagrangian-network parameters.
    Lnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Point {
    Euclidean(Array2<f64>),
    Spd(Array2<f64>),
    Biorth(BiorthPair),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Tangent {
    Euclidean(Array2<f64>),
    Spd(Array2<f64>),
    Biorth(BiorthTangent),
}

/// Ambient (embedding-space) gradient of a parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum AmbientGrad {
    Matrix(Array2<f64>),
    Pair { phi: Array2<f64>, psi: Array2<f64> },
}

impl AmbientGrad {
    pub fn is_finite(&self) -> bool {
        match self {
            AmbientGrad::Matrix(g) => g.iter().all(|x| x.is_finite()),
            AmbientGrad::Pair { phi, psi } => phi.iter().chain(psi.iter()).all(|x| x.is_finite()),
        }
    }
}

fn mismatch(what: &str) -> Error {
    Error::dim(format!("{what}: manifold kinds of point and tangent differ"))
}

impl Point {
    pub fn kind(&self) -> &'static str {
        match self {
            Point::Euclidean(_) => "euclidean",
            Point::Spd(_) => "spd",
            Point::Biorth(_) => "biorthogonal",
        }
    }

    pub fn zero_tangent(&self) -> Tangent {
        match self {
            Point::Euclidean(x) => Tangent::Euclidean(Array2::zeros(x.dim())),
            Point::Spd(x) => Tangent::Spd(Array2::zeros(x.dim())),
            Point::Biorth(p) => Tangent::Biorth(BiorthTangent::zeros(p.n(), p.d())),
        }
    }

    /// Number of real scalars stored.
    pub fn size(&self) -> usize {
        match self {
            Point::Euclidean(x) | Point::Spd(x) => x.len(),
            Point::Biorth(p) => 2 * p.phi.len(),
        }
    }

    /// Exponential map (Euclidean, SPD) or retraction (biorthogonal).
    pub fn retract(&self, t: &Tangent) -> Result<Point> {
        match (self, t) {
            (Point::Euclidean(x), Tangent::Euclidean(v)) => Ok(Point::Euclidean(x + v)),
            (Point::Spd(x), Tangent::Spd(v)) => Ok(Point::Spd(spd_exp(x, v)?)),
            (Point::Biorth(p), Tangent::Biorth(v)) => Ok(Point::Biorth(bio_retract(p, v)?)),
            _ => Err(mismatch("retract")),
        }
    }

    /// Moves a tangent at `self` to the tangent space at `to`.
    pub fn transport(&self, to: &Point, t: &Tangent) -> Result<Tangent> {
        match (self, to, t) {
            (Point::Euclidean(_), Point::Euclidean(_), Tangent::Euclidean(v)) => Ok(Tangent::Euclidean(v.clone())),
            (Point::Spd(a), Point::Spd(b), Tangent::Spd(v)) => Ok(Tangent::Spd(spd_transport(a, b, v)?)),
            (Point::Biorth(a), Point::Biorth(b), Tangent::Biorth(v)) => Ok(Tangent::Biorth(bio_transport(a, b, v)?)),
            _ => Err(mismatch("transport")),
        }
    }

    /// Metric at `self`: Frobenius, affine-invariant, or embedding Frobenius.
    pub fn inner(&self, a: &Tangent, b: &Tangent) -> Result<f64> {
        match (self, a, b) {
            (Point::Euclidean(_), Tangent::Euclidean(x), Tangent::Euclidean(y)) => Ok((x * y).sum()),
            (Point::Spd(s), Tangent::Spd(x), Tangent::Spd(y)) => spd_inner(s, x, y),
            (Point::Biorth(_), Tangent::Biorth(x), Tangent::Biorth(y)) => Ok(bio_inner(x, y)),
            _ => Err(mismatch("inner")),
        }
    }

    /// Converts an ambient gradient to the Riemannian gradient.
    pub fn riemannian_grad(&self, g: &AmbientGrad) -> Result<Tangent> {
        match (self, g) {
            (Point::Euclidean(x), AmbientGrad::Matrix(g)) if x.dim() == g.dim() => Ok(Tangent::Euclidean(g.clone())),
            (Point::Spd(x), AmbientGrad::Matrix(g)) => Ok(Tangent::Spd(spd_riemannian_grad(x, g)?)),
            (Point::Biorth(p), AmbientGrad::Pair { phi, psi }) => Ok(Tangent::Biorth(bio_project(p, phi, psi)?)),
            _ => Err(Error::dim(format!("gradient does not match {} parameter", self.kind()))),
        }
    }

    /// Checks the manifold invariant with tolerance `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        match self {
            Point::Euclidean(x) => {
                if x.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Domain("non-finite Euclidean parameter".into()))
                }
            }
            Point::Spd(x) => {
                if is_symmetric(x, tol) && is_spd(x) {
                    Ok(())
                } else {
                    Err(Error::Domain("SPD parameter lost positive definiteness".into()))
                }
            }
            Point::Biorth(p) => {
                let r = p.residual();
                if r <= tol {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("biorthogonality residual {r:e}")))
                }
            }
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        match self {
            Point::Euclidean(x) | Point::Spd(x) => x,
            Point::Biorth(_) => panic!("biorthogonal parameter has no single matrix"),
        }
    }
}

impl Tangent {
    /// `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &Tangent, b: f64) -> Result<Tangent> {
        match (self, other) {
            (Tangent::Euclidean(x), Tangent::Euclidean(y)) => Ok(Tangent::Euclidean(x * a + y * b)),
            (Tangent::Spd(x), Tangent::Spd(y)) => Ok(Tangent::Spd(x * a + y * b)),
            (Tangent::Biorth(x), Tangent::Biorth(y)) => Ok(Tangent::Biorth(BiorthTangent {
                v: &x.v * a + &y.v * b,
                w: &x.w * a + &y.w * b,
            })),
            _ => Err(mismatch("lincomb")),
        }
    }

    pub fn scale(&self, s: f64) -> Tangent {
        match self {
            Tangent::Euclidean(x) => Tangent::Euclidean(x * s),
            Tangent::Spd(x) => Tangent::Spd(x * s),
            Tangent::Biorth(x) => Tangent::Biorth(x.scale(s)),
        }
    }

    /// Embedding-space squared Frobenius norm.
    pub fn frob_sq(&self) -> f64 {
        match self {
            Tangent::Euclidean(x) | Tangent::Spd(x) => x.iter().map(|v| v * v).sum(),
            Tangent::Biorth(t) => bio_inner(t, t),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Tangent::Euclidean(x) | Tangent::Spd(x) => x.iter().all(|v| v.is_finite()),
            Tangent::Biorth(t) => t.v.iter().chain(t.w.iter()).all(|v| v.is_finite()),
        }
    }
}

/// A named parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub group: ParamGroup,
    pub point: Point,
}

/// Ordered collection of parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProductPoint {
    pub components: Vec<Component>,
}

/// Index of a parameter inside a [`ProductPoint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ProductTangent {
    pub components: Vec<Tangent>,
}

impl ProductPoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, group: ParamGroup, point: Point) -> ParamId {
        self.components.push(Component {
            name: name.into(),
            group,
            point,
        });
        ParamId(self.components.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Point {
        &self.components[id.0].point
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.components.iter().map(|c| c.point.size()).sum()
    }

    pub fn zero_tangent(&self) -> ProductTangent {
        ProductTangent {
            components: self.components.iter().map(|c| c.point.zero_tangent()).collect(),
        }
    }

    fn check_tangent(&self, t: &ProductTangent) -> Result<()> {
        if t.components.len() != self.components.len() {
            return Err(Error::dim(format!(
                "tangent has {} components, point has {}",
                t.components.len(),
                self.components.len()
            )));
        }
        Ok(())
    }

    /// Componentwise exponential map / retraction.
    pub fn retract(&self, t: &ProductTangent) -> Result<ProductPoint> {
        self.check_tangent(t)?;
        let components = self
            .components
            .iter()
            .zip(&t.components)
            .map(|(c, v)| {
                Ok(Component {
                    name: c.name.clone(),
                    group: c.group,
                    point: c.point.retract(v)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ProductPoint { components })
    }

    pub fn transport(&self, to: &ProductPoint, t: &ProductTangent) -> Result<ProductTangent> {
        self.check_tangent(t)?;
        to.check_tangent(t)?;
        let components = self
            .components
            .iter()
            .zip(&to.components)
            .zip(&t.components)
            .map(|((a, b), v)| a.point.transport(&b.point, v))
            .collect::<Result<_>>()?;
        Ok(ProductTangent { components })
    }

    /// Sum of the componentwise metrics.
    pub fn inner(&self, a: &ProductTangent, b: &ProductTangent) -> Result<f64> {
        self.check_tangent(a)?;
        self.check_tangent(b)?;
        let mut s = 0.0;
        for ((c, x), y) in self.components.iter().zip(&a.components).zip(&b.components) {
            s += c.point.inner(x, y)?;
        }
        Ok(s)
    }

    /// Random tangent with independent Gaussian ambient entries projected
    /// onto each tangent space, normalized to unit embedding norm.
    pub fn random_tangent(&self, rng: &mut impl rand::Rng) -> Result<ProductTangent> {
        use rand_distr::{Distribution, StandardNormal};
        let mut gauss = |d: (usize, usize)| Array2::from_shape_fn(d, |_| StandardNormal.sample(&mut *rng));
        let mut components = Vec::with_capacity(self.components.len());
        for c in &self.components {
            components.push(match &c.point {
                Point::Euclidean(x) => Tangent::Euclidean(gauss(x.dim())),
                Point::Spd(x) => {
                    let a = gauss(x.dim());
                    Tangent::Spd((&a + &a.t()) * 0.5)
                }
                Point::Biorth(p) => Tangent::Biorth(bio_project(p, &gauss(p.phi.dim()), &gauss(p.phi.dim()))?),
            });
        }
        let norm = components.iter().map(Tangent::frob_sq).sum::<f64>().sqrt();
        Ok(ProductTangent {
            components: components.iter().map(|t| t.scale(1.0 / norm.max(f64::MIN_POSITIVE))).collect(),
        })
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        for c in &self.components {
            c.point.check(tol).map_err(|e| Error::Domain(format!("parameter {}: {e}", c.name)))?;
        }
        Ok(())
    }
}
