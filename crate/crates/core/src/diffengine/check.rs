//! Finite-difference oracles and exact input derivatives of jet functions.

use ndarray::{Array1, Array2};

use super::jet::Jet;
use super::tape::Tape;
use crate::error::Result;
use crate::manifolds::{ProductPoint, ProductTangent};

/// Outcome of comparing an analytic derivative with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Flat (row-major) index of the worst entry.
    pub worst_index: usize,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Central-difference step used for coordinate `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central-difference Jacobian (`m x n`) of `f: ℝⁿ → ℝᵐ`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Array2<f64> {
    let mut xp = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    let m = cols.first().map_or(0, |c| c.len());
    Array2::from_shape_fn((m, x.len()), |(r, c)| cols[c][r])
}

/// Compares two derivative arrays entrywise. The relative error of an entry
/// is `|a - b| / max(|a|, |b|, 1e-3·scale, 1e-12)` with `scale` the largest
/// reference magnitude, so entries far below the overall magnitude are
/// judged against it rather than against their own size.
pub fn compare(analytic: &[f64], reference: &[f64]) -> FdReport {
    assert_eq!(analytic.len(), reference.len(), "derivative sizes differ");
    let scale = reference.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for (i, (a, r)) in analytic.iter().zip(reference).enumerate() {
        let denom = a.abs().max(r.abs()).max(1e-3 * scale).max(1e-12);
        let err = if a.is_finite() && r.is_finite() {
            (a - r).abs() / denom
        } else {
            f64::INFINITY
        };
        if err > report.max_rel_err || (i == 0 && err.is_infinite()) {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    report
}

/// Checks an analytic Jacobian (`m x n`) of `f` at `x` against central
/// differences with step `1e-6·(1 + |xᵢ|)`.
pub fn fd_check(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], analytic: &Array2<f64>) -> FdReport {
    let fd = fd_jacobian(f, x);
    assert_eq!(fd.dim(), analytic.dim(), "Jacobian shape");
    let a: Vec<f64> = analytic.iter().copied().collect();
    let r: Vec<f64> = fd.iter().copied().collect();
    compare(&a, &r)
}

/// A function that can push second-order jets through itself.
pub trait JetFn {
    fn jet<'t>(&self, x: Jet<'t>) -> Result<Jet<'t>>;
}

impl<F> JetFn for F
where
    F: for<'t> Fn(Jet<'t>) -> Result<Jet<'t>>,
{
    fn jet<'t>(&self, x: Jet<'t>) -> Result<Jet<'t>> {
        self(x)
    }
}

/// Exact Jacobian `∂f/∂x` (`m x n`) at a single point.
pub fn input_jacobian(f: &impl JetFn, x: &Array1<f64>) -> Result<Array2<f64>> {
    let n = x.len();
    let tape = Tape::inference();
    let xv = tape.constant(x.clone().insert_axis(ndarray::Axis(0)));
    let eye = tape.constant(Array2::eye(n));
    let out = f.jet(Jet::new(xv, vec![eye], None))?;
    Ok(super::batched::transpose(&out.d1[0].value()))
}

/// Exact second derivative `Σⱼₖ ∂²f/∂xⱼ∂xₖ vⱼ vₖ` at a single point.
pub fn input_hessian_contract(f: &impl JetFn, x: &Array1<f64>, v: &Array1<f64>) -> Result<Array1<f64>> {
    let tape = Tape::inference();
    let row = |a: &Array1<f64>| a.clone().insert_axis(ndarray::Axis(0));
    let xv = tape.constant(row(x));
    let vv = tape.constant(row(v));
    let zero = tape.constant(Array2::zeros((1, x.len())));
    let out = f.jet(Jet::new(xv, vec![vv], Some(zero)))?;
    Ok(out.d2.expect("second-order term").value().row(0).to_owned())
}

/// Checks a Riemannian gradient against central differences of `f` along
/// retraction curves `t ↦ R_x(t ξ)` in `trials` random directions `ξ`.
/// Compares `⟨grad, ξ⟩_x` with the difference quotient.
pub fn riemannian_grad_check(
    params: &ProductPoint,
    grad: &ProductTangent,
    f: impl Fn(&ProductPoint) -> Result<f64>,
    trials: usize,
    rng: &mut impl rand::Rng,
) -> Result<FdReport> {
    let h = 1e-5;
    let mut analytic = Vec::with_capacity(trials);
    let mut reference = Vec::with_capacity(trials);
    for _ in 0..trials {
        let xi = params.random_tangent(rng)?;
        analytic.push(params.inner(grad, &xi)?);
        let plus = f(&params.retract(&scaled(&xi, h))?)?;
        let minus = f(&params.retract(&scaled(&xi, -h))?)?;
        reference.push((plus - minus) / (2.0 * h));
    }
    Ok(compare(&analytic, &reference))
}

fn scaled(t: &ProductTangent, s: f64) -> ProductTangent {
    ProductTangent {
        components: t.components.iter().map(|c| c.scale(s)).collect(),
    }
}
