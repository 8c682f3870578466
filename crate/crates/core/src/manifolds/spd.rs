//! SPD manifold with the affine-invariant metric.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numerics::{cholesky, invert, spd_sqrt, sym_eig, sym_part, MatFn};

fn same_dim(what: &str, mats: &[&Array2<f64>]) -> Result<usize> {
    let n = mats[0].nrows();
    for m in mats {
        if m.dim() != (n, n) {
            return Err(Error::dim(format!("{what}: expected {n}x{n}, got {:?}", m.dim())));
        }
    }
    Ok(n)
}

fn spd_inverse(s: &Array2<f64>) -> Result<Array2<f64>> {
    cholesky(s)?;
    Ok(sym_part(&invert(s)?))
}

/// `⟨T1, T2⟩_Σ = tr(Σ⁻¹ T1 Σ⁻¹ T2)`.
pub fn spd_inner(sigma: &Array2<f64>, t1: &Array2<f64>, t2: &Array2<f64>) -> Result<f64> {
    same_dim("spd_inner", &[sigma, t1, t2])?;
    let si = spd_inverse(sigma)?;
    let a = si.dot(t1);
    let b = si.dot(t2);
    Ok((&a * &b.t()).sum())
}

/// Whitens `x` by `Σ^{-1/2}` and returns `(Σ^{1/2}, Σ^{-1/2}, Σ^{-1/2} X Σ^{-1/2})`.
fn whiten(sigma: &Array2<f64>, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let (r, ri) = spd_sqrt(sigma)?;
    let w = sym_part(&ri.dot(x).dot(&ri));
    Ok((r, ri, w))
}

/// Geodesic distance `‖log(Σ^{-1/2} Λ Σ^{-1/2})‖_F`.
pub fn spd_dist(lambda: &Array2<f64>, sigma: &Array2<f64>) -> Result<f64> {
    same_dim("spd_dist", &[lambda, sigma])?;
    cholesky(lambda)?;
    let (_, _, w) = whiten(sigma, lambda)?;
    let e = sym_eig(&w)?;
    let mut s = 0.0;
    for &l in e.values.iter() {
        MatFn::Log.check_domain(l)?;
        s += l.ln().powi(2);
    }
    Ok(s.sqrt())
}

/// `Exp_Σ(L) = Σ^{1/2} exp(Σ^{-1/2} L Σ^{-1/2}) Σ^{1/2}`.
pub fn spd_exp(sigma: &Array2<f64>, l: &Array2<f64>) -> Result<Array2<f64>> {
    same_dim("spd_exp", &[sigma, l])?;
    let (r, _, w) = whiten(sigma, l)?;
    let e = sym_eig(&w)?.compose(f64::exp);
    Ok(sym_part(&r.dot(&e).dot(&r)))
}

/// `Log_Σ(Λ) = Σ^{1/2} log(Σ^{-1/2} Λ Σ^{-1/2}) Σ^{1/2}`.
pub fn spd_log(sigma: &Array2<f64>, lambda: &Array2<f64>) -> Result<Array2<f64>> {
    same_dim("spd_log", &[sigma, lambda])?;
    let (r, _, w) = whiten(sigma, lambda)?;
    let e = sym_eig(&w)?;
    for &l in e.values.iter() {
        MatFn::Log.check_domain(l)?;
    }
    let lg = e.compose(f64::ln);
    Ok(sym_part(&r.dot(&lg).dot(&r)))
}

/// Transport `A T Aᵀ` with `A = Λ^{1/2} Σ^{-1/2}`.
pub fn spd_transport(sigma: &Array2<f64>, lambda: &Array2<f64>, t: &Array2<f64>) -> Result<Array2<f64>> {
    same_dim("spd_transport", &[sigma, lambda, t])?;
    let (_, si) = spd_sqrt(sigma)?;
    let (lr, _) = spd_sqrt(lambda)?;
    let a = lr.dot(&si);
    Ok(sym_part(&a.dot(t).dot(&a.t())))
}

/// Riemannian gradient `Σ sym(G) Σ` from an ambient gradient `G`.
pub fn spd_riemannian_grad(sigma: &Array2<f64>, g: &Array2<f64>) -> Result<Array2<f64>> {
    same_dim("spd_riemannian_grad", &[sigma, g])?;
    Ok(sym_part(&sigma.dot(&sym_part(g)).dot(sigma)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs_diff, spd_expm};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array2<f64> {
        let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0) * scale);
        sym_part(&a)
    }

    fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        spd_expm(&rand_sym(rng, n, 0.7)).unwrap()
    }

    #[test]
    fn inner_product_cases() {
        let i2 = Array2::<f64>::eye(2);
        assert!((spd_inner(&i2, &i2, &i2).unwrap() - 2.0).abs() < 1e-15);
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![[0.0, 0.0], [0.0, 1.0]];
        assert_eq!(spd_inner(&i2, &a, &b).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = rand_spd(&mut rng, 4);
        let t = rand_sym(&mut rng, 4, 1.0);
        let si = invert(&s).unwrap();
        let m = si.dot(&t).dot(&si).dot(&t);
        let want = m.diag().sum();
        assert!((spd_inner(&s, &t, &t).unwrap() - want).abs() < 1e-10 * want.abs());
    }

    #[test]
    fn distance_cases() {
        let i2 = Array2::<f64>::eye(2);
        let e = std::f64::consts::E;
        let d = spd_dist(&i2, &array![[e, 0.0], [0.0, e]]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = rand_spd(&mut rng, 3);
        assert!(spd_dist(&s, &s).unwrap() < 1e-12);
    }

    #[test]
    fn exp_log_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = rand_spd(&mut rng, 5);
        let z = Array2::zeros((5, 5));
        assert!(max_abs_diff(&spd_exp(&s, &z).unwrap(), &s) < 1e-13);
        let u = rand_sym(&mut rng, 5, 1.0);
        let i5 = Array2::eye(5);
        assert!(max_abs_diff(&spd_exp(&i5, &u).unwrap(), &spd_expm(&u).unwrap()) < 1e-13);
        let back = spd_log(&s, &spd_exp(&s, &u).unwrap()).unwrap();
        assert!(max_abs_diff(&back, &u) < 1e-9);
    }

    #[test]
    fn transport_cases() {
        let i2 = Array2::<f64>::eye(2);
        let t = array![[1.0, 0.5], [0.5, -2.0]];
        assert!(max_abs_diff(&spd_transport(&i2, &i2, &t).unwrap(), &t) < 1e-15);
        let four = &i2 * 4.0;
        assert!(max_abs_diff(&spd_transport(&i2, &four, &t).unwrap(), &(&t * 4.0)) < 1e-14);
    }

    #[test]
    fn rejects_non_pd() {
        let bad = array![[1.0, 0.0], [0.0, -1.0]];
        let i2 = Array2::<f64>::eye(2);
        assert!(spd_log(&i2, &bad).is_err());
        assert!(spd_exp(&bad, &i2).is_err());
        assert!(spd_dist(&bad, &i2).is_err());
    }
}
