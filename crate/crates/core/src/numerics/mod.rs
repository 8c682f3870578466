//! Dense linear-algebra kernels: symmetric eigendecomposition, spectral
//! matrix functions, Cholesky and LU solves, and the Sylvester solver used
//! by the biorthogonal projection.
//!
//! All routines are pure functions of their inputs and use `f64` throughout.

mod eig;
mod matfn;

pub use eig::{eig_sym_into, EigWork};
pub use matfn::{
    dk_first, dk_second, dk_second_adjoint, loewner, mm, rotate_in, rotate_out, MatFn,
};

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Eigen-decomposition `S = U diag(values) Uᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl SymEig {
    /// Rebuilds `U diag(f(values)) Uᵀ`.
    pub fn compose(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let n = self.values.len();
        let mut out = Array2::zeros((n, n));
        for k in 0..n {
            let fk = f(self.values[k]);
            for i in 0..n {
                let uik = self.vectors[[i, k]] * fk;
                for j in 0..n {
                    out[[i, j]] += uik * self.vectors[[j, k]];
                }
            }
        }
        out
    }
}

fn check_square(a: &ArrayView2<f64>, what: &str) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c || r == 0 {
        return Err(Error::dim(format!("{what}: expected a non-empty square matrix, got {r}x{c}")));
    }
    Ok(r)
}

/// Symmetric part `(A + Aᵀ)/2`.
pub fn sym_part(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

/// Canonical symmetric matrix built from the upper triangle of `a`.
pub fn symmetrize_upper(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..i {
            out[[i, j]] = a[[j, i]];
        }
    }
    out
}

pub fn is_symmetric(a: &Array2<f64>, tol: f64) -> bool {
    a.is_square()
        && a
            .indexed_iter()
            .all(|((i, j), &x)| (x - a[[j, i]]).abs() <= tol * (1.0 + x.abs()))
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Symmetric eigendecomposition; only the lower triangle of `s` is read.
pub fn sym_eig(s: &Array2<f64>) -> Result<SymEig> {
    let n = check_square(&s.view(), "sym_eig")?;
    let a: Vec<f64> = s.iter().copied().collect();
    let mut w = vec![0.0; n];
    let mut v = vec![0.0; n * n];
    eig_sym_into(n, &a, &mut w, &mut v, &mut EigWork::new(n))?;
    Ok(SymEig {
        values: Array1::from(w),
        vectors: Array2::from_shape_vec((n, n), v).expect("shape"),
    })
}

/// Applies a spectral function `U f(Λ) Uᵀ`.
pub fn mat_fn(f: MatFn, s: &Array2<f64>) -> Result<Array2<f64>> {
    let e = sym_eig(s)?;
    for &l in e.values.iter() {
        f.check_domain(l)?;
    }
    Ok(e.compose(|x| f.eval(x)))
}

/// Matrix exponential of a symmetric matrix.
pub fn spd_expm(u: &Array2<f64>) -> Result<Array2<f64>> {
    mat_fn(MatFn::Exp, u)
}

/// Principal logarithm of an SPD matrix.
pub fn spd_logm(s: &Array2<f64>) -> Result<Array2<f64>> {
    mat_fn(MatFn::Log, s)
}

/// Square root of an SPD matrix together with its inverse.
pub fn spd_sqrt(s: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let e = sym_eig(s)?;
    for &l in e.values.iter() {
        MatFn::Sqrt.check_domain(l)?;
    }
    Ok((e.compose(f64::sqrt), e.compose(|x| 1.0 / x.sqrt())))
}

pub fn min_eigenvalue(s: &Array2<f64>) -> Result<f64> {
    Ok(sym_eig(s)?.values[0])
}

pub fn is_spd(s: &Array2<f64>) -> bool {
    is_symmetric(s, 1e-10) && matches!(min_eigenvalue(s), Ok(l) if l > 0.0)
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = check_square(&a.view(), "cholesky")?;
    let mut l = Array2::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return Err(Error::Domain(format!(
                "cholesky: matrix is not positive definite (pivot {d:e} at {j})"
            )));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Inverse of a general square matrix by LU with partial pivoting.
pub fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = check_square(&a.view(), "invert")?;
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    let scale = a.iter().fold(0.0_f64, |s, x| s.max(x.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[[r, col]].abs()))
            .fold((col, -1.0), |best, x| if x.1 > best.1 { x } else { best });
        if pval <= 1e-300 || pval <= f64::EPSILON * 1e-3 * scale {
            return Err(Error::Numerical {
                what: "matrix inversion (singular pivot)".into(),
                residual: pval,
            });
        }
        if piv != col {
            for j in 0..n {
                m.swap([piv, j], [col, j]);
                inv.swap([piv, j], [col, j]);
            }
        }
        let d = m[[col, col]];
        for j in 0..n {
            m[[col, j]] /= d;
            inv[[col, j]] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[[r, col]];
                if f != 0.0 {
                    for j in 0..n {
                        m[[r, j]] -= f * m[[col, j]];
                        inv[[r, j]] -= f * inv[[col, j]];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// 2-norm condition number of a general square matrix, from the spectrum of `AᵀA`.
pub fn condition_number(a: &Array2<f64>) -> Result<f64> {
    let ata = a.t().dot(a);
    let e = sym_eig(&ata)?;
    let lo = e.values[0].max(0.0);
    let hi = e.values[e.values.len() - 1];
    if lo == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((hi / lo).sqrt())
}

/// Solves `A P + Q A = C` for symmetric `P` (d x d) and `Q` (d x d).
///
/// Both coefficients are diagonalised, so the equation decouples into
/// `Ã_ij (q_i + p_j) = C̃_ij` in the joint eigenbasis.
pub fn solve_sylvester(p: &Array2<f64>, q: &Array2<f64>, c: &Array2<f64>) -> Result<Array2<f64>> {
    let d = check_square(&p.view(), "sylvester P")?;
    if q.dim() != (d, d) || c.dim() != (d, d) {
        return Err(Error::dim(format!(
            "sylvester: P is {d}x{d}, Q is {:?}, C is {:?}",
            q.dim(),
            c.dim()
        )));
    }
    let ep = sym_eig(p)?;
    let eq = sym_eig(q)?;
    let scale = ep.values.iter().chain(eq.values.iter()).fold(0.0_f64, |s, x| s.max(x.abs()));
    let mut ct = eq.vectors.t().dot(c).dot(&ep.vectors);
    for i in 0..d {
        for j in 0..d {
            let den = eq.values[i] + ep.values[j];
            if den.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Numerical {
                    what: "sylvester solve (singular operator)".into(),
                    residual: den.abs(),
                });
            }
            ct[[i, j]] /= den;
        }
    }
    Ok(eq.vectors.dot(&ct).dot(&ep.vectors.t()))
}
