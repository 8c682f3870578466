//! Scalar functions lifted to symmetric matrices through the eigenbasis, and
//! their first and second Fréchet derivatives (Daleckii–Krein formulas).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral functions used by the SPD layers and manifold maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatFn {
    Exp,
    Log,
    Sqrt,
    InvSqrt,
    /// `max(eps, x)`, the ReEig rectifier.
    Clamp(f64),
}

/// Relative gap under which divided differences fall back to derivatives.
const CONFLUENT_TOL: f64 = 1e-7;

impl MatFn {
    pub fn needs_positive(self) -> bool {
        matches!(self, MatFn::Log | MatFn::Sqrt | MatFn::InvSqrt)
    }

    pub fn check_domain(self, lambda: f64) -> Result<()> {
        if self.needs_positive() && !(lambda > 0.0) {
            return Err(Error::Domain(format!(
                "{self:?} of a matrix with non-positive eigenvalue {lambda:e}"
            )));
        }
        Ok(())
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            MatFn::Exp => x.exp(),
            MatFn::Log => x.ln(),
            MatFn::Sqrt => x.sqrt(),
            MatFn::InvSqrt => 1.0 / x.sqrt(),
            MatFn::Clamp(eps) => x.max(eps),
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            MatFn::Exp => x.exp(),
            MatFn::Log => 1.0 / x,
            MatFn::Sqrt => 0.5 / x.sqrt(),
            MatFn::InvSqrt => -0.5 / (x * x.sqrt()),
            MatFn::Clamp(eps) => {
                if x > eps {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn deriv2(self, x: f64) -> f64 {
        match self {
            MatFn::Exp => x.exp(),
            MatFn::Log => -1.0 / (x * x),
            MatFn::Sqrt => -0.25 / (x * x.sqrt()),
            MatFn::InvSqrt => 0.75 / (x * x * x.sqrt()),
            MatFn::Clamp(_) => 0.0,
        }
    }

    /// First divided difference `f[a, b]`.
    pub fn dd1(self, a: f64, b: f64) -> f64 {
        match self {
            MatFn::Exp => {
                let d = a - b;
                if d == 0.0 {
                    a.exp()
                } else {
                    b.exp() * d.exp_m1() / d
                }
            }
            MatFn::Log => {
                let d = a - b;
                if d == 0.0 {
                    1.0 / a
                } else {
                    (d / b).ln_1p() / d
                }
            }
            MatFn::Sqrt => 1.0 / (a.sqrt() + b.sqrt()),
            MatFn::InvSqrt => {
                let (sa, sb) = (a.sqrt(), b.sqrt());
                -1.0 / (sa * sb * (sa + sb))
            }
            MatFn::Clamp(_) => {
                if confluent(a, b) {
                    self.deriv(0.5 * (a + b))
                } else {
                    (self.eval(a) - self.eval(b)) / (a - b)
                }
            }
        }
    }

    /// Second divided difference `f[a, b, c]` (symmetric in its arguments).
    pub fn dd2(self, a: f64, b: f64, c: f64) -> f64 {
        let mut x = [a, b, c];
        x.sort_by(|p, q| p.total_cmp(q));
        if confluent(x[0], x[2]) {
            return 0.5 * self.deriv2((x[0] + x[1] + x[2]) / 3.0);
        }
        (self.dd1(x[1], x[2]) - self.dd1(x[0], x[1])) / (x[2] - x[0])
    }
}

fn confluent(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b).abs() <= CONFLUENT_TOL * scale
}

/// `out = A * B` for row-major `n x n` buffers.
pub fn mm(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// `out = Qᵀ X Q`.
pub fn rotate_in(n: usize, q: &[f64], x: &[f64], tmp: &mut [f64], out: &mut [f64]) {
    // tmp = X Q
    mm(n, x, q, tmp);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += q[k * n + i] * tmp[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// `out = Q X Qᵀ`.
pub fn rotate_out(n: usize, q: &[f64], x: &[f64], tmp: &mut [f64], out: &mut [f64]) {
    // tmp = Q X
    mm(n, q, x, tmp);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += tmp[i * n + k] * q[j * n + k];
            }
            out[i * n + j] = s;
        }
    }
}

/// Fills the Loewner matrix `F[i][j] = f[λi, λj]`.
pub fn loewner(f: MatFn, lam: &[f64], out: &mut [f64]) {
    let n = lam.len();
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = if i == j {
                f.deriv(lam[i])
            } else {
                f.dd1(lam[i], lam[j])
            };
        }
    }
}

/// First Fréchet derivative `Df(U)[E] = Q (F ∘ QᵀEQ) Qᵀ`, given eigenvectors
/// `q` and the Loewner matrix `loew` of `U`.
pub fn dk_first(n: usize, q: &[f64], loew: &[f64], e: &[f64], out: &mut [f64]) {
    let mut tmp = vec![0.0; n * n];
    let mut rot = vec![0.0; n * n];
    rotate_in(n, q, e, &mut tmp, &mut rot);
    for (r, f) in rot.iter_mut().zip(loew) {
        *r *= f;
    }
    rotate_out(n, q, &rot, &mut tmp, out);
}

/// Second Fréchet derivative `D²f(U)[E1, E2]`.
pub fn dk_second(
    f: MatFn,
    n: usize,
    q: &[f64],
    lam: &[f64],
    e1: &[f64],
    e2: &[f64],
    out: &mut [f64],
) {
    let mut tmp = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * n];
    rotate_in(n, q, e1, &mut tmp, &mut a);
    rotate_in(n, q, e2, &mut tmp, &mut b);
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += f.dd2(lam[i], lam[k], lam[j])
                    * (a[i * n + k] * b[k * n + j] + b[i * n + k] * a[k * n + j]);
            }
            r[i * n + j] = s;
        }
    }
    rotate_out(n, q, &r, &mut tmp, out);
}

/// Adjoint of `X ↦ D²f(U)[E, X]` applied to `G` (both symmetric); the
/// result is symmetric.
pub fn dk_second_adjoint(
    f: MatFn,
    n: usize,
    q: &[f64],
    lam: &[f64],
    e: &[f64],
    g: &[f64],
    out: &mut [f64],
) {
    let mut tmp = vec![0.0; n * n];
    let mut eb = vec![0.0; n * n];
    let mut gb = vec![0.0; n * n];
    rotate_in(n, q, e, &mut tmp, &mut eb);
    rotate_in(n, q, g, &mut tmp, &mut gb);
    let mut z = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += eb[a * n + i] * gb[i * n + b] * f.dd2(lam[a], lam[i], lam[b]);
            }
            z[a * n + b] = s;
        }
    }
    let mut zz = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            zz[a * n + b] = z[a * n + b] + z[b * n + a];
        }
    }
    rotate_out(n, q, &zz, &mut tmp, out);
}
