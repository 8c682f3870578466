//! Batched small-matrix nodes. A batch of `n x n` matrices is a `B x n²`
//! array, one row-major matrix per row; a single row broadcasts over the
//! batch.

use std::borrow::Cow;
use std::rc::Rc;

use ndarray::Array2;

use super::tape::Var;
use crate::error::{Error, Result};
use crate::numerics::{dk_first, dk_second_adjoint, eig_sym_into, loewner, EigWork, MatFn};

/// Above this estimated condition number a PD solve is refused.
pub const MAX_SOLVE_COND: f64 = 1e12;

pub(crate) fn flat(a: &Array2<f64>) -> Cow<'_, [f64]> {
    match a.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(a.iter().copied().collect()),
    }
}

pub(crate) fn transpose(a: &Array2<f64>) -> Array2<f64> {
    a.t().as_standard_layout().into_owned()
}

fn batch_of(rows: &[usize]) -> Result<usize> {
    let b = rows.iter().copied().max().unwrap_or(1);
    if rows.iter().any(|&r| r != 1 && r != b) {
        return Err(Error::dim(format!("incompatible batch sizes {rows:?}")));
    }
    Ok(b)
}

fn check_cols(a: &Array2<f64>, cols: usize, what: &str) {
    assert_eq!(a.ncols(), cols, "{what}: expected {cols} columns, got {}", a.ncols());
}

/// `out = op(A) op(B)` where `op` optionally transposes.
fn mm_t(n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                let x = if ta { a[k * n + i] } else { a[i * n + k] };
                let y = if tb { b[j * n + k] } else { b[k * n + j] };
                s += x * y;
            }
            out[i * n + j] = s;
        }
    }
}

fn sym_into(n: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = 0.5 * (x[i * n + j] + x[j * n + i]);
        }
    }
}

/// Eigen-data of a batch of symmetric matrices, reused by derivative nodes.
pub struct Spectral {
    f: MatFn,
    n: usize,
    rows: usize,
    q: Vec<f64>,
    lam: Vec<f64>,
    loew: Vec<f64>,
}

impl Spectral {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Eigenvalues of batch member `b`, ascending.
    pub fn eigenvalues(&self, b: usize) -> &[f64] {
        &self.lam[b * self.n..(b + 1) * self.n]
    }

    fn q(&self, b: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.q[b * nn..(b + 1) * nn]
    }

    fn loew(&self, b: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.loew[b * nn..(b + 1) * nn]
    }

    /// `Df(U)[sym E]` for every row of `e`.
    fn first(&self, e: &Array2<f64>) -> Array2<f64> {
        let n = self.n;
        let nn = n * n;
        let rows = self.rows.max(e.nrows());
        let ef = flat(e);
        let mut out = Array2::zeros((rows, nn));
        let mut se = vec![0.0; nn];
        {
            let of = out.as_slice_mut().expect("standard layout");
            for b in 0..rows {
                let sb = if self.rows == 1 { 0 } else { b };
                let eb = if e.nrows() == 1 { 0 } else { b };
                sym_into(n, &ef[eb * nn..(eb + 1) * nn], &mut se);
                dk_first(n, self.q(sb), self.loew(sb), &se, &mut of[b * nn..(b + 1) * nn]);
            }
        }
        out
    }
}

fn spectral(f: MatFn, n: usize, u: &Array2<f64>) -> Result<(Array2<f64>, Spectral)> {
    let nn = n * n;
    check_cols(u, nn, "sym_fn");
    let rows = u.nrows();
    let uf = flat(u);
    let mut q = vec![0.0; rows * nn];
    let mut lam = vec![0.0; rows * n];
    let mut loew = vec![0.0; rows * nn];
    let mut out = Array2::zeros((rows, nn));
    let mut work = EigWork::new(n);
    let mut su = vec![0.0; nn];
    {
        let of = out.as_slice_mut().expect("standard layout");
        for b in 0..rows {
            sym_into(n, &uf[b * nn..(b + 1) * nn], &mut su);
            let qb = &mut q[b * nn..(b + 1) * nn];
            let lb = &mut lam[b * n..(b + 1) * n];
            eig_sym_into(n, &su, lb, qb, &mut work)?;
            for &l in lb.iter() {
                f.check_domain(l)?;
            }
            loewner(f, lb, &mut loew[b * nn..(b + 1) * nn]);
            let ob = &mut of[b * nn..(b + 1) * nn];
            for k in 0..n {
                let fk = f.eval(lb[k]);
                for i in 0..n {
                    let qik = qb[i * n + k] * fk;
                    for j in 0..n {
                        ob[i * n + j] += qik * qb[j * n + k];
                    }
                }
            }
        }
    }
    Ok((
        out,
        Spectral {
            f,
            n,
            rows,
            q,
            lam,
            loew,
        },
    ))
}

impl<'t> Var<'t> {
    /// Batched `op(A) op(B)` of `n x n` matrices.
    pub fn bmm(self, other: Var<'t>, n: usize, ta: bool, tb: bool) -> Var<'t> {
        let nn = n * n;
        let (a, b) = (self.value(), other.value());
        check_cols(&a, nn, "bmm lhs");
        check_cols(&b, nn, "bmm rhs");
        let rows = batch_of(&[a.nrows(), b.nrows()]).unwrap_or_else(|e| panic!("{e}"));
        let mut out = Array2::zeros((rows, nn));
        {
            let (af, bf) = (flat(&a), flat(&b));
            let of = out.as_slice_mut().expect("standard layout");
            for r in 0..rows {
                let ra = if a.nrows() == 1 { 0 } else { r };
                let rb = if b.nrows() == 1 { 0 } else { r };
                mm_t(n, &af[ra * nn..(ra + 1) * nn], ta, &bf[rb * nn..(rb + 1) * nn], tb, &mut of[r * nn..(r + 1) * nn]);
            }
        }
        self.tape.push_op(
            out,
            &[self, other],
            Box::new(move |g, p, _| {
                let (a, b) = (p[0], p[1]);
                let (af, bf, gf) = (flat(a), flat(b), flat(g));
                let mut ga = Array2::zeros(a.dim());
                let mut gb = Array2::zeros(b.dim());
                let mut tmp = vec![0.0; nn];
                let rows = g.nrows();
                {
                    let gaf = ga.as_slice_mut().expect("standard layout");
                    let gbf = gb.as_slice_mut().expect("standard layout");
                    for r in 0..rows {
                        let ra = if a.nrows() == 1 { 0 } else { r };
                        let rb = if b.nrows() == 1 { 0 } else { r };
                        let (ab, bb, gr) = (
                            &af[ra * nn..(ra + 1) * nn],
                            &bf[rb * nn..(rb + 1) * nn],
                            &gf[r * nn..(r + 1) * nn],
                        );
                        if ta {
                            mm_t(n, bb, tb, gr, true, &mut tmp);
                        } else {
                            mm_t(n, gr, false, bb, !tb, &mut tmp);
                        }
                        for (x, y) in gaf[ra * nn..(ra + 1) * nn].iter_mut().zip(&tmp) {
                            *x += y;
                        }
                        if tb {
                            mm_t(n, gr, true, ab, ta, &mut tmp);
                        } else {
                            mm_t(n, ab, !ta, gr, false, &mut tmp);
                        }
                        for (x, y) in gbf[rb * nn..(rb + 1) * nn].iter_mut().zip(&tmp) {
                            *x += y;
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Batched matrix-vector product `M_b v_b`.
    pub fn bmv(self, v: Var<'t>, n: usize) -> Var<'t> {
        let nn = n * n;
        let (m, x) = (self.value(), v.value());
        check_cols(&m, nn, "bmv matrix");
        check_cols(&x, n, "bmv vector");
        let rows = batch_of(&[m.nrows(), x.nrows()]).unwrap_or_else(|e| panic!("{e}"));
        let mf = flat(&m);
        let mut out = Array2::zeros((rows, n));
        for r in 0..rows {
            let rm = if m.nrows() == 1 { 0 } else { r };
            let rx = if x.nrows() == 1 { 0 } else { r };
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += mf[rm * nn + i * n + j] * x[[rx, j]];
                }
                out[[r, i]] = s;
            }
        }
        self.tape.push_op(
            out,
            &[self, v],
            Box::new(move |g, p, _| {
                let (m, x) = (p[0], p[1]);
                let mf = flat(m);
                let mut gm = Array2::zeros(m.dim());
                let mut gx = Array2::zeros(x.dim());
                for r in 0..g.nrows() {
                    let rm = if m.nrows() == 1 { 0 } else { r };
                    let rx = if x.nrows() == 1 { 0 } else { r };
                    for i in 0..n {
                        let gi = g[[r, i]];
                        for j in 0..n {
                            gm[[rm, i * n + j]] += gi * x[[rx, j]];
                            gx[[rx, j]] += mf[rm * nn + i * n + j] * gi;
                        }
                    }
                }
                vec![Some(gm), Some(gx)]
            }),
        )
    }

    /// Solves `sym(M_b) x_b = r_b` by Cholesky. Fails if a matrix is not
    /// positive definite or its estimated condition number exceeds
    /// [`MAX_SOLVE_COND`].
    pub fn bsolve_spd(self, rhs: Var<'t>, n: usize) -> Result<Var<'t>> {
        let nn = n * n;
        let (m, r) = (self.value(), rhs.value());
        check_cols(&m, nn, "bsolve_spd matrix");
        check_cols(&r, n, "bsolve_spd rhs");
        let rows = batch_of(&[m.nrows(), r.nrows()])?;
        let mf = flat(&m);
        let mut chol = vec![0.0; m.nrows() * nn];
        for b in 0..m.nrows() {
            let mb = &mf[b * nn..(b + 1) * nn];
            let lb = &mut chol[b * nn..(b + 1) * nn];
            let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
            for j in 0..n {
                let mut s = 0.5 * (mb[j * n + j] + mb[j * n + j]);
                for k in 0..j {
                    s -= lb[j * n + k] * lb[j * n + k];
                }
                if !(s > 0.0) {
                    return Err(Error::Domain(format!(
                        "matrix {b} of batch is not positive definite (pivot {s:e} at {j})"
                    )));
                }
                let d = s.sqrt();
                lb[j * n + j] = d;
                dmin = dmin.min(d);
                dmax = dmax.max(d);
                for i in j + 1..n {
                    let mut s = 0.5 * (mb[i * n + j] + mb[j * n + i]);
                    for k in 0..j {
                        s -= lb[i * n + k] * lb[j * n + k];
                    }
                    lb[i * n + j] = s / d;
                }
            }
            let cond = (dmax / dmin).powi(2);
            if cond > MAX_SOLVE_COND {
                return Err(Error::IllConditioned(cond));
            }
        }
        let chol = Rc::new(chol);
        let solve = {
            let chol = chol.clone();
            let mrows = m.nrows();
            move |rhs: &Array2<f64>| -> Array2<f64> {
                let rows = mrows.max(rhs.nrows());
                let mut out = Array2::zeros((rows, n));
                let mut y = vec![0.0; n];
                for b in 0..rows {
                    let l = &chol[if mrows == 1 { 0 } else { b } * nn..][..nn];
                    let rb = if rhs.nrows() == 1 { 0 } else { b };
                    for i in 0..n {
                        let mut s = rhs[[rb, i]];
                        for k in 0..i {
                            s -= l[i * n + k] * y[k];
                        }
                        y[i] = s / l[i * n + i];
                    }
                    for i in (0..n).rev() {
                        let mut s = y[i];
                        for k in i + 1..n {
                            s -= l[k * n + i] * out[[b, k]];
                        }
                        out[[b, i]] = s / l[i * n + i];
                    }
                }
                out
            }
        };
        let out = solve(&r);
        debug_assert_eq!(out.nrows(), rows);
        Ok(self.tape.push_op(
            out,
            &[self, rhs],
            Box::new(move |g, p, x| {
                let lam = solve(g);
                let (m, r) = (p[0], p[1]);
                let mut gm = Array2::zeros(m.dim());
                for b in 0..lam.nrows() {
                    let rm = if m.nrows() == 1 { 0 } else { b };
                    for i in 0..n {
                        for j in 0..n {
                            gm[[rm, i * n + j]] -= 0.5 * (lam[[b, i]] * x[[b, j]] + x[[b, i]] * lam[[b, j]]);
                        }
                    }
                }
                vec![Some(gm), Some(super::tape::reduce_to(lam, r.dim()))]
            }),
        ))
    }

    /// Batched general inverse.
    pub fn binv(self, n: usize) -> Result<Var<'t>> {
        let nn = n * n;
        let a = self.value();
        check_cols(&a, nn, "binv");
        let af = flat(&a);
        let mut out = Array2::zeros(a.dim());
        for b in 0..a.nrows() {
            let m = Array2::from_shape_vec((n, n), af[b * nn..(b + 1) * nn].to_vec()).expect("shape");
            let inv = crate::numerics::invert(&m)?;
            out.row_mut(b).assign(&ndarray::Array1::from_iter(inv.iter().copied()));
        }
        Ok(self.tape.push_op(
            out,
            &[self],
            Box::new(move |g, _, inv| {
                let (gf, invf) = (flat(g), flat(inv));
                let mut ga = Array2::zeros(g.dim());
                let mut tmp = vec![0.0; nn];
                let gaf = ga.as_slice_mut().expect("standard layout");
                for b in 0..g.nrows() {
                    let (ib, gb) = (&invf[b * nn..(b + 1) * nn], &gf[b * nn..(b + 1) * nn]);
                    mm_t(n, ib, true, gb, false, &mut tmp);
                    mm_t(n, &tmp, false, ib, true, &mut gaf[b * nn..(b + 1) * nn]);
                    for x in gaf[b * nn..(b + 1) * nn].iter_mut() {
                        *x = -*x;
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Spectral matrix function `f(sym U)` of each batch member.
    pub fn sym_fn(self, f: MatFn, n: usize) -> Result<(Var<'t>, Rc<Spectral>)> {
        let u = self.value();
        let (out, spec) = spectral(f, n, &u)?;
        let spec = Rc::new(spec);
        let s2 = spec.clone();
        let var = self
            .tape
            .push_op(out, &[self], Box::new(move |g, _, _| vec![Some(s2.first(g))]));
        Ok((var, spec))
    }

    /// Directional derivative `Df(U)[sym E]` of a node produced by
    /// [`Var::sym_fn`] (`self` is `U`, `spec` the returned eigen-data).
    pub fn sym_fn_jvp(self, spec: &Rc<Spectral>, e: Var<'t>) -> Var<'t> {
        let n = spec.n;
        let nn = n * n;
        let ev = e.value();
        check_cols(&ev, nn, "sym_fn_jvp");
        assert_eq!(self.rows(), spec.rows, "sym_fn_jvp: spectral data belongs to another node");
        let out = spec.first(&ev);
        let s2 = spec.clone();
        self.tape.push_op(
            out,
            &[self, e],
            Box::new(move |g, p, _| {
                let (u, e) = (p[0], p[1]);
                let (ef, gf) = (flat(e), flat(g));
                let ge = super::tape::reduce_to(s2.first(g), e.dim());
                let mut gu = Array2::zeros(u.dim());
                let mut se = vec![0.0; nn];
                let mut sg = vec![0.0; nn];
                let mut tmp = vec![0.0; nn];
                for b in 0..g.nrows() {
                    let sb = if s2.rows == 1 { 0 } else { b };
                    let eb = if e.nrows() == 1 { 0 } else { b };
                    sym_into(n, &ef[eb * nn..(eb + 1) * nn], &mut se);
                    sym_into(n, &gf[b * nn..(b + 1) * nn], &mut sg);
                    dk_second_adjoint(s2.f, n, s2.q(sb), s2.eigenvalues(sb), &se, &sg, &mut tmp);
                    for (k, t) in tmp.iter().enumerate() {
                        gu[[sb, k]] += t;
                    }
                }
                vec![Some(gu), Some(ge)]
            }),
        )
    }
}
