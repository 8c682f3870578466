//! Mass-inertia heads: SPD network (exponential map followed by SPD
//! layers) and the Cholesky baseline. Both turn the output of a Euclidean
//! network into batched `n x n` matrices, propagating tangents so that
//! `∂M/∂q` is available as graph nodes.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Activation, Bound, Jet, Var};
use crate::error::{Error, Result};
use crate::manifolds::{ParamGroup, ParamId, Point, ProductPoint};
use crate::numerics::{spd_expm, sym_part, MatFn};

/// Number of free entries of a symmetric `n x n` matrix.
pub fn tri_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// For each of the `n²` row-major entries, its index in the row-major
/// upper-triangle vector.
pub fn sym_assemble_index(n: usize) -> Vec<Option<usize>> {
    let mut idx = vec![None; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            idx[i * n + j] = Some(k);
            idx[j * n + i] = Some(k);
            k += 1;
        }
    }
    idx
}

/// Symmetric matrix from its row-major upper triangle.
pub fn sym_assemble(v: &[f64], n: usize) -> Result<Array2<f64>> {
    if v.len() != tri_count(n) {
        return Err(Error::dim(format!("expected {} entries for a {n}x{n} symmetric matrix, got {}", tri_count(n), v.len())));
    }
    let idx = sym_assemble_index(n);
    Ok(Array2::from_shape_fn((n, n), |(i, j)| v[idx[i * n + j].expect("index")]))
}

/// Row-major upper triangle of a square matrix.
pub fn sym_extract(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(tri_count(n));
    for i in 0..n {
        for j in i..n {
            v.push(m[[i, j]]);
        }
    }
    v
}

/// Gather maps placing the row-major lower triangle into an `n x n`
/// matrix: `(off-diagonal, diagonal)`.
fn chol_index(n: usize) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let mut off = vec![None; n * n];
    let mut diag = vec![None; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            if i == j {
                diag[i * n + j] = Some(k);
            } else {
                off[i * n + j] = Some(k);
            }
            k += 1;
        }
    }
    (off, diag)
}

fn flat_row(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    m.as_standard_layout().into_owned().into_shape_with_order((1, n * n)).expect("shape")
}

/// Tangent-space basepoint of the exponential-map layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Basepoint {
    Identity,
    Learned(ParamId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpdLayerKind {
    GyroAi,
    GyroSpdPp,
    ReEig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpdLayer {
    /// `exp(A ∗ log X) ⊕ B` with `X ⊕ B = X^{1/2} B X^{1/2}`.
    GyroAi { a: ParamId, b: ParamId },
    /// `exp(V ∗ I_v)` with `V = A^{1/2} log(B^{-1/2} X B^{-1/2}) A^{1/2}`.
    GyroSpdPp { a: ParamId, b: ParamId },
    /// Eigenvalues clamped below at `eps`.
    ReEig { eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MassHead {
    Spd {
        n: usize,
        basepoint: Basepoint,
        layers: Vec<SpdLayer>,
    },
    Cholesky {
        n: usize,
        delta: f64,
    },
}

/// A batch of matrices together with their directional derivatives.
pub type MatJet<'t> = (Var<'t>, Vec<Var<'t>>);

fn init_spd(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-0.05..0.05));
    spd_expm(&sym_part(&a)).expect("small symmetric exponent")
}

impl MassHead {
    /// SPD network head. `eps` is the ReEig threshold.
    pub fn new_spd(
        params: &mut ProductPoint,
        name: &str,
        n: usize,
        learned_basepoint: bool,
        layers: &[SpdLayerKind],
        eps: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("ReEig threshold must be positive, got {eps}")));
        }
        let basepoint = if learned_basepoint {
            Basepoint::Learned(params.push(format!("{name}.basepoint"), ParamGroup::Lnn, Point::Spd(init_spd(rng, n))))
        } else {
            Basepoint::Identity
        };
        let mut out = Vec::new();
        for (l, kind) in layers.iter().enumerate() {
            out.push(match kind {
                SpdLayerKind::ReEig => SpdLayer::ReEig { eps },
                SpdLayerKind::GyroAi | SpdLayerKind::GyroSpdPp => {
                    let a = params.push(format!("{name}.spd{l}.a"), ParamGroup::Lnn, Point::Spd(init_spd(rng, n)));
                    let b = params.push(format!("{name}.spd{l}.b"), ParamGroup::Lnn, Point::Spd(init_spd(rng, n)));
                    if *kind == SpdLayerKind::GyroAi {
                        SpdLayer::GyroAi { a, b }
                    } else {
                        SpdLayer::GyroSpdPp { a, b }
                    }
                }
            });
        }
        Ok(MassHead::Spd {
            n,
            basepoint,
            layers: out,
        })
    }

    pub fn new_cholesky(n: usize, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) {
            return Err(Error::invalid(format!("diagonal shift must be nonnegative, got {delta}")));
        }
        Ok(MassHead::Cholesky { n, delta })
    }

    pub fn n(&self) -> usize {
        match self {
            MassHead::Spd { n, .. } | MassHead::Cholesky { n, .. } => *n,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        if let MassHead::Spd { basepoint, layers, .. } = self {
            if let Basepoint::Learned(p) = basepoint {
                out.push(*p);
            }
            for l in layers {
                if let SpdLayer::GyroAi { a, b } | SpdLayer::GyroSpdPp { a, b } = l {
                    out.push(*a);
                    out.push(*b);
                }
            }
        }
        out
    }

    /// Width of the Euclidean output feeding the head.
    pub fn raw_dim(&self) -> usize {
        tri_count(self.n())
    }

    /// Maps the Euclidean head output (with tangents) to `(M, [dM])`.
    pub fn jet<'t>(&self, b: &Bound<'t>, raw: &Jet<'t>) -> Result<MatJet<'t>> {
        match self {
            MassHead::Spd { n, basepoint, layers } => {
                let n = *n;
                let idx = Rc::new(sym_assemble_index(n));
                let u = raw.linear(|v| v.gather_cols(idx.clone()));
                let mut x = exp_layer(b, n, basepoint, &u)?;
                for layer in layers {
                    x = spd_layer(b, n, layer, x)?;
                }
                Ok(x)
            }
            MassHead::Cholesky { n, delta } => {
                let n = *n;
                let (off, diag) = chol_index(n);
                let (off, diag) = (Rc::new(off), Rc::new(diag));
                let soft = raw.act(Activation::SoftPlus);
                let lower = |a: Var<'t>, d: Var<'t>| a.gather_cols(off.clone()).add(d.gather_cols(diag.clone()));
                let l = lower(raw.x, soft.x);
                let mut m = l.bmm(l, n, false, true);
                if *delta > 0.0 {
                    m = m.add(b_const(l, flat_row(&(Array2::eye(n) * *delta))));
                }
                let dm = raw
                    .d1
                    .iter()
                    .zip(&soft.d1)
                    .map(|(&dr, &ds)| {
                        let dl = lower(dr, ds);
                        dl.bmm(l, n, false, true).add(l.bmm(dl, n, false, true))
                    })
                    .collect();
                Ok((m, dm))
            }
        }
    }
}

fn b_const<'t>(like: Var<'t>, v: Array2<f64>) -> Var<'t> {
    like.tape().constant(v)
}

/// `out = L X R` for each member of a matrix jet, with `L`, `R` constant
/// along the tangents.
fn sandwich<'t>(n: usize, l: Var<'t>, x: &MatJet<'t>, r: Var<'t>) -> MatJet<'t> {
    let f = |v: Var<'t>| l.bmm(v, n, false, false).bmm(r, n, false, false);
    (f(x.0), x.1.iter().map(|&v| f(v)).collect())
}

fn spectral<'t>(n: usize, f: MatFn, x: &MatJet<'t>) -> Result<MatJet<'t>> {
    let (y, s) = x.0.sym_fn(f, n)?;
    Ok((y, x.1.iter().map(|&d| x.0.sym_fn_jvp(&s, d)).collect()))
}

fn exp_layer<'t>(b: &Bound<'t>, n: usize, basepoint: &Basepoint, u: &Jet<'t>) -> Result<MatJet<'t>> {
    let u: MatJet<'t> = (u.x, u.d1.clone());
    match basepoint {
        Basepoint::Identity => spectral(n, MatFn::Exp, &u),
        Basepoint::Learned(p) => {
            let p = b.mat(*p);
            let (ph, _) = p.sym_fn(MatFn::Sqrt, n)?;
            let (pih, _) = p.sym_fn(MatFn::InvSqrt, n)?;
            let w = sandwich(n, pih, &u, pih);
            let e = spectral(n, MatFn::Exp, &w)?;
            Ok(sandwich(n, ph, &e, ph))
        }
    }
}

fn spd_layer<'t>(b: &Bound<'t>, n: usize, layer: &SpdLayer, x: MatJet<'t>) -> Result<MatJet<'t>> {
    match layer {
        SpdLayer::ReEig { eps } => spectral(n, MatFn::Clamp(*eps), &x),
        SpdLayer::GyroAi { a, b: bias } => {
            let (a, bias) = (b.mat(*a), b.mat(*bias));
            let l = spectral(n, MatFn::Log, &x)?;
            let z = (l.0.mul(a), l.1.iter().map(|&d| d.mul(a)).collect::<Vec<_>>());
            let y = spectral(n, MatFn::Exp, &z)?;
            let s = spectral(n, MatFn::Sqrt, &y)?;
            let sb = s.0.bmm(bias, n, false, false);
            let out = sb.bmm(s.0, n, false, false);
            let d = s
                .1
                .iter()
                .map(|&ds| ds.bmm(bias, n, false, false).bmm(s.0, n, false, false).add(sb.bmm(ds, n, false, false)))
                .collect();
            Ok((out, d))
        }
        SpdLayer::GyroSpdPp { a, b: bias } => {
            let (a, bias) = (b.mat(*a), b.mat(*bias));
            let (bih, _) = bias.sym_fn(MatFn::InvSqrt, n)?;
            let (ah, _) = a.sym_fn(MatFn::Sqrt, n)?;
            let w = sandwich(n, bih, &x, bih);
            let lw = spectral(n, MatFn::Log, &w)?;
            let v = sandwich(n, ah, &lw, ah);
            let s2 = std::f64::consts::FRAC_1_SQRT_2;
            let iv = b_const(v.0, flat_row(&Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { s2 })));
            let vi = (v.0.mul(iv), v.1.iter().map(|&d| d.mul(iv)).collect::<Vec<_>>());
            spectral(n, MatFn::Exp, &vi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::{row, Tape};
    use crate::numerics::{is_spd, max_abs_diff, spd_logm, spd_sqrt};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sym_assemble_cases() {
        assert_eq!(sym_assemble(&[0.0; 6], 3).unwrap(), Array2::<f64>::zeros((3, 3)));
        assert_eq!(sym_assemble(&[1.0, 2.0, 3.0], 2).unwrap(), array![[1.0, 2.0], [2.0, 3.0]]);
        let v: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        assert_eq!(sym_extract(&sym_assemble(&v, 4).unwrap()), v);
        assert!(sym_assemble(&[1.0, 2.0], 2).is_err());
    }

    fn eval_head(head: &MassHead, p: &ProductPoint, raw: &[f64]) -> Array2<f64> {
        let tape = Tape::inference();
        let b = Bound::new(&tape, p);
        let (m, _) = head.jet(&b, &Jet::point(row(&tape, raw))).unwrap();
        let n = head.n();
        (*m.value()).clone().into_shape_with_order((n, n)).unwrap()
    }

    #[test]
    fn exp_layer_with_zero_input() {
        let mut p = ProductPoint::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = MassHead::new_spd(&mut p, "m", 3, false, &[], 1e-4, &mut rng).unwrap();
        assert!(max_abs_diff(&eval_head(&head, &p, &[0.0; 6]), &Array2::eye(3)) < 1e-15);
        let head = MassHead::new_spd(&mut p, "m", 3, true, &[], 1e-4, &mut rng).unwrap();
        let MassHead::Spd { basepoint: Basepoint::Learned(id), .. } = &head else { panic!() };
        let pm = p.get(*id).matrix().clone();
        assert!(max_abs_diff(&eval_head(&head, &p, &[0.0; 6]), &pm) < 1e-13);
        let u = [0.3, -0.2, 0.1, 0.5, 0.0, -0.4];
        let want = crate::manifolds::spd_exp(&pm, &sym_assemble(&u, 3).unwrap()).unwrap();
        assert!(max_abs_diff(&eval_head(&head, &p, &u), &want) < 1e-12);
    }

    fn set_spd(p: &mut ProductPoint, id: ParamId, m: Array2<f64>) {
        p.components[id.0].point = Point::Spd(m);
    }

    #[test]
    fn gyroai_neutral_elements() {
        let mut p = ProductPoint::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = MassHead::new_spd(&mut p, "m", 2, false, &[SpdLayerKind::GyroAi], 1e-4, &mut rng).unwrap();
        let MassHead::Spd { layers, .. } = &head else { panic!() };
        let SpdLayer::GyroAi { a, b } = layers[0] else { panic!() };
        // A = all ones, B = I: output equals the layer input exp(U).
        set_spd(&mut p, a, array![[1.0, 1.0], [1.0, 1.0]]);
        set_spd(&mut p, b, Array2::eye(2));
        let u = [0.4, 0.3, -0.5];
        let x = spd_expm(&sym_assemble(&u, 2).unwrap()).unwrap();
        assert!(max_abs_diff(&eval_head(&head, &p, &u), &x) < 1e-13);
        // X = I: output equals B.
        let bm = array![[2.0, 0.3], [0.3, 0.7]];
        set_spd(&mut p, b, bm.clone());
        set_spd(&mut p, a, array![[1.5, 0.2], [0.2, 0.9]]);
        assert!(max_abs_diff(&eval_head(&head, &p, &[0.0; 3]), &bm) < 1e-13);
    }

    #[test]
    fn gyrospdpp_matches_direct_formula() {
        let mut p = ProductPoint::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = MassHead::new_spd(&mut p, "m", 2, false, &[SpdLayerKind::GyroSpdPp], 1e-4, &mut rng).unwrap();
        let MassHead::Spd { layers, .. } = &head else { panic!() };
        let SpdLayer::GyroSpdPp { a, b } = layers[0] else { panic!() };
        let am = array![[1.2, 0.1], [0.1, 0.8]];
        let bm = array![[0.9, -0.2], [-0.2, 1.4]];
        set_spd(&mut p, a, am.clone());
        set_spd(&mut p, b, bm.clone());
        let u = [0.2, -0.1, 0.6];
        let x = spd_expm(&sym_assemble(&u, 2).unwrap()).unwrap();
        let (_, bih) = spd_sqrt(&bm).unwrap();
        let (ah, _) = spd_sqrt(&am).unwrap();
        let v = ah.dot(&spd_logm(&bih.dot(&x).dot(&bih)).unwrap()).dot(&ah);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let iv = array![[1.0, s], [s, 1.0]];
        let want = spd_expm(&(&v * &iv)).unwrap();
        assert!(max_abs_diff(&eval_head(&head, &p, &u), &want) < 1e-12);
        // B = X collapses the log to zero and the output to I.
        set_spd(&mut p, b, x);
        assert!(max_abs_diff(&eval_head(&head, &p, &u), &Array2::eye(2)) < 1e-12);
    }

    #[test]
    fn reeig_clamps_small_eigenvalues() {
        let mut p = ProductPoint::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = MassHead::new_spd(&mut p, "m", 2, false, &[SpdLayerKind::ReEig], 1e-4, &mut rng).unwrap();
        let u = [1e-6f64.ln(), 0.0, 2f64.ln()];
        let out = eval_head(&head, &p, &u);
        assert!(max_abs_diff(&out, &array![[1e-4, 0.0], [0.0, 2.0]]) < 1e-14);
        let u = [0.3, 0.1, -0.2];
        let x = spd_expm(&sym_assemble(&u, 2).unwrap()).unwrap();
        assert!(max_abs_diff(&eval_head(&head, &p, &u), &x) < 1e-14);
    }

    #[test]
    fn cholesky_identity_path() {
        let head = MassHead::new_cholesky(3, 0.0).unwrap();
        let p = ProductPoint::new();
        let one = (std::f64::consts::E - 1.0).ln();
        let raw = [one, 0.0, one, 0.0, 0.0, one];
        assert!(max_abs_diff(&eval_head(&head, &p, &raw), &Array2::eye(3)) < 1e-14);
    }

    #[test]
    fn outputs_are_spd_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ProductPoint::new();
        let kinds = [SpdLayerKind::GyroAi, SpdLayerKind::ReEig, SpdLayerKind::GyroSpdPp, SpdLayerKind::ReEig];
        let heads = vec![
            MassHead::new_spd(&mut p, "a", 3, true, &kinds, 1e-4, &mut rng).unwrap(),
            MassHead::new_cholesky(3, 1e-6).unwrap(),
        ];
        for head in &heads {
            for _ in 0..200 {
                let raw: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
                let m = eval_head(head, &p, &raw);
                assert!(is_spd(&m), "{head:?}: {m}");
            }
        }
    }
}
