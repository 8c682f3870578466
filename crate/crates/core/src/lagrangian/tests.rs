use ndarray::{array, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffengine::{compare, gradient, riemannian_grad_check, Bound, Tape, Var};
use crate::error::Result;
use crate::manifolds::{ParamId, Point, ProductPoint};
use crate::networks::{Mlp, SpdLayerKind};

fn spd_arch(layers: Vec<SpdLayerKind>, learned: bool) -> LnnArch {
    LnnArch {
        hidden: vec![8, 8],
        shared: false,
        mass: MassArch::Spd {
            learned_basepoint: learned,
            layers,
            eps: 1e-4,
        },
    }
}

fn build(arch: &LnnArch, n: usize, seed: u64) -> (LagrangianModel, ProductPoint) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ProductPoint::new();
    let m = LagrangianModel::new(&mut p, "lnn", n, arch, &mut rng).unwrap();
    (m, p)
}

fn zero_last(net: &Mlp, p: &mut ProductPoint) {
    for id in [*net.weights.last().unwrap(), *net.biases.last().unwrap()] {
        let z = Array2::zeros(p.get(id).matrix().dim());
        p.components[id.0].point = Point::Euclidean(z);
    }
}

/// `M = I` and `V = 0` everywhere.
fn trivialize(m: &LagrangianModel, p: &mut ProductPoint) {
    match &m.nets {
        EnergyNets::Separate { kinetic, potential } | EnergyNets::Shared { kinetic, potential, .. } => {
            zero_last(kinetic, p);
            zero_last(potential, p);
        }
    }
}

fn terms_values(m: &LagrangianModel, p: &ProductPoint, q: &Array2<f64>, dq: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let tape = Tape::inference();
    let b = Bound::new(&tape, p);
    let t = m.terms(&b, tape.constant(q.clone()), tape.constant(dq.clone())).unwrap();
    ((*t.m.value()).clone(), (*t.c.value()).clone(), (*t.g.value()).clone())
}

fn row2(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

#[test]
fn kinetic_energy_basics() {
    let (m, mut p) = build(&spd_arch(vec![], false), 3, 0);
    let q = row2(&[0.1, -0.4, 0.7]);
    let (t, _) = m.energies(&p, &q, &Array2::zeros((1, 3))).unwrap();
    assert_eq!(t[0], 0.0);
    trivialize(&m, &mut p);
    let dq = row2(&[1.0, -2.0, 0.5]);
    let (t, v) = m.energies(&p, &q, &dq).unwrap();
    assert!((t[0] - 0.5 * 5.25).abs() < 1e-15);
    assert_eq!(v[0], 0.0);
}

#[test]
fn constant_mass_has_no_coriolis_and_identity_dynamics() {
    let (m, mut p) = build(&spd_arch(vec![], false), 2, 1);
    trivialize(&m, &mut p);
    let q = row2(&[0.3, 1.1]);
    let dq = row2(&[-2.0, 0.7]);
    let (mm, c, g) = terms_values(&m, &p, &q, &dq);
    assert_eq!(mm, row2(&[1.0, 0.0, 0.0, 1.0]));
    assert!(c.iter().all(|&x| x == 0.0));
    assert!(g.iter().all(|&x| x == 0.0));
    let tau = row2(&[0.25, -3.0]);
    let a = m.accel_values(&p, &q, &dq, &tau).unwrap();
    assert!((&a - &tau).iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn coriolis_is_quadratic_in_velocity() {
    for arch in [spd_arch(vec![SpdLayerKind::GyroAi, SpdLayerKind::ReEig], true), spd_arch(vec![], false)] {
        let (m, p) = build(&arch, 3, 2);
        let q = row2(&[0.2, -0.5, 0.9]);
        let dq = row2(&[0.4, 1.3, -0.8]);
        let (_, c1, _) = terms_values(&m, &p, &q, &dq);
        let (_, c2, _) = terms_values(&m, &p, &q, &(&dq * 2.0));
        let rep = compare(c2.as_slice().unwrap(), (&c1 * 4.0).as_slice().unwrap());
        assert!(rep.passes(1e-9), "{rep:?}");
    }
}

/// `c` rebuilt from finite differences of `M(q)`.
fn coriolis_fd(m: &LagrangianModel, p: &ProductPoint, q: &Array1<f64>, dq: &Array1<f64>) -> Vec<f64> {
    let n = q.len();
    let mass = |x: &Array1<f64>| {
        let v = m.mass_values(p, &x.clone().insert_axis(ndarray::Axis(0))).unwrap();
        v.into_shape_with_order((n, n)).unwrap()
    };
    let h = 1e-6;
    let mdot = (mass(&(q + &(dq * h))) - mass(&(q - &(dq * h)))) / (2.0 * h);
    let mut out = mdot.dot(dq).to_vec();
    for k in 0..n {
        let mut e = Array1::zeros(n);
        e[k] = h;
        let quad = |x: &Array1<f64>| dq.dot(&mass(x).dot(dq));
        out[k] -= 0.5 * (quad(&(q + &e)) - quad(&(q - &e))) / (2.0 * h);
    }
    out
}

#[test]
fn coriolis_and_gravity_match_finite_differences() {
    let archs = [
        spd_arch(vec![], false),
        spd_arch(vec![SpdLayerKind::GyroAi, SpdLayerKind::GyroSpdPp, SpdLayerKind::ReEig], true),
        LnnArch {
            shared: true,
            ..spd_arch(vec![], false)
        },
        LnnArch {
            mass: MassArch::Cholesky { delta: 1e-6 },
            ..spd_arch(vec![], false)
        },
    ];
    for (i, arch) in archs.iter().enumerate() {
        let (m, p) = build(arch, 3, 10 + i as u64);
        let q = array![0.3, -0.7, 1.2];
        let dq = array![0.9, 0.2, -1.1];
        let (_, c, g) = terms_values(&m, &p, &row2(q.as_slice().unwrap()), &row2(dq.as_slice().unwrap()));
        let rep = compare(c.as_slice().unwrap(), &coriolis_fd(&m, &p, &q, &dq));
        assert!(rep.passes(1e-5), "arch {i}: coriolis {rep:?}");
        let pot = |x: &[f64]| m.energies(&p, &row2(x), &Array2::zeros((1, 3))).unwrap().1;
        let rep = crate::diffengine::fd_check(pot, q.as_slice().unwrap(), &g);
        assert!(rep.passes(1e-5), "arch {i}: gravity {rep:?}");
    }
}

#[test]
fn linear_potential_has_constant_gravity() {
    let arch = LnnArch {
        hidden: vec![],
        ..LnnArch::default()
    };
    let (m, p) = build(&arch, 2, 3);
    let EnergyNets::Separate { potential, .. } = &m.nets else { unreachable!() };
    let w = p.get(potential.weights[0]).matrix().clone();
    for q in [[0.0, 0.0], [3.0, -1.0]] {
        let (_, _, g) = terms_values(&m, &p, &row2(&q), &Array2::zeros((1, 2)));
        assert!((&g - &w).iter().all(|x| x.abs() < 1e-15));
    }
}

#[test]
fn dynamics_satisfy_the_equations_of_motion() {
    for arch in [spd_arch(vec![SpdLayerKind::GyroAi], true), LnnArch { mass: MassArch::Cholesky { delta: 1e-6 }, ..spd_arch(vec![], false) }] {
        let (m, p) = build(&arch, 3, 4);
        let q = array![[0.1, 0.5, -0.3], [1.0, -1.0, 0.2]];
        let dq = array![[0.4, -0.2, 0.9], [0.0, 0.3, -0.5]];
        let tau = array![[1.0, 0.0, -2.0], [0.5, 0.5, 0.5]];
        let a = m.accel_values(&p, &q, &dq, &tau).unwrap();
        let (mm, c, g) = terms_values(&m, &p, &q, &dq);
        for r in 0..2 {
            let mr = mm.row(r).to_owned().into_shape_with_order((3, 3)).unwrap();
            let resid = mr.dot(&a.row(r)) + c.row(r) + g.row(r) - tau.row(r);
            assert!(resid.iter().all(|x| x.abs() < 1e-10), "{resid}");
        }
        // static equilibrium: τ = g with q̇ = 0
        let zero = Array2::zeros((2, 3));
        let (_, _, g0) = terms_values(&m, &p, &q, &zero);
        let a0 = m.accel_values(&p, &q, &zero, &g0).unwrap();
        assert!(a0.iter().all(|x| x.abs() < 1e-12));
    }
}

#[test]
fn mass_is_positive_definite_for_random_inputs() {
    let (m, p) = build(&spd_arch(vec![SpdLayerKind::GyroSpdPp, SpdLayerKind::ReEig], true), 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = Array2::from_shape_fn((200, 4), |_| rand::Rng::random_range(&mut rng, -5.0..5.0));
    let mm = m.mass_values(&p, &q).unwrap();
    for r in 0..200 {
        let a = mm.row(r).to_owned().into_shape_with_order((4, 4)).unwrap();
        assert!(crate::numerics::is_spd(&a));
    }
}

struct Zero(usize);
impl Dynamics for Zero {
    fn dim(&self) -> usize {
        self.0
    }
    fn accel(&self, q: &Array2<f64>, _: &Array2<f64>, _: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros(q.dim()))
    }
}

struct Oscillator(f64);
impl Dynamics for Oscillator {
    fn dim(&self) -> usize {
        1
    }
    fn accel(&self, q: &Array2<f64>, _: &Array2<f64>, tau: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(tau - &(q * (self.0 * self.0)))
    }
}

#[test]
fn zero_dynamics_move_linearly() {
    let s = State {
        q: array![1.0, -1.0],
        dq: array![0.5, 2.0],
        ddq: None,
        tau: None,
    };
    for scheme in [Scheme::Euler, Scheme::Rk4] {
        let tr = integrate(&Zero(2), &s, None, 10, 0.1, scheme).unwrap();
        assert_eq!(tr.len(), 11);
        assert!((tr.q[[10, 0]] - 1.5).abs() < 1e-14 && (tr.q[[10, 1]] - 1.0).abs() < 1e-14);
        assert_eq!(tr.dq.row(10), s.dq);
    }
}

#[test]
fn harmonic_oscillator_against_closed_form() {
    let w = 2.0;
    let s = State {
        q: array![1.0],
        dq: array![0.0],
        ddq: None,
        tau: None,
    };
    let err = |scheme| {
        let tr = integrate(&Oscillator(w), &s, None, 1000, 1e-3, scheme).unwrap();
        (0..=1000)
            .map(|k| {
                let t = k as f64 * 1e-3;
                (tr.q[[k, 0]] - (w * t).cos()).abs().max((tr.dq[[k, 0]] + w * (w * t).sin()).abs())
            })
            .fold(0.0, f64::max)
    };
    let (e_rk4, e_euler) = (err(Scheme::Rk4), err(Scheme::Euler));
    assert!(e_rk4 < 1e-8, "{e_rk4}");
    assert!(e_euler < 1e-2, "{e_euler}");
}

#[test]
fn forced_integration_uses_given_forces() {
    let s = State {
        q: array![0.0],
        dq: array![0.0],
        ddq: None,
        tau: None,
    };
    let taus = Array2::from_elem((4, 1), 2.0);
    let tr = integrate(&Oscillator(0.0), &s, Some(&taus), 4, 0.5, Scheme::Euler).unwrap();
    assert_eq!(tr.tau.column(0).to_vec(), vec![2.0, 2.0, 2.0, 2.0, 0.0]);
    assert_eq!(tr.dq[[4, 0]], 4.0);
}

#[test]
fn rollout_reports_divergence_step() {
    struct Blowup;
    impl Dynamics for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn accel(&self, q: &Array2<f64>, _: &Array2<f64>, _: &Array2<f64>) -> Result<Array2<f64>> {
            Ok(q.mapv(|x| x * 1e200))
        }
    }
    let s = State {
        q: array![1e200],
        dq: array![0.0],
        ddq: None,
        tau: None,
    };
    let e = integrate(&Blowup, &s, None, 5, 1.0, Scheme::Euler).unwrap_err();
    assert!(matches!(e, crate::Error::Divergence(ref m) if m.contains("step 1")), "{e}");
}

/// Data whose accelerations and Euler steps come from the model itself.
fn self_consistent(m: &LagrangianModel, p: &ProductPoint, h: usize) -> (Samples, Windows) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = m.n;
    let mut trajs = Vec::new();
    for _ in 0..3 {
        let q0 = Array2::from_shape_fn((1, n), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let dq0 = Array2::from_shape_fn((1, n), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let tau = Array2::from_shape_fn((1, n), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let r = rollout(&Learned { model: m, params: p }, q0, dq0, 12, 1e-2, Scheme::Euler, |_, _, _| Ok(tau.clone())).unwrap();
        let cat = |v: &[Array2<f64>]| ndarray::concatenate(ndarray::Axis(0), &v.iter().map(|a| a.view()).collect::<Vec<_>>()).unwrap();
        trajs.push(Trajectory::new(1e-2, cat(&r.q), cat(&r.dq), cat(&r.ddq), cat(&r.tau)).unwrap());
    }
    (Samples::from_trajectories(&trajs).unwrap(), Windows::tiled(&trajs, h).unwrap())
}

#[test]
fn losses_vanish_for_a_perfect_model() {
    let (m, p) = build(&spd_arch(vec![SpdLayerKind::GyroAi], false), 2, 8);
    let (samples, windows) = self_consistent(&m, &p, 4);
    let tape = Tape::inference();
    let b = Bound::new(&tape, &p);
    let acc = lnn_acc_loss(&tape, &b, &p, &m, &samples, 0.0).unwrap();
    assert!(acc.report.total < 1e-24, "{:?}", acc.report);
    let ms = lnn_multistep_loss(&tape, &b, &p, &m, &windows, 1, 0.0).unwrap();
    assert!(ms.report.total < 1e-24, "{:?}", ms.report);
    assert_eq!(ms.report.names, vec!["vel", "diverged", "reg"]);
}

#[test]
fn regularizer_adds_lambda_times_squared_norm() {
    let (m, p) = build(&spd_arch(vec![], false), 2, 9);
    let (samples, _) = self_consistent(&m, &p, 1);
    let noisy = Samples {
        ddq: samples.ddq.mapv(|x| x + 0.1),
        ..samples
    };
    let tape = Tape::inference();
    let b = Bound::new(&tape, &p);
    let l0 = lnn_acc_loss(&tape, &b, &p, &m, &noisy, 0.0).unwrap().report.total;
    let l1 = lnn_acc_loss(&tape, &b, &p, &m, &noisy, 1e-3).unwrap().report.total;
    let sq: f64 = p
        .components
        .iter()
        .filter_map(|c| match &c.point {
            Point::Euclidean(x) => Some(x.iter().map(|v| v * v).sum::<f64>()),
            _ => None,
        })
        .sum();
    assert!(((l1 - l0) - 1e-3 * sq).abs() < 1e-12 * l1.max(1.0));
}

#[test]
fn single_step_window_is_one_euler_velocity_step() {
    let (m, p) = build(&spd_arch(vec![], false), 2, 11);
    let (_, windows) = self_consistent(&m, &p, 1);
    let w = Windows {
        dq: vec![windows.dq[0].clone(), windows.dq[1].mapv(|x| x * 0.9)],
        ..windows
    };
    let tape = Tape::inference();
    let b = Bound::new(&tape, &p);
    let got = lnn_multistep_loss(&tape, &b, &p, &m, &w, 1, 0.0).unwrap().report.values[0];
    let a = m.accel_values(&p, &w.q[0], &w.dq[0], &w.tau[0]).unwrap();
    let pred = &w.dq[0] + &(a * w.dt);
    let want = (&pred - &w.dq[1]).mapv(|x| x * x).sum() / w.len() as f64;
    assert!((got - want).abs() < 1e-14 * want.max(1.0));
}

#[test]
fn loss_gradients_match_finite_differences() {
    let arch = spd_arch(vec![SpdLayerKind::GyroAi, SpdLayerKind::GyroSpdPp, SpdLayerKind::ReEig], true);
    let (m, p) = build(&arch, 2, 12);
    let (samples, windows) = self_consistent(&m, &p, 3);
    let (m2, p2) = build(&arch, 2, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let acc = |x: &ProductPoint| -> Result<(f64, Option<crate::manifolds::ProductTangent>)> {
        let tape = Tape::new();
        let b = Bound::new(&tape, x);
        let out = lnn_acc_loss(&tape, &b, x, &m2, &samples, 1e-3)?;
        let g = gradient(&tape, &b, x, out.loss)?;
        Ok((out.report.total, Some(g)))
    };
    let (_, g) = acc(&p2).unwrap();
    let rep = riemannian_grad_check(&p2, &g.unwrap(), |x| Ok(acc(x)?.0), 6, &mut rng).unwrap();
    assert!(rep.passes(1e-5), "acc {rep:?}");
    let ms = |x: &ProductPoint| -> Result<(f64, crate::manifolds::ProductTangent)> {
        let tape = Tape::new();
        let b = Bound::new(&tape, x);
        let out = lnn_multistep_loss(&tape, &b, x, &m2, &windows, 2, 1e-3)?;
        let g = gradient(&tape, &b, x, out.loss)?;
        Ok((out.report.total, g))
    };
    let (_, g) = ms(&p2).unwrap();
    let rep = riemannian_grad_check(&p2, &g, |x| Ok(ms(x)?.0), 6, &mut rng).unwrap();
    assert!(rep.passes(1e-5), "multistep {rep:?}");
    let _ = (m, p);
}

struct Exploding;
impl RowLoss for Exploding {
    fn names(&self) -> Vec<&'static str> {
        vec!["a", "b"]
    }
    fn rows(&self) -> usize {
        4
    }
    fn per_row<'t>(&self, b: &Bound<'t>, rows: &[usize]) -> Result<Vec<Var<'t>>> {
        let theta = b.mat(ParamId(0));
        let t = b.tape();
        let x = Array2::from_shape_fn((rows.len(), 1), |(r, _)| if rows[r] == 2 { f64::NAN } else { rows[r] as f64 });
        let v = t.constant(x).mul(theta).square();
        Ok(vec![v, v.scale(2.0)])
    }
}

#[test]
fn diverged_rows_are_clamped_without_gradient() {
    let mut p = ProductPoint::new();
    p.push("theta", crate::manifolds::ParamGroup::Lnn, Point::Euclidean(array![[0.5]]));
    let tape = Tape::new();
    let b = Bound::new(&tape, &p);
    let mut out = LossBuilder::new(&tape);
    out.push_rows(&b, &p, &Exploding).unwrap();
    let out = out.finish();
    assert_eq!(out.report.diverged, 1);
    // rows 0, 1, 3: θ²(0 + 1 + 9) = 2.5, mean over 4 rows
    assert!((out.report.values[0] - 2.5 / 4.0).abs() < 1e-15);
    assert_eq!(out.report.get("diverged"), Some(DIVERGENCE_CLAMP / 4.0));
    let g = gradient(&tape, &b, &p, out.loss).unwrap();
    assert!(g.components[0].is_finite());
    let sum: f64 = out.report.values.iter().fold(None, |a: Option<f64>, &x| Some(a.map_or(x, |a| a + x))).unwrap();
    assert_eq!(sum.to_bits(), out.report.total.to_bits());
    assert_eq!(out.report.total.to_bits(), out.loss.item().to_bits());
}

#[test]
fn model_round_trips_through_json() {
    let (m, p) = build(&spd_arch(vec![SpdLayerKind::GyroAi, SpdLayerKind::ReEig], true), 3, 15);
    let s = serde_json::to_string(&(&m, &p)).unwrap();
    let (m2, p2): (LagrangianModel, ProductPoint) = serde_json::from_str(&s).unwrap();
    assert_eq!(m, m2);
    assert_eq!(p, p2);
}
