use ndarray::{array, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffengine::{compare, gradient, riemannian_grad_check, Bound, Jet, Tape};
use crate::error::Result;
use crate::lagrangian::{lnn_multistep_loss, rollout, LnnArch, MassArch, Samples, Scheme, Trajectory, Windows};
use crate::manifolds::{BiorthPair, Point, ProductPoint};
use crate::networks::{AeActivation, AeWeights, SpdLayerKind};

fn smooth() -> AeActivation {
    AeActivation::smooth(std::f64::consts::PI / 8.0).unwrap()
}

fn arch() -> LnnArch {
    LnnArch {
        hidden: vec![8, 8],
        shared: false,
        mass: MassArch::Spd {
            learned_basepoint: true,
            layers: vec![SpdLayerKind::GyroAi, SpdLayerKind::ReEig],
            eps: 1e-4,
        },
    }
}

fn build(sizes: &[usize], act: AeActivation, overparam: bool, seed: u64) -> (RolnnModel, ProductPoint) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ProductPoint::new();
    let m = RolnnModel::new(&mut p, sizes, act, overparam, &arch(), &mut rng).unwrap();
    // move the biases away from zero so that the activations are exercised
    for l in &m.ae.layers {
        let b = p.get(l.bias).matrix().mapv(|_| rng.random_range(-0.3..0.3));
        p.components[l.bias.0].point = Point::Euclidean(b);
    }
    (m, p)
}

fn rand_rows(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-s..s))
}

/// Full-order trajectories that the model reproduces exactly: latent Euler
/// rollouts of the unforced latent dynamics, lifted through the decoder.
fn consistent_trajs(m: &RolnnModel, p: &ProductPoint, count: usize, steps: usize, dt: f64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let d = m.latent_dim();
    let dynamics = LatentDynamics { model: m, params: p };
    let n = m.full_dim();
    let zq0 = rand_rows(&mut rng, count, d, 0.8);
    let zdq0 = rand_rows(&mut rng, count, d, 0.8);
    let r = rollout(&dynamics, zq0, zdq0, steps, dt, Scheme::Euler, |_, q, _| Ok(Array2::zeros((q.nrows(), n)))).unwrap();
    let tape = Tape::inference();
    let b = Bound::new(&tape, p);
    let lifted: Vec<_> = (0..=steps)
        .map(|k| {
            let l = m.lift(&b, tape.constant(r.q[k].clone()), tape.constant(r.dq[k].clone()), Some(tape.constant(r.ddq[k].clone())));
            ((*l.q.value()).clone(), (*l.dq.value()).clone(), (*l.ddq.unwrap().value()).clone())
        })
        .collect();
    (0..count)
        .map(|i| {
            let pick = |f: fn(&(Array2<f64>, Array2<f64>, Array2<f64>)) -> &Array2<f64>| {
                let rows: Vec<_> = lifted.iter().map(|x| f(x).row(i)).collect();
                ndarray::stack(Axis(0), &rows).unwrap()
            };
            Trajectory::new(dt, pick(|x| &x.0), pick(|x| &x.1), pick(|x| &x.2), Array2::zeros((steps + 1, n))).unwrap()
        })
        .collect()
}

#[test]
fn lift_and_reduce_are_mutually_inverse() {
    let (m, p) = build(&[2, 4, 6], smooth(), false, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let zq = rand_rows(&mut rng, 5, 2, 1.5);
    let zdq = rand_rows(&mut rng, 5, 2, 1.5);
    let (q, dq) = m.decode_values(&p, &zq, &zdq);
    let (zq2, zdq2) = m.encode_values(&p, &q, &dq);
    assert!((&zq2 - &zq).iter().all(|x| x.abs() < 1e-8));
    assert!((&zdq2 - &zdq).iter().all(|x| x.abs() < 1e-8));
    let (_, dq0) = m.decode_values(&p, &zq, &Array2::zeros((5, 2)));
    assert!(dq0.iter().all(|&x| x == 0.0));
    let (_, zdq0) = m.encode_values(&p, &q, &Array2::zeros((5, 6)));
    assert!(zdq0.iter().all(|&x| x == 0.0));
}

#[test]
fn lifted_velocity_matches_finite_differences() {
    let (m, p) = build(&[2, 4, 6], smooth(), false, 3);
    let z = array![0.3, -0.8];
    let v = array![1.2, 0.4];
    let (_, dq) = m.decode_values(&p, &z.clone().insert_axis(Axis(0)), &v.clone().insert_axis(Axis(0)));
    let curve = |t: f64| m.decode_values(&p, &(&z + &(&v * t)).insert_axis(Axis(0)), &Array2::zeros((1, 2))).0;
    let h = 1e-6;
    let fd = (curve(h) - curve(-h)) / (2.0 * h);
    let rep = compare(dq.as_slice().unwrap(), fd.as_slice().unwrap());
    assert!(rep.passes(1e-5), "{rep:?}");
}

fn second_order<'a>(m: &'a RolnnModel, p: &'a ProductPoint, decode: bool) -> impl Fn(&Array1<f64>, &Array1<f64>, &Array1<f64>) -> Array1<f64> + 'a {
    move |x, v, a| {
        let tape = Tape::inference();
        let b = Bound::new(&tape, p);
        let row = |u: &Array1<f64>| tape.constant(u.clone().insert_axis(Axis(0)));
        let out = if decode {
            m.lift(&b, row(x), row(v), Some(row(a))).ddq.unwrap()
        } else {
            m.reduce(&b, row(x), row(v), Some(row(a))).ddq.unwrap()
        };
        out.value().row(0).to_owned()
    }
}

#[test]
fn reduced_and_reconstructed_accelerations_match_finite_differences() {
    let (m, p) = build(&[2, 3, 5], smooth(), false, 4);
    let h = 1e-4;
    // reduction: derivative of the reduced velocity along a full-order curve
    let (x, v, a) = (array![0.4, -0.3, 0.9, 0.1, -0.6], array![0.5, 1.0, -0.7, 0.2, 0.3], array![-1.0, 0.4, 0.3, 0.8, -0.2]);
    let curve = |t: f64| (&x + &(&v * t) + &(&a * (0.5 * t * t)), &v + &(&a * t));
    let reduced_vel = |t: f64| {
        let (q, dq) = curve(t);
        m.encode_values(&p, &q.insert_axis(Axis(0)), &dq.insert_axis(Axis(0))).1.row(0).to_owned()
    };
    let fd = (reduced_vel(h) - reduced_vel(-h)) / (2.0 * h);
    let an = second_order(&m, &p, false)(&x, &v, &a);
    let rep = compare(an.as_slice().unwrap(), fd.as_slice().unwrap());
    assert!(rep.passes(1e-4), "reduce {rep:?}");
    // reconstruction: second derivative of t ↦ φ(q̌(t))
    let (z, zv, za) = (array![0.2, -0.5], array![0.9, 0.6], array![-0.4, 1.1]);
    let pos = |t: f64| {
        let q = &z + &(&zv * t) + &(&za * (0.5 * t * t));
        m.decode_values(&p, &q.insert_axis(Axis(0)), &Array2::zeros((1, 2))).0.row(0).to_owned()
    };
    let fd = (pos(h) - &(pos(0.0) * 2.0) + pos(-h)) / (h * h);
    let an = second_order(&m, &p, true)(&z, &zv, &za);
    let rep = compare(an.as_slice().unwrap(), fd.as_slice().unwrap());
    assert!(rep.passes(1e-4), "lift {rep:?}");
    // zero latent velocity: the curvature term drops out
    let jac = m.decoder_jacobian(&p, z.as_slice().unwrap());
    let still = second_order(&m, &p, true)(&z, &Array1::zeros(2), &za);
    assert!((&still - &jac.dot(&za)).iter().all(|e| e.abs() < 1e-12));
}

#[test]
fn linear_decoder_has_no_curvature_and_closed_form_pullback() {
    let (m, p) = build(&[2, 5], AeActivation::Identity, false, 5);
    let (phi, _) = m.ae.weight_values(&p, 0);
    let z = array![0.3, 0.7];
    let acc = second_order(&m, &p, true)(&z, &array![1.0, -2.0], &Array1::zeros(2));
    assert!(acc.iter().all(|x| x.abs() < 1e-14));
    let jac = m.decoder_jacobian(&p, z.as_slice().unwrap());
    assert!((&jac - &phi).iter().all(|x| x.abs() < 1e-15));
    let (mr, gr) = reduced_terms(&jac, &Array2::eye(5), &[0.0; 5]).unwrap();
    assert!((&mr - &phi.t().dot(&phi)).iter().all(|x| x.abs() < 1e-14));
    assert_eq!(gr, vec![0.0, 0.0]);
}

#[test]
fn pullback_mass_is_positive_definite_and_rank_checked() {
    let (m, p) = build(&[3, 5, 7], smooth(), false, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = rand_rows(&mut rng, 7, 7, 1.0);
        let full = a.dot(&a.t()) + Array2::<f64>::eye(7) * 0.1;
        let (mr, _) = reduced_terms(&m.decoder_jacobian(&p, &z), &full, &[0.0; 7]).unwrap();
        assert!(crate::numerics::is_spd(&mr));
    }
    let mut bad = Array2::<f64>::zeros((4, 2));
    bad[[0, 0]] = 1.0;
    assert!(reduced_terms(&bad, &Array2::eye(4), &[0.0; 4]).is_err());
}

#[test]
fn force_reduction_is_linear_and_transposed() {
    let (m, p) = build(&[2, 4, 6], smooth(), false, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = rand_rows(&mut rng, 1, 2, 1.0);
    let (t1, t2) = (rand_rows(&mut rng, 1, 6, 1.0), rand_rows(&mut rng, 1, 6, 1.0));
    let tape = Tape::inference();
    let b = Bound::new(&tape, &p);
    let red = |t: &Array2<f64>| (*m.reduce_force(&b, tape.constant(z.clone()), tape.constant(t.clone())).value()).clone();
    let lhs = red(&(&t1 * 2.0 - &t2 * 0.5));
    let rhs = red(&t1) * 2.0 - red(&t2) * 0.5;
    assert!((&lhs - &rhs).iter().all(|x| x.abs() < 1e-13));
    let jac = m.decoder_jacobian(&p, z.as_slice().unwrap());
    assert!((&red(&t1) - &t1.dot(&jac)).iter().all(|x| x.abs() < 1e-13));
}

#[test]
fn latent_dynamics_agree_with_the_lagrangian_module() {
    let (m, p) = build(&[2, 4], smooth(), false, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (zq, zdq) = (rand_rows(&mut rng, 3, 2, 1.0), rand_rows(&mut rng, 3, 2, 1.0));
    let tau = rand_rows(&mut rng, 3, 4, 1.0);
    let tape = Tape::inference();
    let b = Bound::new(&tape, &p);
    let (zqv, zdqv) = (tape.constant(zq.clone()), tape.constant(zdq.clone()));
    let ours = m.latent_accel(&b, zqv, zdqv, tape.constant(tau.clone())).unwrap();
    let tr = m.reduce_force(&b, zqv, tape.constant(tau));
    let theirs = m.latent.accel_values(&p, &zq, &zdq, &tr.value()).unwrap();
    assert_eq!(*ours.value(), theirs);
}

fn no_reg() -> RomLossWeights {
    RomLossWeights {
        gamma: 0.0,
        biorth_penalty: 0.0,
    }
}

#[test]
fn losses_vanish_on_model_generated_data() {
    let (m, p) = build(&[2, 4, 6], smooth(), false, 12);
    let trajs = consistent_trajs(&m, &p, 4, 9, 1e-2);
    let samples = Samples::from_trajectories(&trajs).unwrap();
    let tape = Tape::inference();
    let b = Bound::new(&tape, &p);
    let acc = rolnn_acc_loss(&tape, &b, &p, &m, &samples, no_reg(), Active::All).unwrap();
    assert_eq!(acc.report.names, vec!["ae_q", "ae_dq", "ae_ddq", "lnn_d", "lnn_n", "diverged", "reg"]);
    assert!(acc.report.total < 1e-18, "{:?}", acc.report);
    for h in [1, 3] {
        let w = Windows::tiled(&trajs, h).unwrap();
        let ode = rolnn_ode_loss(&tape, &b, &p, &m, &w, 1, no_reg(), Active::All).unwrap();
        assert_eq!(ode.report.names, vec!["ae_q", "ae_dq", "lnn_d", "lnn_n", "diverged", "reg"]);
        assert!(ode.report.total < 1e-18, "h={h}: {:?}", ode.report);
    }
}

#[test]
fn totals_are_exact_sums_of_components() {
    let (m, p) = build(&[2, 4, 6], smooth(), true, 13);
    let (m2, p2) = build(&[2, 4, 6], smooth(), true, 14);
    let trajs = consistent_trajs(&m2, &p2, 3, 8, 1e-2);
    let w = Windows::tiled(&trajs, 4).unwrap();
    let tape = Tape::new();
    let b = Bound::new(&tape, &p);
    let weights = RomLossWeights {
        gamma: 1e-3,
        biorth_penalty: 1e-2,
    };
    let out = rolnn_ode_loss(&tape, &b, &p, &m, &w, 1, weights, Active::All).unwrap();
    let r = &out.report;
    assert_eq!(r.names.last().unwrap(), "ae_reg");
    let sum = r.values[1..].iter().fold(r.values[0], |a, x| a + x);
    assert_eq!(sum.to_bits(), r.total.to_bits());
    assert_eq!(out.loss.item().to_bits(), r.total.to_bits());
    assert!(r.values.iter().all(|&x| x >= 0.0));
}

#[test]
fn identity_autoencoder_reduces_to_the_full_order_loss() {
    let (mut m, mut p) = build(&[3, 3], AeActivation::Identity, false, 15);
    let AeWeights::Biorth(id) = m.ae.layers[0].weights else { unreachable!() };
    p.components[id.0].point = Point::Biorth(BiorthPair::from_orthonormal(Array2::eye(3)).unwrap());
    let bias = m.ae.layers[0].bias;
    p.components[bias.0].point = Point::Euclidean(Array2::zeros((1, 3)));
    let (m2, p2) = build(&[3, 3], AeActivation::Identity, false, 16);
    let trajs = consistent_trajs(&m2, &p2, 3, 8, 1e-2);
    let w = Windows::tiled(&trajs, 4).unwrap();
    let tape = Tape::inference();
    let b = Bound::new(&tape, &p);
    let rom = rolnn_ode_loss(&tape, &b, &p, &m, &w, 1, no_reg(), Active::All).unwrap().report;
    let fom = lnn_multistep_loss(&tape, &b, &p, &m.latent, &w, 1, 0.0).unwrap().report;
    assert_eq!(rom.get("ae_q"), Some(0.0));
    assert_eq!(rom.get("ae_dq"), Some(0.0));
    let vel = fom.get("vel").unwrap();
    assert!((rom.get("lnn_d").unwrap() - vel).abs() < 1e-14 * vel.max(1.0));
    assert!((rom.get("lnn_n").unwrap() - vel).abs() < 1e-14 * vel.max(1.0));
    m.ae.act = AeActivation::Identity;
}

#[test]
fn biorthogonality_penalty() {
    let (m, p) = build(&[2, 4, 6], smooth(), true, 17);
    let tape = Tape::inference();
    let value = |p: &ProductPoint| {
        let b = Bound::new(&tape, p);
        overparam_reg_loss(&b, &m).unwrap().item()
    };
    // initialized with Φd = Φe orthonormal: only the norm terms remain
    let norms: f64 = p.components.iter().filter(|c| c.name.contains("phi")).map(|c| c.point.matrix().iter().map(|x| x * x).sum::<f64>()).sum();
    assert!((value(&p) - norms).abs() < 1e-12);
    // drifting along Φd ← (1 + s)Φd increases the penalty
    let mut last = value(&p);
    for s in [0.05, 0.1, 0.2, 0.4] {
        let mut q = p.clone();
        for c in q.components.iter_mut().filter(|c| c.name.ends_with("phi_d")) {
            c.point = Point::Euclidean(c.point.matrix() * (1.0 + s));
        }
        let v = value(&q);
        assert!(v > last);
        last = v;
    }
}

fn grad_check(overparam: bool, ode: bool, seed: u64) {
    let (m, p) = build(&[2, 3, 5], smooth(), overparam, seed);
    let (m2, p2) = build(&[2, 3, 5], smooth(), overparam, seed + 100);
    let trajs = consistent_trajs(&m2, &p2, 2, 6, 1e-2);
    let samples = Samples::from_trajectories(&trajs).unwrap();
    let w = Windows::tiled(&trajs, 3).unwrap();
    let weights = RomLossWeights {
        gamma: 1e-3,
        biorth_penalty: 1e-2,
    };
    let eval = |x: &ProductPoint| -> Result<(f64, crate::manifolds::ProductTangent)> {
        let tape = Tape::new();
        let b = Bound::new(&tape, x);
        let out = if ode {
            rolnn_ode_loss(&tape, &b, x, &m, &w, 2, weights, Active::All)?
        } else {
            rolnn_acc_loss(&tape, &b, x, &m, &samples, weights, Active::All)?
        };
        Ok((out.report.total, gradient(&tape, &b, x, out.loss)?))
    };
    let (_, g) = eval(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rep = riemannian_grad_check(&p, &g, |x| Ok(eval(x)?.0), 6, &mut rng).unwrap();
    assert!(rep.passes(1e-5), "overparam={overparam} ode={ode}: {rep:?}");
}

#[test]
fn acceleration_loss_gradient_matches_finite_differences() {
    grad_check(false, false, 20);
}

#[test]
fn multistep_loss_gradient_matches_finite_differences() {
    grad_check(false, true, 21);
}

#[test]
fn overparametrized_loss_gradient_matches_finite_differences() {
    grad_check(true, true, 22);
}

#[test]
fn inactive_terms_are_zero_and_carry_no_gradient() {
    let (m, p) = build(&[2, 4, 6], smooth(), false, 23);
    let (m2, p2) = build(&[2, 4, 6], smooth(), false, 24);
    let w = Windows::tiled(&consistent_trajs(&m2, &p2, 2, 6, 1e-2), 3).unwrap();
    let weights = RomLossWeights {
        gamma: 1e-3,
        biorth_penalty: 0.0,
    };
    for (active, zero) in [(Active::AeOnly, ["lnn_d", "lnn_n", "reg"]), (Active::LnnOnly, ["ae_q", "ae_dq", "ae_q"])] {
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let out = rolnn_ode_loss(&tape, &b, &p, &m, &w, 1, weights, active).unwrap();
        for z in zero {
            assert_eq!(out.report.get(z), Some(0.0), "{active:?} {z}");
        }
        let g = gradient(&tape, &b, &p, out.loss).unwrap();
        if active == Active::AeOnly {
            for id in m.latent.param_ids() {
                assert_eq!(g.components[id.0].frob_sq(), 0.0);
            }
        }
    }
}

#[test]
fn rollout_evaluation_of_a_perfect_model_is_exact() {
    let (m, p) = build(&[2, 4, 6], smooth(), false, 25);
    let trajs = consistent_trajs(&m, &p, 3, 10, 1e-2);
    let pred = Predictor::Reduced { model: &m, params: &p };
    for h in [1, 5] {
        let e = rollout_eval(&pred, &trajs, h, Scheme::Euler).unwrap();
        assert_eq!(e.pos.len(), 3 * (10 / h));
        for v in [&e.pos, &e.vel, &e.latent_pos, &e.latent_vel] {
            assert!(v.iter().all(|&x| x < 1e-18), "h={h}: {v:?}");
        }
    }
}

#[test]
fn single_step_evaluation_is_the_one_step_error() {
    let (m, p) = build(&[2, 4, 6], smooth(), false, 26);
    let (m2, p2) = build(&[2, 4, 6], smooth(), false, 27);
    let trajs = consistent_trajs(&m2, &p2, 1, 4, 1e-2);
    let e = rollout_eval(&Predictor::Reduced { model: &m, params: &p }, &trajs, 1, Scheme::Euler).unwrap();
    let t = &trajs[0];
    for k in 0..4 {
        let (zq, zdq) = m.encode_values(&p, &t.q.slice(ndarray::s![k..k + 1, ..]).to_owned(), &t.dq.slice(ndarray::s![k..k + 1, ..]).to_owned());
        let a = LatentDynamics { model: &m, params: &p }.accel_values(&zq, &zdq);
        let (q1, dq1) = m.decode_values(&p, &(&zq + &(&zdq * t.dt)), &(&zdq + &(&a * t.dt)));
        let want = (&q1.row(0) - &t.q.row(k + 1)).mapv(|x| x * x).sum();
        assert!((e.pos[k] - want).abs() < 1e-15 * want.max(1e-10), "{} vs {want}", e.pos[k]);
        let wantv = (&dq1.row(0) - &t.dq.row(k + 1)).mapv(|x| x * x).sum();
        assert!((e.vel[k] - wantv).abs() < 1e-15 * wantv.max(1e-10));
    }
}

trait AccelValues {
    fn accel_values(&self, q: &Array2<f64>, dq: &Array2<f64>) -> Array2<f64>;
}
impl AccelValues for LatentDynamics<'_> {
    fn accel_values(&self, q: &Array2<f64>, dq: &Array2<f64>) -> Array2<f64> {
        use crate::lagrangian::Dynamics;
        self.accel(q, dq, &Array2::zeros((q.nrows(), self.model.full_dim()))).unwrap()
    }
}

#[test]
fn reduced_energy_at_rest_is_the_potential() {
    let (m, p) = build(&[2, 4], smooth(), false, 28);
    let z = array![[0.4, -0.1]];
    let e = m.reduced_energy(&p, &z, &Array2::zeros((1, 2))).unwrap();
    let (_, v) = m.latent.energies(&p, &z, &Array2::zeros((1, 2))).unwrap();
    assert_eq!(e, v);
}

#[test]
fn jet_of_decoder_matches_lift() {
    let (m, p) = build(&[2, 4], smooth(), false, 29);
    let tape = Tape::inference();
    let b = Bound::new(&tape, &p);
    let z = tape.constant(array![[0.1, 0.2]]);
    let v = tape.constant(array![[1.0, 0.0]]);
    let (j, _) = m.ae.decode_jet(&b, &Jet::new(z, vec![v], None));
    assert_eq!(*j.d1[0].value(), *m.lift(&b, z, v, None).dq.value());
}
