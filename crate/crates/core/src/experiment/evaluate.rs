//! Test-set metrics of a trained model.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::train::{Checkpoint, Model};
use crate::diffengine::{Bound, Tape};
use crate::error::Result;
use crate::lagrangian::{rollout, Dynamics, LagrangianModel, Learned, Samples, Scheme, Trajectory};
use crate::rom::{rollout_eval, summarize, LatentDynamics, Predictor, WindowErrors};

/// Learned total energy along the model's own rollout from a test initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub trajectory: usize,
    pub dt: f64,
    pub energy: Vec<f64>,
    pub kinetic: Vec<f64>,
}

impl EnergyTrace {
    /// Largest `|E(t) − E(0)|` relative to the largest kinetic energy along
    /// the rollout, which does not depend on the potential's offset. Infinite
    /// if the rollout diverged.
    pub fn relative_drift(&self) -> f64 {
        let e0 = self.energy[0];
        let scale = self.kinetic.iter().fold(0.0f64, |m, &k| m.max(k.abs()));
        let dev = self.energy.iter().map(|e| if e.is_finite() { (e - e0).abs() } else { f64::INFINITY }).fold(0.0, f64::max);
        if scale > 0.0 {
            dev / scale
        } else {
            dev / e0.abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub windows: Vec<WindowErrors>,
    /// Squared acceleration error of every test sample.
    pub acc: Vec<f64>,
    pub energy: Vec<EnergyTrace>,
}

impl Metrics {
    pub fn at(&self, h: usize) -> Option<&WindowErrors> {
        self.windows.iter().find(|w| w.h == h)
    }

    pub fn median_acc(&self) -> f64 {
        summarize(&self.acc).median
    }
}

fn predictor(ck: &Checkpoint) -> Predictor<'_> {
    match &ck.model {
        Model::Lnn(m) => Predictor::Full { model: m, params: &ck.params },
        Model::Rolnn(m) => Predictor::Reduced { model: m, params: &ck.params },
    }
}

/// Predicted accelerations of the full-order state, reconstructed through the
/// latent space for reduced models.
pub fn predict_accel(ck: &Checkpoint, q: &Array2<f64>, dq: &Array2<f64>, tau: &Array2<f64>) -> Result<Array2<f64>> {
    match &ck.model {
        Model::Lnn(m) => m.accel_values(&ck.params, q, dq, tau),
        Model::Rolnn(m) => {
            let tape = Tape::inference();
            let b = Bound::new(&tape, &ck.params);
            let r = m.reduce(&b, tape.constant(q.clone()), tape.constant(dq.clone()), None);
            let a = m.latent_accel(&b, r.q, r.dq, tape.constant(tau.clone()))?;
            let l = m.lift(&b, r.q, r.dq, Some(a));
            Ok((*l.ddq.expect("lift with acceleration").value()).clone())
        }
    }
}

fn acc_errors(ck: &Checkpoint, test: &[Trajectory]) -> Result<Vec<f64>> {
    let s = Samples::from_trajectories(test)?;
    let mut out = Vec::with_capacity(s.len());
    let chunk = 4096;
    for start in (0..s.len()).step_by(chunk) {
        let rows: Vec<usize> = (start..(start + chunk).min(s.len())).collect();
        let part = s.select(&rows);
        let a = match predict_accel(ck, &part.q, &part.dq, &part.tau) {
            Ok(a) => a,
            Err(e) if e.is_numerical() => Array2::from_elem(part.ddq.raw_dim(), f64::INFINITY),
            Err(e) => return Err(e),
        };
        out.extend((&a - &part.ddq).map_axis(Axis(1), |r| r.iter().map(|x| x * x).sum::<f64>()));
    }
    Ok(out)
}

/// Energies along an RK4 rollout driven by the recorded torques.
fn energy_trace(ck: &Checkpoint, t: &Trajectory, index: usize) -> Result<EnergyTrace> {
    let row = |a: &Array2<f64>| a.slice(ndarray::s![0..1, ..]).to_owned();
    let steps = t.len() - 1;
    let tau_at = |k: usize, _: &Array2<f64>, _: &Array2<f64>| Ok(t.tau.slice(ndarray::s![k..k + 1, ..]).to_owned());
    let (f, lnn, q0, dq0): (Box<dyn Dynamics>, &LagrangianModel, _, _) = match &ck.model {
        Model::Lnn(m) => (Box::new(Learned { model: m, params: &ck.params }), m, row(&t.q), row(&t.dq)),
        Model::Rolnn(m) => {
            let (zq, zdq) = m.encode_values(&ck.params, &row(&t.q), &row(&t.dq));
            (Box::new(LatentDynamics { model: m, params: &ck.params }), &m.latent, zq, zdq)
        }
    };
    let (energy, kinetic) = match rollout(f.as_ref(), q0, dq0, steps, t.dt, Scheme::Rk4, tau_at) {
        Ok(r) => r
            .q
            .iter()
            .zip(&r.dq)
            .map(|(q, dq)| match lnn.energies(&ck.params, q, dq) {
                Ok((k, v)) => (k[0] + v[0], k[0]),
                Err(_) => (f64::INFINITY, f64::INFINITY),
            })
            .unzip(),
        Err(_) => (vec![f64::INFINITY; steps + 1], vec![f64::INFINITY; steps + 1]),
    };
    Ok(EnergyTrace {
        trajectory: index,
        dt: t.dt,
        energy,
        kinetic,
    })
}

/// Windowed rollout errors at every horizon, per-sample acceleration errors,
/// and energy traces of up to `energy_trajs` test trajectories.
pub fn evaluate(ck: &Checkpoint, test: &[Trajectory], h_test: &[usize], scheme: Scheme, energy_trajs: usize) -> Result<Metrics> {
    let pred = predictor(ck);
    let windows = h_test.iter().map(|&h| rollout_eval(&pred, test, h, scheme)).collect::<Result<Vec<_>>>()?;
    let acc = acc_errors(ck, test)?;
    let energy = test.iter().take(energy_trajs).enumerate().map(|(i, t)| energy_trace(ck, t, i)).collect::<Result<Vec<_>>>()?;
    Ok(Metrics { windows, acc, energy })
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// One row per window and horizon.
pub fn metrics_csv(m: &Metrics) -> String {
    let mut s = String::from("h,window,pos,vel,latent_pos,latent_vel\n");
    for w in &m.windows {
        for i in 0..w.pos.len() {
            let _ = writeln!(s, "{},{i},{},{},{},{}", w.h, num(w.pos[i]), num(w.vel[i]), num(w.latent_pos[i]), num(w.latent_vel[i]));
        }
    }
    s
}

pub fn summary_csv(m: &Metrics) -> String {
    let mut s = String::from("metric,h,mean,median,std\n");
    let a = summarize(&m.acc);
    let _ = writeln!(s, "acc,0,{},{},{}", num(a.mean), num(a.median), num(a.std));
    for w in &m.windows {
        for (name, v) in [("pos", &w.pos), ("vel", &w.vel), ("latent_pos", &w.latent_pos), ("latent_vel", &w.latent_vel)] {
            let x = summarize(v);
            let _ = writeln!(s, "{name},{},{},{},{}", w.h, num(x.mean), num(x.median), num(x.std));
        }
    }
    for e in &m.energy {
        let d = e.relative_drift();
        let _ = writeln!(s, "energy_drift,{},{},{},{}", e.trajectory, num(d), num(d), num(0.0));
    }
    s
}

pub fn acc_csv(m: &Metrics) -> String {
    let mut s = String::from("sample,acc\n");
    for (i, a) in m.acc.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", num(*a));
    }
    s
}

pub fn energy_csv(m: &Metrics) -> String {
    let mut s = String::from("trajectory,step,t,energy,kinetic\n");
    for e in &m.energy {
        for (k, (v, t)) in e.energy.iter().zip(&e.kinetic).enumerate() {
            let _ = writeln!(s, "{},{k},{},{},{}", e.trajectory, num(k as f64 * e.dt), num(*v), num(*t));
        }
    }
    s
}
