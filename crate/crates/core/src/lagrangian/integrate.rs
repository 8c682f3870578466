//! Explicit time stepping of second-order systems `q̈ = f(q, q̇, τ)`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::data::{State, Trajectory};
use super::model::LagrangianModel;
use crate::error::{Error, Result};
use crate::manifolds::ProductPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            _ => Err(Error::invalid(format!("unknown integration scheme {s:?}, expected euler or rk4"))),
        }
    }
}

/// Batched forward dynamics; each row is an independent system.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn accel(&self, q: &Array2<f64>, dq: &Array2<f64>, tau: &Array2<f64>) -> Result<Array2<f64>>;
}

/// A learned Lagrangian model with fixed parameters.
pub struct Learned<'a> {
    pub model: &'a LagrangianModel,
    pub params: &'a ProductPoint,
}

impl Dynamics for Learned<'_> {
    fn dim(&self) -> usize {
        self.model.n
    }

    fn accel(&self, q: &Array2<f64>, dq: &Array2<f64>, tau: &Array2<f64>) -> Result<Array2<f64>> {
        self.model.accel_values(self.params, q, dq, tau)
    }
}

/// One step of size `dt` with `τ` held constant. Returns the new state and
/// the acceleration at the old one.
pub fn step(
    f: &dyn Dynamics,
    q: &Array2<f64>,
    dq: &Array2<f64>,
    tau: &Array2<f64>,
    dt: f64,
    scheme: Scheme,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let a1 = f.accel(q, dq, tau)?;
    match scheme {
        Scheme::Euler => Ok((q + &(dq * dt), dq + &(&a1 * dt), a1)),
        Scheme::Rk4 => {
            let h2 = 0.5 * dt;
            let (q2, v2) = (q + &(dq * h2), dq + &(&a1 * h2));
            let a2 = f.accel(&q2, &v2, tau)?;
            let (q3, v3) = (q + &(&v2 * h2), dq + &(&a2 * h2));
            let a3 = f.accel(&q3, &v3, tau)?;
            let (q4, v4) = (q + &(&v3 * dt), dq + &(&a3 * dt));
            let a4 = f.accel(&q4, &v4, tau)?;
            let w = dt / 6.0;
            let qn = q + &((dq + &(&v2 * 2.0) + &(&v3 * 2.0) + &v4) * w);
            let vn = dq + &((&a1 + &(&a2 * 2.0) + &(&a3 * 2.0) + &a4) * w);
            Ok((qn, vn, a1))
        }
    }
}

/// States of a batched rollout, `steps + 1` entries per field.
pub struct Rollout {
    pub q: Vec<Array2<f64>>,
    pub dq: Vec<Array2<f64>>,
    pub ddq: Vec<Array2<f64>>,
    pub tau: Vec<Array2<f64>>,
}

/// Integrates `steps` steps from `(q0, q̇0)`. The force for step `k` is
/// `tau(k, q_k, q̇_k)`, which allows feedback controllers.
pub fn rollout(
    f: &dyn Dynamics,
    q0: Array2<f64>,
    dq0: Array2<f64>,
    steps: usize,
    dt: f64,
    scheme: Scheme,
    mut tau: impl FnMut(usize, &Array2<f64>, &Array2<f64>) -> Result<Array2<f64>>,
) -> Result<Rollout> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let mut out = Rollout {
        q: vec![q0],
        dq: vec![dq0],
        ddq: Vec::with_capacity(steps + 1),
        tau: Vec::with_capacity(steps + 1),
    };
    for k in 0..=steps {
        let (q, dq) = (&out.q[k], &out.dq[k]);
        let t = tau(k, q, dq)?;
        if k == steps {
            let a = f.accel(q, dq, &t)?;
            out.ddq.push(a);
            out.tau.push(t);
            break;
        }
        let (qn, vn, a) = step(f, q, dq, &t, dt, scheme)?;
        if !qn.iter().chain(vn.iter()).all(|x| x.is_finite()) {
            return Err(Error::Divergence(format!("non-finite state after step {}", k + 1)));
        }
        out.ddq.push(a);
        out.tau.push(t);
        out.q.push(qn);
        out.dq.push(vn);
    }
    Ok(out)
}

/// Single-trajectory rollout driven by per-step forces (`steps x n`, or
/// `None` for an unforced system). The final state gets zero force unless
/// a row for it is supplied.
pub fn integrate(
    f: &dyn Dynamics,
    initial: &State,
    taus: Option<&Array2<f64>>,
    steps: usize,
    dt: f64,
    scheme: Scheme,
) -> Result<Trajectory> {
    let n = f.dim();
    if initial.q.len() != n || initial.dq.len() != n {
        return Err(Error::dim(format!("initial state has dimension {}, system has {n}", initial.q.len())));
    }
    if let Some(t) = taus {
        if t.nrows() < steps || t.ncols() != n {
            return Err(Error::dim(format!("forces have shape {:?}, need at least {steps} x {n}", t.dim())));
        }
    }
    let row = |v: &Array1<f64>| v.clone().insert_axis(ndarray::Axis(0));
    let r = rollout(f, row(&initial.q), row(&initial.dq), steps, dt, scheme, |k, _, _| {
        Ok(match taus {
            Some(t) if k < t.nrows() => t.row(k).to_owned().insert_axis(ndarray::Axis(0)),
            _ => Array2::zeros((1, n)),
        })
    })?;
    let stack = |v: &[Array2<f64>]| {
        let views: Vec<_> = v.iter().map(|a| a.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("uniform rows")
    };
    Trajectory::new(dt, stack(&r.q), stack(&r.dq), stack(&r.ddq), stack(&r.tau))
}
