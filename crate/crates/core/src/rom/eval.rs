//! Windowed rollout evaluation: every `h` steps the true state is taken as
//! a new initial condition and the model predicts the next `h` steps.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::model::{LatentDynamics, RolnnModel};
use crate::error::Result;
use crate::lagrangian::{rollout, Dynamics, LagrangianModel, Learned, Scheme, Trajectory, Windows};
use crate::manifolds::ProductPoint;

pub enum Predictor<'a> {
    Full { model: &'a LagrangianModel, params: &'a ProductPoint },
    Reduced { model: &'a RolnnModel, params: &'a ProductPoint },
}

/// Squared errors per window, averaged over the `h` predicted steps.
/// Diverged windows hold `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowErrors {
    pub h: usize,
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub latent_pos: Vec<f64>,
    pub latent_vel: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

pub fn summarize(v: &[f64]) -> Summary {
    if v.is_empty() {
        return Summary {
            mean: f64::NAN,
            median: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    let median = if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) };
    Summary { mean, median, std }
}

fn row_sq(a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    (a - b).map_axis(Axis(1), |r| r.iter().map(|x| x * x).sum())
        .to_vec()
}

impl Predictor<'_> {
    fn encode(&self, q: &Array2<f64>, dq: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        match self {
            Predictor::Full { .. } => (q.clone(), dq.clone()),
            Predictor::Reduced { model, params } => model.encode_values(params, q, dq),
        }
    }

    fn decode(&self, q: &Array2<f64>, dq: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        match self {
            Predictor::Full { .. } => (q.clone(), dq.clone()),
            Predictor::Reduced { model, params } => model.decode_values(params, q, dq),
        }
    }

    fn dynamics(&self) -> Box<dyn Dynamics + '_> {
        match self {
            Predictor::Full { model, params } => Box::new(Learned { model, params }),
            Predictor::Reduced { model, params } => Box::new(LatentDynamics { model, params }),
        }
    }

    /// Errors of each window in `w`, or an error if the batch rollout fails.
    fn batch(&self, w: &Windows, scheme: Scheme) -> Result<[Vec<f64>; 4]> {
        let h = w.horizon();
        let (zq, zdq) = self.encode(&w.q[0], &w.dq[0]);
        let f = self.dynamics();
        let r = rollout(f.as_ref(), zq, zdq, h, w.dt, scheme, |k, _, _| Ok(w.tau[k].clone()))?;
        let mut acc: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; w.len()]);
        for j in 1..=h {
            let (q, dq) = self.decode(&r.q[j], &r.dq[j]);
            let (tq, tdq) = self.encode(&w.q[j], &w.dq[j]);
            let errs = [row_sq(&q, &w.q[j]), row_sq(&dq, &w.dq[j]), row_sq(&r.q[j], &tq), row_sq(&r.dq[j], &tdq)];
            for (a, e) in acc.iter_mut().zip(errs) {
                for (x, y) in a.iter_mut().zip(e) {
                    *x += y / h as f64;
                }
            }
        }
        Ok(acc)
    }
}

/// Re-initializes from the true state every `h` steps and records the
/// prediction errors of each window.
pub fn rollout_eval(pred: &Predictor<'_>, trajs: &[Trajectory], h: usize, scheme: Scheme) -> Result<WindowErrors> {
    let w = Windows::tiled(trajs, h)?;
    let cols = match pred.batch(&w, scheme) {
        Ok(c) => c,
        Err(e) if e.is_numerical() => {
            let mut cols: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(w.len()));
            for i in 0..w.len() {
                let one = pred.batch(&w.select(&[i]), scheme).unwrap_or_else(|_| std::array::from_fn(|_| vec![f64::INFINITY]));
                for (c, v) in cols.iter_mut().zip(one) {
                    c.push(v[0]);
                }
            }
            cols
        }
        Err(e) => return Err(e),
    };
    let [pos, vel, latent_pos, latent_vel] = cols;
    Ok(WindowErrors {
        h,
        pos,
        vel,
        latent_pos,
        latent_vel,
    })
}
