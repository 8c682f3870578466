//! Inverse-dynamics tracking of sinusoidal joint references.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::chain::{chain_inverse, ChainConfig};
use crate::error::{Error, Result};

pub const KP: f64 = 100.0;
pub const KD: f64 = 20.0;

/// `q_ref(t) = A sin(2π f t + φ)` for one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineReference {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl SineReference {
    /// Reference passing through `q0` at `t = 0`, with `φ = arcsin(q0 / A)`.
    pub fn through(amplitude: f64, frequency: f64, q0: f64) -> Result<Self> {
        if !(amplitude > 0.0) || !frequency.is_finite() || !q0.is_finite() || q0.abs() > amplitude {
            return Err(Error::invalid(format!("invalid sine reference: amplitude {amplitude}, frequency {frequency}, q0 {q0}")));
        }
        Ok(SineReference {
            amplitude,
            frequency,
            phase: (q0 / amplitude).asin(),
        })
    }

    /// Position, velocity and acceleration at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        let (s, c) = (w * t + self.phase).sin_cos();
        (self.amplitude * s, self.amplitude * w * c, -self.amplitude * w * w * s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineTracker {
    pub refs: Vec<SineReference>,
    pub kp: f64,
    pub kd: f64,
}

impl SineTracker {
    pub fn new(refs: Vec<SineReference>) -> Self {
        SineTracker { refs, kp: KP, kd: KD }
    }

    pub fn reference(&self, t: f64) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let n = self.refs.len();
        let mut out = (Array1::zeros(n), Array1::zeros(n), Array1::zeros(n));
        for (i, r) in self.refs.iter().enumerate() {
            let (a, b, c) = r.eval(t);
            out.0[i] = a;
            out.1[i] = b;
            out.2[i] = c;
        }
        out
    }

    /// `τ = M(q)(q̈_ref + K_p e + K_d ė) + c(q, q̇) + g(q)`.
    pub fn torque(&self, cfg: &ChainConfig, t: f64, q: &[f64], dq: &[f64]) -> Result<Array1<f64>> {
        if q.len() != self.refs.len() || dq.len() != self.refs.len() || cfg.dof() != self.refs.len() {
            return Err(Error::dim("controller, chain and state sizes differ"));
        }
        let (qr, dqr, ddqr) = self.reference(t);
        let cmd: Vec<f64> = (0..q.len())
            .map(|i| ddqr[i] + self.kp * (qr[i] - q[i]) + self.kd * (dqr[i] - dq[i]))
            .collect();
        Ok(chain_inverse(cfg, q, dq, &cmd))
    }
}

/// Controller torque for a single state.
pub fn sine_tracking_controller(cfg: &ChainConfig, t: f64, q: &[f64], dq: &[f64], tracker: &SineTracker) -> Result<Array1<f64>> {
    tracker.torque(cfg, t, q, dq)
}
