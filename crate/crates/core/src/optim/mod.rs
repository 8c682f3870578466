//! Riemannian Adam over a [`ProductPoint`] with per-group learning rates.
//!
//! Euclidean factors get the textbook per-coordinate update. Manifold
//! factors keep the first moment as a tangent vector, transported after
//! every step, and a scalar second moment built from the squared tangent
//! norm.

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::{ParamGroup, ParamId, Point, ProductPoint, ProductTangent, Tangent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient norm cap; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> Option<f64> {
    Some(100.0)
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            clip: default_clip(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub ae: f64,
    pub lnn: f64,
}

impl LearningRates {
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Ae => self.ae,
            ParamGroup::Lnn => self.lnn,
        }
    }

    pub fn set(&mut self, g: ParamGroup, lr: f64) {
        match g {
            ParamGroup::Ae => self.ae = lr,
            ParamGroup::Lnn => self.lnn = lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum SecondMoment {
    Coordinates(Array2<f64>),
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slot {
    steps: u64,
    m: Tangent,
    v: SecondMoment,
}

/// Optimizer state; serializable for exact resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiemannianAdam {
    pub config: AdamConfig,
    pub lr: LearningRates,
    slots: Vec<Slot>,
    /// Number of retraction failures recovered by halving the step.
    pub halvings: u64,
}

/// Parameter ids of each group, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroups {
    pub ae: Vec<ParamId>,
    pub lnn: Vec<ParamId>,
}

pub fn param_groups(params: &ProductPoint) -> ParamGroups {
    let mut out = ParamGroups {
        ae: Vec::new(),
        lnn: Vec::new(),
    };
    for (i, c) in params.components.iter().enumerate() {
        match c.group {
            ParamGroup::Ae => out.ae.push(ParamId(i)),
            ParamGroup::Lnn => out.lnn.push(ParamId(i)),
        }
    }
    out
}

const MAX_HALVINGS: usize = 30;

impl RiemannianAdam {
    pub fn new(params: &ProductPoint, config: AdamConfig, lr: LearningRates) -> Self {
        let slots = params
            .components
            .iter()
            .map(|c| Slot {
                steps: 0,
                m: c.point.zero_tangent(),
                v: match &c.point {
                    Point::Euclidean(x) => SecondMoment::Coordinates(Array2::zeros(x.dim())),
                    _ => SecondMoment::Scalar(0.0),
                },
            })
            .collect();
        RiemannianAdam {
            config,
            lr,
            slots,
            halvings: 0,
        }
    }

    /// One update. Components whose group has a zero learning rate are left
    /// untouched, moments included.
    pub fn step(&mut self, params: &ProductPoint, grad: &ProductTangent) -> Result<ProductPoint> {
        if grad.components.len() != params.len() || self.slots.len() != params.len() {
            return Err(Error::dim(format!(
                "optimizer has {} slots, parameters {}, gradient {}",
                self.slots.len(),
                params.len(),
                grad.components.len()
            )));
        }
        if let Some(c) = grad.components.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient for {}", params.components[c].name)));
        }
        let mut scale = 1.0;
        if let Some(clip) = self.config.clip {
            let norm = params.inner(grad, grad)?.max(0.0).sqrt();
            if norm > clip {
                scale = clip / norm;
            }
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let mut out = params.clone();
        for (i, (c, g)) in params.components.iter().zip(&grad.components).enumerate() {
            let lr = self.lr.get(c.group);
            if lr == 0.0 {
                continue;
            }
            let g = if scale == 1.0 { g.clone() } else { g.scale(scale) };
            let slot = &mut self.slots[i];
            slot.steps += 1;
            let t = slot.steps as i32;
            let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            match (&c.point, &g, &mut slot.m, &mut slot.v) {
                (Point::Euclidean(x), Tangent::Euclidean(g), Tangent::Euclidean(m), SecondMoment::Coordinates(v)) => {
                    let mut x = x.clone();
                    ndarray::Zip::from(&mut x).and(m).and(v).and(g).for_each(|x, m, v, &g| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *x -= lr * mh / (vh.sqrt() + eps);
                    });
                    out.components[i].point = Point::Euclidean(x);
                }
                (point, g, m, SecondMoment::Scalar(v)) => {
                    let g2 = point.inner(g, g)?;
                    *m = m.lincomb(beta1, g, 1.0 - beta1)?;
                    *v = beta2 * *v + (1.0 - beta2) * g2;
                    let dir = m.scale(1.0 / (bc1 * ((*v / bc2).sqrt() + eps)));
                    let mut step = lr;
                    let mut tries = 0;
                    let next = loop {
                        match point.retract(&dir.scale(-step)) {
                            Ok(p) => break p,
                            Err(e) if e.is_numerical() && tries < MAX_HALVINGS => {
                                warn!("retraction of {} failed ({e}); halving the step", c.name);
                                self.halvings += 1;
                                step *= 0.5;
                                tries += 1;
                            }
                            Err(e) => return Err(e),
                        }
                    };
                    *m = point.transport(&next, m)?;
                    out.components[i].point = next;
                }
                _ => return Err(Error::dim(format!("optimizer state does not match parameter {}", c.name))),
            }
        }
        Ok(out)
    }
}
