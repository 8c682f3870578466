//! Loss assembly with per-component bookkeeping, and the two full-order
//! training losses.

use log::warn;
use serde::{Deserialize, Serialize};

use super::data::{Samples, Windows};
use super::model::{euclidean_sq_norm, LagrangianModel};
use crate::diffengine::{Bound, Tape, Var};
use crate::error::Result;
use crate::manifolds::{ParamGroup, ProductPoint};

/// Per-row losses above this value (or non-finite) are treated as
/// diverged: they contribute this constant and no gradient.
pub const DIVERGENCE_CLAMP: f64 = 1e6;

/// Named loss components. `total` is the left-to-right sum of `values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub total: f64,
    /// Rows excluded from the gradient.
    pub diverged: usize,
}

impl LossReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

pub struct LossOutput<'t> {
    pub loss: Var<'t>,
    pub report: LossReport,
}

/// A loss that is a mean over independent rows (samples or windows) of a
/// sum of named per-row terms.
pub trait RowLoss {
    fn names(&self) -> Vec<&'static str>;
    fn rows(&self) -> usize;
    /// One `k x 1` node per component for the selected rows.
    fn per_row<'t>(&self, b: &Bound<'t>, rows: &[usize]) -> Result<Vec<Var<'t>>>;
}

/// Accumulates `1 x 1` components in a fixed order.
pub struct LossBuilder<'t> {
    tape: &'t Tape,
    parts: Vec<(String, Var<'t>)>,
    diverged: usize,
}

impl<'t> LossBuilder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        LossBuilder {
            tape,
            parts: Vec::new(),
            diverged: 0,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, v: Var<'t>) {
        assert_eq!(v.shape(), (1, 1), "loss components are scalars");
        self.parts.push((name.into(), v));
    }

    pub fn push_value(&mut self, name: impl Into<String>, x: f64) {
        let v = self.tape.scalar(x);
        self.push(name, v);
    }

    /// Means of the per-row components of `loss`, with diverged rows
    /// screened out and reported as a `diverged` component.
    pub fn push_rows(&mut self, b: &Bound<'t>, params: &ProductPoint, loss: &impl RowLoss) -> Result<()> {
        let names = loss.names();
        let n = loss.rows();
        let all: Vec<usize> = (0..n).collect();
        let bad_of = |cols: &[Var<'_>]| -> Vec<usize> {
            (0..cols[0].rows())
                .filter(|&r| {
                    let s: f64 = cols.iter().map(|c| c.value()[[r, 0]]).sum();
                    !(s.is_finite() && s <= DIVERGENCE_CLAMP)
                })
                .collect()
        };
        let (cols, good) = match loss.per_row(b, &all) {
            Ok(cols) => {
                let bad = bad_of(&cols);
                if bad.is_empty() {
                    (Some(cols), all)
                } else {
                    (None, all.into_iter().filter(|r| !bad.contains(r)).collect())
                }
            }
            Err(e) if e.is_numerical() => {
                let good: Vec<usize> = all
                    .into_iter()
                    .filter(|&r| {
                        let probe = Tape::inference();
                        let pb = Bound::new(&probe, params);
                        loss.per_row(&pb, &[r]).map(|c| bad_of(&c).is_empty()).unwrap_or(false)
                    })
                    .collect();
                (None, good)
            }
            Err(e) => return Err(e),
        };
        let diverged = n - good.len();
        if diverged > 0 {
            warn!("{diverged} of {n} rows diverged; clamped to {DIVERGENCE_CLAMP:e} without gradient");
        }
        let cols = match cols {
            Some(c) => Some(c),
            None if !good.is_empty() => Some(loss.per_row(b, &good)?),
            None => None,
        };
        let inv = 1.0 / n as f64;
        match cols {
            Some(cols) => {
                for (name, c) in names.iter().zip(cols) {
                    self.push(*name, c.sum().scale(inv));
                }
            }
            None => {
                for name in &names {
                    self.push_value(*name, 0.0);
                }
            }
        }
        self.push_value("diverged", DIVERGENCE_CLAMP * diverged as f64 * inv);
        self.diverged += diverged;
        Ok(())
    }

    pub fn finish(self) -> LossOutput<'t> {
        let mut names = Vec::with_capacity(self.parts.len());
        let mut values = Vec::with_capacity(self.parts.len());
        let mut acc: Option<Var<'t>> = None;
        let mut total = 0.0;
        for (i, (name, v)) in self.parts.into_iter().enumerate() {
            let x = v.item();
            total = if i == 0 { x } else { total + x };
            names.push(name);
            values.push(x);
            acc = Some(match acc {
                Some(a) => a.add(v),
                None => v,
            });
        }
        let loss = acc.unwrap_or_else(|| self.tape.scalar(0.0));
        LossOutput {
            loss,
            report: LossReport {
                names,
                values,
                total,
                diverged: self.diverged,
            },
        }
    }
}

/// `γ Σ‖θ‖²` over the Euclidean parameters of the Lagrangian networks.
pub fn push_regularizer<'t>(out: &mut LossBuilder<'t>, b: &Bound<'t>, params: &ProductPoint, gamma: f64) {
    match euclidean_sq_norm(b, params, ParamGroup::Lnn) {
        Some(r) => out.push("reg", r.scale(gamma)),
        None => out.push_value("reg", 0.0),
    }
}

struct AccRows<'a> {
    model: &'a LagrangianModel,
    data: &'a Samples,
}

impl RowLoss for AccRows<'_> {
    fn names(&self) -> Vec<&'static str> {
        vec!["acc"]
    }

    fn rows(&self) -> usize {
        self.data.len()
    }

    fn per_row<'t>(&self, b: &Bound<'t>, rows: &[usize]) -> Result<Vec<Var<'t>>> {
        let d = self.data.select(rows);
        let t = b.tape();
        let a = self.model.accel(b, t.constant(d.q), t.constant(d.dq), t.constant(d.tau))?;
        Ok(vec![a.sub(t.constant(d.ddq)).row_sq_norm()])
    }
}

struct MultistepRows<'a> {
    model: &'a LagrangianModel,
    data: &'a Windows,
    substeps: usize,
}

impl RowLoss for MultistepRows<'_> {
    fn names(&self) -> Vec<&'static str> {
        vec!["vel"]
    }

    fn rows(&self) -> usize {
        self.data.len()
    }

    fn per_row<'t>(&self, b: &Bound<'t>, rows: &[usize]) -> Result<Vec<Var<'t>>> {
        let w = self.data.select(rows);
        let t = b.tape();
        let h = w.horizon();
        let dt = w.dt / self.substeps as f64;
        let mut q = t.constant(w.q[0].clone());
        let mut dq = t.constant(w.dq[0].clone());
        let mut err: Option<Var<'t>> = None;
        for j in 1..=h {
            let tau = t.constant(w.tau[j - 1].clone());
            for _ in 0..self.substeps {
                let a = self.model.accel(b, q, dq, tau)?;
                q = q.add(dq.scale(dt));
                dq = dq.add(a.scale(dt));
            }
            let e = dq.sub(t.constant(w.dq[j].clone())).row_sq_norm();
            err = Some(match err {
                Some(acc) => acc.add(e),
                None => e,
            });
        }
        Ok(vec![err.expect("h >= 1").scale(1.0 / h as f64)])
    }
}

/// `mean ‖f(q, q̇, τ) − q̈‖² + λ Σ‖θ‖²`.
pub fn lnn_acc_loss<'t>(
    tape: &'t Tape,
    b: &Bound<'t>,
    params: &ProductPoint,
    model: &LagrangianModel,
    data: &Samples,
    lambda: f64,
) -> Result<LossOutput<'t>> {
    let mut out = LossBuilder::new(tape);
    out.push_rows(b, params, &AccRows { model, data })?;
    push_regularizer(&mut out, b, params, lambda);
    Ok(out.finish())
}

/// Velocity error of explicit Euler rollouts over each window, averaged
/// over steps and windows, plus `γ Σ‖θ‖²`.
pub fn lnn_multistep_loss<'t>(
    tape: &'t Tape,
    b: &Bound<'t>,
    params: &ProductPoint,
    model: &LagrangianModel,
    data: &Windows,
    substeps: usize,
    gamma: f64,
) -> Result<LossOutput<'t>> {
    let mut out = LossBuilder::new(tape);
    out.push_rows(
        b,
        params,
        &MultistepRows {
            model,
            data,
            substeps: substeps.max(1),
        },
    )?;
    push_regularizer(&mut out, b, params, gamma);
    Ok(out.finish())
}
