//! Joint training losses of the reduced-order model.

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::RolnnModel;
use crate::diffengine::{Bound, Tape, Var};
use crate::error::Result;
use crate::lagrangian::{push_regularizer, LossBuilder, LossOutput, RowLoss, Samples, Windows, DIVERGENCE_CLAMP};
use crate::manifolds::ProductPoint;
use crate::networks::AeWeights;

/// Which loss terms take part; inactive terms are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Active {
    All,
    AeOnly,
    LnnOnly,
}

impl Active {
    fn ae(self) -> bool {
        self != Active::LnnOnly
    }
    fn lnn(self) -> bool {
        self != Active::AeOnly
    }
}

/// Weights of the non-data terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomLossWeights {
    /// `γ` on the squared norm of the Euclidean latent-network parameters.
    pub gamma: f64,
    /// Weight of the biorthogonality penalty (overparametrized layers only).
    pub biorth_penalty: f64,
}

fn zeros<'t>(t: &'t Tape, rows: usize) -> Var<'t> {
    t.constant(Array2::zeros((rows, 1)))
}

/// Sums `h` consecutive blocks of `k` rows of a column into one `k x 1`
/// column.
fn fold_blocks<'t>(col: Var<'t>, h: usize, k: usize) -> Var<'t> {
    col.reshape(h, k).sum_rows().t()
}

struct AccRows<'a> {
    model: &'a RolnnModel,
    data: &'a Samples,
    active: Active,
}

impl RowLoss for AccRows<'_> {
    fn names(&self) -> Vec<&'static str> {
        vec!["ae_q", "ae_dq", "ae_ddq", "lnn_d", "lnn_n"]
    }

    fn rows(&self) -> usize {
        self.data.len()
    }

    fn per_row<'t>(&self, b: &Bound<'t>, rows: &[usize]) -> Result<Vec<Var<'t>>> {
        let t = b.tape();
        let s = self.data.select(rows);
        let k = rows.len();
        let (q, dq, ddq, tau) = (t.constant(s.q), t.constant(s.dq), t.constant(s.ddq), t.constant(s.tau));
        let r = self.model.reduce(b, q, dq, Some(ddq));
        let zddq = r.ddq.expect("second-order jet");
        let mut out = Vec::with_capacity(5);
        if self.active.ae() {
            let l = self.model.lift(b, r.q, r.dq, Some(zddq));
            out.push(l.q.sub(q).row_sq_norm());
            out.push(l.dq.sub(dq).row_sq_norm());
            out.push(l.ddq.expect("second-order jet").sub(ddq).row_sq_norm());
        } else {
            out.extend([zeros(t, k), zeros(t, k), zeros(t, k)]);
        }
        if self.active.lnn() {
            let f = self.model.latent_accel(b, r.q, r.dq, tau)?;
            out.push(f.sub(zddq).row_sq_norm());
            let lp = self.model.lift(b, r.q, r.dq, Some(f));
            out.push(lp.ddq.expect("second-order jet").sub(ddq).row_sq_norm());
        } else {
            out.extend([zeros(t, k), zeros(t, k)]);
        }
        Ok(out)
    }
}

struct OdeRows<'a> {
    model: &'a RolnnModel,
    data: &'a Windows,
    substeps: usize,
    active: Active,
}

impl RowLoss for OdeRows<'_> {
    fn names(&self) -> Vec<&'static str> {
        vec!["ae_q", "ae_dq", "lnn_d", "lnn_n"]
    }

    fn rows(&self) -> usize {
        self.data.len()
    }

    fn per_row<'t>(&self, b: &Bound<'t>, rows: &[usize]) -> Result<Vec<Var<'t>>> {
        let t = b.tape();
        let w = self.data.select(rows);
        let (h, k) = (w.horizon(), rows.len());
        let stack = |v: &[Array2<f64>]| {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            t.constant(ndarray::concatenate(ndarray::Axis(0), &views).expect("uniform blocks"))
        };
        // encoded observations at steps 0..=h, step-major
        let (q_all, dq_all) = (stack(&w.q), stack(&w.dq));
        let r = self.model.reduce(b, q_all, dq_all, None);
        let later = |v: Var<'t>| v.slice_rows(k, (h + 1) * k);
        let inv_h = 1.0 / h as f64;
        let mut out = Vec::with_capacity(4);
        if self.active.ae() {
            let l = self.model.lift(b, later(r.q), later(r.dq), None);
            out.push(fold_blocks(l.q.sub(later(q_all)).row_sq_norm(), h, k).scale(inv_h));
            out.push(fold_blocks(l.dq.sub(later(dq_all)).row_sq_norm(), h, k).scale(inv_h));
        } else {
            out.extend([zeros(t, k), zeros(t, k)]);
        }
        if self.active.lnn() {
            let dt = w.dt / self.substeps as f64;
            let mut zq = r.q.slice_rows(0, k);
            let mut zdq = r.dq.slice_rows(0, k);
            let (mut pq, mut pdq) = (Vec::with_capacity(h), Vec::with_capacity(h));
            for j in 0..h {
                let tau = t.constant(w.tau[j].clone());
                for _ in 0..self.substeps {
                    let a = self.model.latent_accel(b, zq, zdq, tau)?;
                    zq = zq.add(zdq.scale(dt));
                    zdq = zdq.add(a.scale(dt));
                }
                pq.push(zq);
                pdq.push(zdq);
            }
            let (pq, pdq) = (Var::concat_rows(&pq), Var::concat_rows(&pdq));
            out.push(fold_blocks(pdq.sub(later(r.dq)).row_sq_norm(), h, k).scale(inv_h));
            let l = self.model.lift(b, pq, pdq, None);
            out.push(fold_blocks(l.dq.sub(later(dq_all)).row_sq_norm(), h, k).scale(inv_h));
        } else {
            out.extend([zeros(t, k), zeros(t, k)]);
        }
        Ok(out)
    }
}

/// `Σ_l ‖Φe‖² + ‖Φd‖² + ‖ΦeᵀΦd − I‖² ‖(ΦeᵀΦd)⁻¹‖²` over overparametrized
/// layers. A singular product contributes [`DIVERGENCE_CLAMP`] without
/// gradient.
pub fn overparam_reg_loss<'t>(b: &Bound<'t>, model: &RolnnModel) -> Option<Var<'t>> {
    let t = b.tape();
    let mut acc: Option<Var<'t>> = None;
    for (l, layer) in model.ae.layers.iter().enumerate() {
        if !matches!(layer.weights, AeWeights::Overparam { .. }) {
            continue;
        }
        let (phi_d, phi_e) = model.ae.weights(b, l);
        let k = layer.n_in;
        let a = phi_e.t().matmul(phi_d);
        let eye = t.constant(Array2::eye(k));
        let mut term = phi_e.square().sum().add(phi_d.square().sum());
        match a.reshape(1, k * k).binv(k) {
            Ok(inv) => term = term.add(a.sub(eye).square().sum().mul(inv.square().sum())),
            Err(e) => {
                warn!("biorthogonality penalty of layer {l}: {e}");
                term = term.add(t.scalar(DIVERGENCE_CLAMP));
            }
        }
        acc = Some(match acc {
            Some(x) => x.add(term),
            None => term,
        });
    }
    acc
}

fn push_tail<'t>(out: &mut LossBuilder<'t>, b: &Bound<'t>, params: &ProductPoint, model: &RolnnModel, w: RomLossWeights, active: Active) {
    if active.lnn() {
        push_regularizer(out, b, params, w.gamma);
    } else {
        out.push_value("reg", 0.0);
    }
    if model.ae.is_overparam() {
        match overparam_reg_loss(b, model) {
            Some(r) if active.ae() => out.push("ae_reg", r.scale(w.biorth_penalty)),
            _ => out.push_value("ae_reg", 0.0),
        }
    }
}

/// Acceleration loss: reconstruction of `(q, q̇, q̈)`, latent acceleration
/// residual and reconstructed acceleration residual.
#[allow(clippy::too_many_arguments)]
pub fn rolnn_acc_loss<'t>(
    tape: &'t Tape,
    b: &Bound<'t>,
    params: &ProductPoint,
    model: &RolnnModel,
    data: &Samples,
    weights: RomLossWeights,
    active: Active,
) -> Result<LossOutput<'t>> {
    let mut out = LossBuilder::new(tape);
    out.push_rows(b, params, &AccRows { model, data, active })?;
    push_tail(&mut out, b, params, model, weights, active);
    Ok(out.finish())
}

/// Multi-step loss: reconstruction of `(q, q̇)` along each window, latent
/// velocity error of an explicit Euler rollout from the encoded initial
/// state, and the error of its decoded velocities.
#[allow(clippy::too_many_arguments)]
pub fn rolnn_ode_loss<'t>(
    tape: &'t Tape,
    b: &Bound<'t>,
    params: &ProductPoint,
    model: &RolnnModel,
    data: &Windows,
    substeps: usize,
    weights: RomLossWeights,
    active: Active,
) -> Result<LossOutput<'t>> {
    let mut out = LossBuilder::new(tape);
    out.push_rows(
        b,
        params,
        &OdeRows {
            model,
            data,
            substeps: substeps.max(1),
            active,
        },
    )?;
    push_tail(&mut out, b, params, model, weights, active);
    Ok(out.finish())
}
