//! Lagrangian mechanics with learned energies: equations of motion,
//! integrators and full-order training losses.

mod data;
mod integrate;
mod loss;
mod model;

pub use data::{Samples, State, Trajectory, Windows};
pub use integrate::{integrate, rollout, step, Dynamics, Learned, Rollout, Scheme};
pub use loss::{lnn_acc_loss, lnn_multistep_loss, push_regularizer, LossBuilder, LossOutput, LossReport, RowLoss, DIVERGENCE_CLAMP};
pub use model::{coriolis, euclidean_sq_norm, kinetic_energy, EnergyNets, LagrangianModel, LnnArch, MassArch, Terms};

#[cfg(test)]
mod tests;
