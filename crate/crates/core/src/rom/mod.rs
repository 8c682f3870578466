//! Reduced-order Lagrangian models: lifted embedding and reduction through
//! a constrained autoencoder, latent dynamics, joint losses and windowed
//! rollout evaluation.

mod eval;
mod loss;
mod model;

pub use eval::{rollout_eval, summarize, Predictor, Summary, WindowErrors};
pub use loss::{overparam_reg_loss, rolnn_acc_loss, rolnn_ode_loss, Active, RomLossWeights};
pub use model::{reduced_terms, LatentDynamics, Lifted, Reduced, RolnnModel};

#[cfg(test)]
mod tests;
