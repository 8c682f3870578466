//! Network building blocks: fully connected nets, SPD mass heads and the
//! constrained autoencoder.

pub mod ae;
pub mod mlp;
pub mod spdnet;

pub use ae::{random_orthonormal, AeActivation, AeLayer, AeWeights, ConstrainedAe, DecoderTrace};
pub use mlp::{fan_in_uniform, Mlp, MlpTrace};
pub use spdnet::{sym_assemble, sym_assemble_index, sym_extract, tri_count, Basepoint, MassHead, MatJet, SpdLayer, SpdLayerKind};
