//! Ground-truth mechanical systems and dataset files.

mod chain;
mod controller;
mod coupled;
mod dataset;
mod format;

pub use chain::{
    chain_accel, chain_energy, chain_inverse, chain_terms, double_pendulum_dynamics, mass_matrix, Chain, ChainConfig, ChainTerms, Link, LinkShape,
    GRAVITY,
};
pub use controller::{sine_tracking_controller, SineReference, SineTracker, KD, KP};
pub use coupled::{coupled16_expand, coupled_positions, expand_rows};
pub use dataset::{generate_dataset, Dataset, DatasetHeader, DatasetSpec, Mode, FORMAT_VERSION};
pub use format::{from_binary, from_text, ingest_trajectories, save, to_binary, to_text, Format, Schema, MAGIC};
