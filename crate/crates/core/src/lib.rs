pub mod diffengine;
pub mod error;
pub mod lagrangian;
pub mod manifolds;
pub mod networks;
pub mod numerics;
pub mod optim;
pub mod experiment;
pub mod rom;
pub mod systems;

pub use error::{Error, Result};
