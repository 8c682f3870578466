//! Riemannian primitives: SPD matrices with the affine-invariant metric,
//! biorthogonal pairs, and their product with Euclidean factors.

mod biorth;
mod product;
mod spd;

pub use biorth::{
    bio_embedding_dist, bio_inner, bio_project, bio_retract, bio_transport, BiorthPair, BiorthTangent,
    MAX_RETRACT_COND,
};
pub use product::{AmbientGrad, Component, ParamGroup, ParamId, Point, ProductPoint, ProductTangent, Tangent};
pub use spd::{spd_dist, spd_exp, spd_inner, spd_log, spd_riemannian_grad, spd_transport};
