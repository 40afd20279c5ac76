//! Comparative statics for multidimensional assignment models.
//!
//! A technological change `Ȧ` is split into an earnings gradient `v = ∇ẇ`
//! and a labor reallocation `ṙ` with `Ȧ = v + C·ṙ`, where `ṙ f` is
//! divergence free and parallel to the boundary. The split is available in
//! closed form for bilinear technologies ([`bilinear`]) and numerically on
//! grids ([`helmholtz`]).

pub mod bilinear;
pub mod counterfactual;
pub mod error;
pub mod flow;
pub mod grid;
pub mod helmholtz;
pub mod inference;
pub mod linalg;
pub mod oracle;
pub mod scenario;
pub mod validation;

pub use error::{Error, Result};
