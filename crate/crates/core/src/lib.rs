//! Non-Euclidean joint and individual variation explained (NEUJIVE).
//!
//! Landmark shapes or direction data are mapped to the unit hypersphere,
//! flattened into Euclidean scores by Principal Nested Spheres, and split into
//! joint, individual and residual parts by AJIVE. Joint components can be
//! pulled back to the sphere for interpretation.

pub mod error;
pub mod linalg;
pub(crate) mod serde_mat;
pub mod sphere;
pub mod preshape;
pub mod pns;
pub mod tangent;
pub mod ajive;
pub mod pipeline;
pub mod inference;
pub mod simulate;
pub mod diagnostics;
pub mod io;

pub use error::{Error, Result};
