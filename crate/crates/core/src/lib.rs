//! Homogeneous open quantum random walks on `Z^d`.
//!
//! The crate covers model definition and validation ([`walkmodel`]), the
//! auxiliary channel and its deformations ([`superops`]), structural
//! analysis of the channel and of the walk ([`structure`]), asymptotic
//! statistics ([`asymptotics`]) and seeded trajectory simulation with an
//! exact path-sum oracle ([`trajectories`]).

pub mod asymptotics;
pub mod error;
pub mod numerics;
pub mod structure;
pub mod superops;
pub mod trajectories;
pub mod walkmodel;

pub use error::{Error, Result};
pub use nalgebra;
pub use numerics::{CMatrix, CVector, Tolerances, C64};
pub use walkmodel::{builtin, Builtin, DensityMatrix, KrausModel, LatticeState, StepSet};
