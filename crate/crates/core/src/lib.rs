//! Pseudospectral cubic Klein-Gordon simulation on periodic boxes, with
//! Littlewood-Paley / Besov / Strichartz norms, solution diagnostics and a
//! profile-decomposition toolkit.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod lpbesov;
pub mod profiles;
pub mod random;
pub mod scenarios;
pub mod snapshot;
pub mod solver;
pub mod spectral;
pub mod trajectory;

pub use error::{KgError, Result};
pub use spectral::{Grid, RealField, SpectralField, SpectralState, StateVec};
pub use trajectory::{RunStatus, Trajectory};
