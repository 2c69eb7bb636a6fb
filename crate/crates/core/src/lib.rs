//! Spectral truncation of the dispersive KP-II equation with a one-step
//! normal-form expansion and ensemble moment estimates.

pub mod error;
pub mod lattice;
pub mod multilinear;
pub mod picard;
pub mod dynamics;
pub mod ensemble;
pub mod theory;
pub mod experiments;

pub use error::{KpError, Result};
pub use lattice::{delta, omega, DispersionTable, LatticeBox, SpectralField, WaveVector};
pub use multilinear::OperatorContext;
pub use picard::{phi1, PicardBundle};
