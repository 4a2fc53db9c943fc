//! Harmonic chains with bulk noises: exact steady-state covariances,
//! trajectory simulation, hydrodynamic and fluctuating-hydrodynamic
//! descriptions, and the statistics connecting them.

pub mod chain;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod flucthydro;
pub mod hydro;
pub mod linalg;
pub mod stats;
pub mod steady_state;

pub use equilibrium::TemperatureProfile;
pub use chain::{ChainParams, ChainState, Model};
pub use error::{Error, Result};
