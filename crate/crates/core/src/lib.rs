pub mod dynamics;
pub mod error;
pub mod harness;
pub mod meander;
pub mod measures;
pub mod nonlinearity;
pub mod reflection;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod verification;

pub use dynamics::{Integrator, SimConfig, Trajectory};
pub use error::{Error, Result};
pub use nonlinearity::{NonlinSpec, RegLevel};
pub use rng::{StreamKey, StreamRng};
pub use spectral::{GammaNorm, GridField, SpectralField, Transform};
pub use stats::{EnsembleStats, McEstimate};
