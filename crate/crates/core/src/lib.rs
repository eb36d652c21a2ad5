//! Numerical laboratory for reaction-diffusion systems with large diffusion:
//! spectral discretisation, elliptic estimates, semigroup dynamics, attractor
//! sampling and rate studies in the diffusion parameter.

pub mod attractors;
pub mod config;
pub mod dynamics;
pub mod elliptic;
pub mod error;
pub mod nonlinearity;
pub mod rates;
pub mod spectral;

pub use config::Config;
pub use error::{Error, Result};
pub use nonlinearity::Nonlinearity;
pub use spectral::{CosineBasis, DiffusionSpec, DomainSpec, EnergyNorm, GridField, SpectralField};
