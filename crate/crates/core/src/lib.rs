//! Finite-stage Diophantine approximation sets, their Frostman and Salem-type
//! measures, sparse spectra, projection covers and restriction ratios.

pub mod error;
pub mod exact;
pub mod io;
pub mod lattice;
pub mod measure;
pub mod params;
pub mod projections;
pub mod restriction;
pub mod run;
pub mod spectrum;

pub use error::{LabError, Result};
pub use exact::Rational;
