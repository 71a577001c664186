//! Metastatic colony density under angiogenic control.
//!
//! Tumors are structured by size `x` and angiogenic capacity `θ`. They move
//! along the characteristics of a growth field, are born on the boundary of
//! the square `(1, b)²` at a rate proportional to the total emission of the
//! colony, and the population grows like `e^{λ0 t}` toward a stable profile.
//!
//! The crate solves everything on a characteristic lattice in (entry time,
//! entry point) coordinates, where transport is an exact shift and the only
//! quadrature lives in the renewal (Volterra) coupling.

pub mod analysis;
pub mod boundary;
pub mod checks;
pub mod config;
pub mod error;
pub mod growth;
pub mod io;
pub mod lattice;
pub mod ode;
pub mod quadrature;
pub mod renewal;
pub mod spectral;

pub use boundary::{BoundaryPoint, EmissionProfile, Side};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use growth::{FlowResult, GrowthParams, PhasePoint};
pub use lattice::{BirthRate, CharacteristicLattice};
pub use renewal::{DensityField, SourceTerm};
pub use spectral::SpectralSolution;
