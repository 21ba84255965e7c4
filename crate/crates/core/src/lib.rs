//! Learned decompositions of planar vector fields into a conservative part
//! (the symplectic gradient of a Hamiltonian `H`) and a dissipative part
//! (the ordinary gradient of a Rayleigh-like potential `D`), together with a
//! grid-based Helmholtz decomposition used as a classical baseline.
//!
//! Module map:
//!
//! * [`autodiff`]: scalar reverse-mode engine with double backward.
//! * [`models`]: direct-map, Hamiltonian and dissipative networks.
//! * [`dynamics`]: vector fields built from the potentials and the training loss.
//! * [`datasets`]: spring generation, pendulum/ocean ingestion, splitting.
//! * [`training`]: Adam and the training loop.
//! * [`integrators`]: adaptive Dormand–Prince rollouts.
//! * [`helmgrid`]: nearest-neighbour rasterization plus Gauss–Seidel decomposition.
//! * [`metrics`]: test, trajectory and energy errors.

pub mod autodiff;
pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod helmgrid;
pub mod integrators;
mod linalg;
pub mod metrics;
pub mod models;
pub mod systems;
pub mod training;

pub use error::{Error, ErrorKind, Result};
