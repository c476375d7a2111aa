//! Hyperbolic scattering in the Newtonian n-body problem, computed in blown-up
//! coordinates at infinity.
//!
//! The crate is layered bottom-up: [`nbody`] (masses, metric, potential),
//! [`blowup`] (coordinates at infinity and the linear model at its equilibria),
//! [`integrator`] (adaptive integration with events), [`chazy`] (asymptotic
//! parameters of hyperbolic orbits), [`kepler`] (closed-form two-body oracle) and
//! [`scattering`] (the scattering map and its structural checks).

pub mod acceptance;
pub mod blowup;
pub mod chazy;
mod dop853;
pub mod error;
pub mod integrator;
pub mod kepler;
pub mod linalg;
pub mod nbody;
pub mod quadrature;
pub mod scattering;
pub mod tolerance;

pub use blowup::{BlowupState, EquilibriumPoint, ManifoldParams, Tangent};
pub use chazy::{ChazyParameters, Direction, SeriesOrder};
pub use error::{Error, Result};
pub use integrator::{Trajectory, VariationalState};
pub use kepler::KeplerOrbit;
pub use nalgebra::{DMatrix, DVector};
pub use nbody::{Configuration, EnergyLevel, MassSystem};
pub use scattering::{OrbitParameter, ScatteringResult};
pub use tolerance::ToleranceSet;
