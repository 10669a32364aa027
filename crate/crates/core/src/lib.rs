//! Construction of compactly supported steady states of the gravitational
//! Vlasov-Poisson system, Hamiltonian perturbations of them, and numerical
//! checks of the functional inequalities governing their local uniqueness.

pub mod cloud;
pub mod error;
pub mod functionals;
pub mod gravity;
pub mod hamiltonian_fields;
pub mod inequality_lab;
pub mod interp;
pub mod linalg;
pub mod ode;
pub mod quad;
pub mod radial_steady;
pub mod rearrangement;
pub mod scalar;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::{Phase, Real};

pub type PolytropeSpec64 = radial_steady::PolytropeSpec<f64>;
pub type SteadyState64 = radial_steady::SteadyState<f64>;
