//! Numerical laboratory for Camm-type steady states of the gravitational
//! Vlasov-Poisson system.
//!
//! The crate constructs anisotropic steady states of the form
//! `f(x,v) = (Q')^{-1}((E0 - E - gamma*L)_+) L^l` by solving the reduced
//! semilinear Poisson equation, evaluates the energy-Casimir functional
//! machinery (weighted norms, scaling identities, concentration estimates,
//! Euler-Lagrange residuals), and probes nonlinear stability of the
//! constructed states with a spherically symmetric shell-particle simulation.

pub mod casimir;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod phasespace;
pub mod quad;
pub mod radialfield;
pub mod scalinglab;
pub mod steadystate;

pub use error::CammError;
