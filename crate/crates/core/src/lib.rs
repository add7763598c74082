//! Numerical machinery for stochastic evolution equations with monotone,
//! non-Lipschitz coefficients: evolution-triple algebra on a 1-D grid,
//! drift-implicit Galerkin stepping, resolvent and Yosida maps, backward
//! equations by least-squares Monte Carlo, functional and Volterra solvers,
//! and Bihari-type bounds.

pub mod analysis;
pub mod bsde;
pub mod error;
pub mod functional;
pub mod galerkin;
pub mod noise;
pub mod operators;
pub mod process;
pub mod resolvent;
pub mod triple;

pub use error::{Error, Result};
pub use noise::NoisePath;
pub use process::{NoiseContext, Process, TimeProfile};
pub use triple::{DiscreteTriple, Flavor, GridFunction, Space};
