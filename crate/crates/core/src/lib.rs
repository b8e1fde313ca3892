//! Lattice simulator for a nonlocal relativistic action principle.

pub mod born;
pub mod checks;
pub mod config;
pub mod dirac;
pub mod eigenbasis;
pub mod error;
pub mod expectations;
pub mod fourpoint;
pub mod functionals;
pub mod grid;
pub mod kernels;
pub mod lbfgs;
pub mod nparticle;
pub mod output;
pub mod solver;
pub mod weight;

pub use error::{Error, Result};
