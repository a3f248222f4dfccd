//! Hypercube quantum-walk gadgets built from two-body Ising couplings.

pub mod compiler;
pub mod dynamics;
pub mod error;
pub mod gadget;
pub mod perturbation;
pub mod propagate;
pub mod spin_model;
pub mod symmetric;

pub use error::{Error, Result};
