//! Constrained PARAFAC2 decomposition of ragged third-order tensors via
//! AO-ADMM, with ALS and flexible-coupling baselines, simulation generators,
//! and recovery metrics.

pub mod admm;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod prox;
pub mod simgen;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{CouplingVariables, Parafac2Model, RaggedTensor};
