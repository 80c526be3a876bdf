//! Entanglement of Unruh-mode states of fermionic and bosonic fields of arbitrary spin.

pub mod algebra;
pub mod cli;
pub mod entanglement;
pub mod error;
pub mod fock;
pub mod ordering;
pub mod statespec;
pub mod vacuum;

pub use error::{Error, Result};
pub use fock::{BasisLabel, Field, FockVector, HalfInt, ModeIndex, ModeTable, Statistics, Wedge};
