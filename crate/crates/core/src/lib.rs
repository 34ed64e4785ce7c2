//! Parameter-dependent Schur triangularisation of matrix symbols and a cascade
//! solver for first-order hyperbolic pseudodifferential systems with
//! upper-triangular principal part on the one-dimensional torus.

pub mod cascade;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod grid;
pub mod par;
pub mod pdo;
pub mod propagators;
pub mod scenario;
pub mod schur;
pub mod symbol;

pub use error::{Error, Result, Witness};
pub use grid::{GridSpec, Torus};
pub use par::Exec;
pub use pdo::{Field, StateVector};
pub use symbol::{MatrixSymbol, ScalarSymbol, VectorSymbol, C64};
