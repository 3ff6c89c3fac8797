//! Numerical workbench for conjugate-operator estimates on relativistic
//! two-particle fiber Hamiltonians.

pub mod conjugate;
pub mod dispersion;
pub mod error;
pub mod grid;
pub mod kato;
pub mod lap;
pub mod linalg;
pub mod mourre;
pub mod quadrature;
pub mod scenario;
pub mod suite;
pub mod twoparticle;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
