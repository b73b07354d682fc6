//! Finite-sample Bernstein–von Mises toolkit for covariance matrices.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod functionals;
pub mod io;
pub mod linalg;
pub mod posterior;
pub mod projectors;
pub mod seed;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{EigenspaceSelection, SpdMatrix, SpectralModel};
