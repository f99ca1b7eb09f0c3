//! Scattering of non-periodic incident waves by locally perturbed periodic
//! sound-soft surfaces.
//!
//! The solver Bloch-transforms the problem in the horizontal variable,
//! discretizes each quasi-periodic cell problem with P1 finite elements and a
//! Fourier-series transparent condition on the roof, and integrates over the
//! quasi-momentum along a contour that flattens the square-root singularities
//! at Wood anomalies.

pub mod contour;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod harness;
pub mod incident;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod special_functions;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
