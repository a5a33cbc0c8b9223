//! Shared numerical kernels. Everything here is a pure function of its inputs.

mod eigen;
mod erf;
mod least_squares;
pub(crate) mod matrix;
mod quadrature;
mod roots;

pub use eigen::{jacobi_eigen, spectral_projection, sym_eigen, tridiagonal_eigen, EigenDecomposition, SpectralProjection};
pub use erf::{erf, erf_derivative, erf_unchecked, erfinv};
pub use least_squares::{gauss_newton, solve_least_squares, GaussNewtonReport};
pub use matrix::Matrix;
pub use quadrature::{adaptive_simpson, integrate_tail, QuadratureResult};
pub use roots::{bisect, expand_bracket};
