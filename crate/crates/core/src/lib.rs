//! Numerical toolkit for affine BV energies of grid functions.
//!
//! A field `u` lives on a uniform 2D or 3D grid together with a rasterized
//! domain `Ω`. Its distributional gradient is discretized as a list of vector
//! atoms ([`variation`]), from which the affine energy
//! `E = α_n (∫ Ψ_ξ^{-n} dξ)^{-1/n}` is evaluated on a sphere quadrature
//! ([`energy`]). On top of that sit the weighted functionals and constraint
//! sets ([`functionals`]), the constrained minimizers and SL(n) normalization
//! ([`minimize`], [`sln`]), closed-form reference bodies ([`oracle`]) and the
//! inequality harness ([`verify`]).

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod io;
pub mod minimize;
pub mod oracle;
pub mod sln;
pub mod variation;
pub mod verify;

pub use error::{Error, Result};
