//! Numerical laboratory for the doubly mass-critical NLS in three dimensions,
//!
//! `i u_t + Δu + |u|^{4/3} u + μ (|x|^{-2} * |u|²) u = 0`,
//!
//! restricted to spherical-harmonic channels on a staggered radial mesh.

pub mod banded;
pub mod dense;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod groundstate;
pub mod hartree;
pub mod linop;
pub mod profile;
pub mod quad;
pub mod scalar;
pub mod special;
pub mod stencil;

pub use error::{Error, Result};
pub use grid::{RadialField, RadialGrid, Stretch};
pub use scalar::Scalar;

pub type C64 = num_complex::Complex64;
/// Real radial samples of one channel.
pub type RealField = RadialField<f64>;
/// Complex radial samples of one channel.
pub type ComplexField = RadialField<C64>;
