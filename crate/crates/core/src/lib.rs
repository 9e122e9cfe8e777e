//! Numerical laboratory for small nonlinear bound states of the cubic
//! Schrödinger equation with a potential in two space dimensions,
//!
//! ```text
//! i ∂t u = (-Δ + V) u + γ |u|² u,   x ∈ [-L, L)² (periodic),
//! ```
//!
//! together with the center-manifold decomposition of solutions, the
//! linearized propagator around the manifold, and measurement of the
//! dispersive decay rates of the radiation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod grid;
pub mod io;
mod linalg;
pub mod manifold;
pub mod operator;
pub mod propagators;
pub mod spectral;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::{ComplexField, FieldTag, GridSpec, WeightExponent};
pub use operator::{DiscreteSpectrum, Potential};
