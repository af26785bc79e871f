//! Approximate spectral submultiplicativity of matrix groups and semigroups.
//!
//! A unitary group is ε-argument-submultiplicative (ε-ASM) when every
//! eigenvalue `γ` of a product `AB` lies within scaled argument distance `ε`
//! of some product `αβ` of eigenvalues of `A` and `B`. This crate measures the
//! smallest such `ε` for finite closures and sampled infinite families, and
//! builds the extremal examples: tadpole groups, Miller–Moreno generator pairs,
//! the rank-one semigroups `S_r`, and the prime sets `Q(p)`.

pub mod asm;
pub mod circle;
pub mod cli;
pub mod constructions;
pub mod error;
pub mod groups;
pub mod linalg;

pub use error::{Error, Result};
