//! Two-scale finite elements for `-∇·(σ∇u) - k² c u = f` on the unit square
//! with sign-changing `σ` and `c`.
//!
//! The pipeline is: a nested coarse/fine [`mesh`], coefficient profiles in
//! [`coeffs`], Q1 operators in [`assembly`], per-element spectral spaces in
//! [`auxspace`], constraint-energy-minimizing basis functions on oversampled
//! patches in [`msbasis`], and the coarse Galerkin solve with error norms
//! in [`coarse`].

pub mod assembly;
pub mod auxspace;
pub mod coarse;
pub mod coeffs;
pub mod error;
pub mod grid;
pub mod mesh;
pub mod msbasis;
pub mod sparse;

pub use error::{Error, Result};
