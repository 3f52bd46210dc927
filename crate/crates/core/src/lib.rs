//! Numerical laboratory for linear cocycles over Lipschitz base dynamics:
//! Lyapunov spectra, Oseledets splittings and filtrations, Lyapunov norms,
//! regular sets, and Hölder bounds for the invariant subspaces.

pub mod cocycle;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod holder;
pub mod linalg;
pub mod lyapunov_norms;
pub mod oseledets;

pub use error::{Error, Result};
