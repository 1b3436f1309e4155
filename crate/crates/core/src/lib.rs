//! Relaxation Runge-Kutta time integration.
//!
//! The crate implements three families of Runge-Kutta schemes together with
//! the relaxation / incremental-direction-technique (IDT) post-processing
//! that restores discrete conservation or dissipation of a convex entropy
//! functional:
//!
//! * explicit RK (SSP2, classic RK4),
//! * additive IMEX pairs (second-order ARK2, third-order ARK3(2)4L[2]SA),
//! * a second-order multirate scheme built from zone-wise SSP2 tableaux on
//!   2:1 graded meshes.
//!
//! After every step the stage ledger is replayed to compute the relaxation
//! parameter `gamma` such that the relaxed update `q_n + gamma * (q_{n+1} -
//! q_n)` matches the entropy change predicted by the stage inner products.
//! Relaxation advances time by `gamma * dt` and keeps the full order of the
//! baseline scheme; IDT advances by `dt` and gives up one order.
//!
//! The spatial testbed is a nodal discontinuous Galerkin discretisation of
//! the 1D periodic Burgers equation on Legendre-Gauss-Lobatto points in
//! split (skew-symmetric) form, with entropy-conservative and local
//! Lax-Friedrichs interface fluxes.

pub mod ark;
pub mod dg;
pub mod error;
pub mod linsolve;
pub mod mesh;
pub mod multirate;
pub mod problems;
pub mod relax;
pub mod tableaux;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
