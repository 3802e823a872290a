//! Steady equilibrium densities of a Vlasov-Poisson plasma on the unit disk and
//! H¹-gradient design of an external control potential.
//!
//! The forward problem is the nonlinear Poisson-Boltzmann equation
//! `-ΔU = Φ(U, u)`, `Φ = exp(-(U+u)) / ∫ exp(-(U+u))`, with `U = 0` on the rim.
//! The design problem minimizes `∫ V ρ + α/2 ‖u‖²_{H¹}` over the control `u`.

pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod objective;
pub mod operators;
pub mod optimizer;
pub mod sensitivity;
pub mod workbench;

pub use error::{Error, Result};
pub use grid::{PolarGrid, ScalarField};
