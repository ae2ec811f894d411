//! Layered polarized-trace solver for the 2D Helmholtz equation with PML.

pub mod checks;
pub mod dense;
pub mod experiment;
pub mod grid;
pub mod local_solver;
pub mod models;
pub mod oracle;
pub mod partition;
pub mod plr;
pub mod solver;
pub mod trace_system;

pub use num_complex::Complex64 as C64;
