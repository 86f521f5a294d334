//! Optimal control of regime-switching diffusions with relaxed controls
//! that may act on both the continuous state and the switching rates.
//!
//! The pieces: Wasserstein-1 geometry on finitely supported measures
//! ([`measure`]), Skorokhod-style regime switching ([`switching`]),
//! Euler–Maruyama simulation ([`dynamics`]), feedback controls
//! ([`control`]), Monte Carlo costs ([`cost`]), a dynamic-programming value
//! solver ([`solver`]) and brute-force oracles ([`verify`]).

pub mod cli;
pub mod control;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod expr;
pub mod measure;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod switching;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Exec;
