//! Quantized tensor-train solvers for multi-asset Black-Scholes pricing.

pub mod assembly;
pub mod build;
pub mod cross;
pub mod engine;
pub mod error;
pub mod oracles;
pub mod solve;
pub mod tt;

pub use error::{QttError, Result};
pub use tt::{QttOperator, QttVector, TruncationPolicy};
