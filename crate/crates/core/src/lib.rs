//! Operator networks that learn Wasserstein geodesics, with a classical
//! optimal transport reference stack for comparison.

pub mod collocation;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod losses;
pub mod operator;
pub mod ot;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
