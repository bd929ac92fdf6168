//! Primal-dual solver and certification suite for first-order kinetic mean
//! field games with local couplings on `T^d x [-v_max, v_max]^d`.

pub mod cli_io;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod transport;

pub use error::{Error, Result};
