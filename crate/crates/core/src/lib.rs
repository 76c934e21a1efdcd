//! Graph quasi-framelet transforms with generalized p-Laplacian smoothing.
//!
//! The crate is organized bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`graph`] | weighted graphs, normalized Laplacian, homophily, dataset I/O |
//! | [`filters`] | quasi-framelet scaling-function banks and Chebyshev fits |
//! | [`framelet`] | multi-scale transform operators, decomposition and reconstruction |
//! | [`plap`] | p-Laplacian regularizer and the fixed-point message-passing solver |
//! | [`models`] | pL-UFG / per-band pL-UFG / pL-fUFG forward passes and a linear head |
//! | [`pipeline`] | experiment configs, grid runs and CSV/JSON reports behind the `plapf` CLI |

pub mod error;
pub mod filters;
pub mod framelet;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod plap;

pub use error::{Error, Result};
