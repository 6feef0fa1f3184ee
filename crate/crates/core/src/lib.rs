//! Cointegration rank estimation for high-dimensional vector error correction
//! models.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`data_prep`] turns a panel of levels into lag pairs, computes the
//!    least-squares pre-estimate of the cointegration matrix, rotates the
//!    lagged levels by the orthogonal factor of its QR decomposition and
//!    standardizes them.
//! 2. [`em_solver`] fits each column of the rotated coefficient matrix under a
//!    spike-and-slab lasso prior with an EM loop whose M-step is an exact
//!    weighted lasso solved by coordinate descent.
//! 3. [`rank_search`] raises the spike penalty along a ladder (globally, or
//!    per column at random) and reads the rank off the number of nonzero
//!    columns once it stabilizes.
//! 4. [`portfolio`] maps the sparse estimate back to the cointegration matrix
//!    and turns its rows into L1-normalized long-short portfolios.
//!
//! [`simulation`] reproduces the Jordan-block VAR(1) experiments and
//! [`stationarity`] provides the ADF screening used by both the simulations
//! and the empirical pipeline.

pub mod cli;
pub mod data_prep;
pub mod em_solver;
pub mod error;
pub mod io;
pub mod linalg;
pub mod par;
pub mod portfolio;
pub mod quadrature;
pub mod rank_search;
pub mod rng;
pub mod simulation;
pub mod ssl_core;
pub mod stationarity;

pub use data_prep::{DecomposedSystem, LagPair, SeriesPanel};
pub use em_solver::ColumnState;
pub use error::{Error, Result};
pub use par::Execution;
pub use rank_search::{EnsembleResult, LambdaUnits, RankRun, SslConfig, Termination};
