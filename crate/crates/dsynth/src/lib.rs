//! Estimand-targeted debiasing for synthetic tabular data.
//!
//! Generators fitted to small datasets carry estimation error that standard
//! analyses of their synthetic output silently ignore: point estimates drift,
//! standard errors shrink slower than root-n, and confidence intervals stop
//! covering. This crate post-processes synthetic data toward a chosen analysis
//! (a population mean, a partialling-out regression coefficient, or a two-arm
//! risk difference) by shifting generator output so the plug-in bias of that
//! analysis vanishes, and reports standard errors that account for both the
//! original and the synthetic sampling step.
//!
//! The pieces:
//!
//! * [`table`]: schema-typed tabular data (continuous, binary, ordinal,
//!   categorical), CSV and schema-file I/O in [`io`].
//! * [`dgp`]: the bundled ground-truth process used by the simulation studies.
//! * [`generator`]: three pluggable generators (sequential parametric,
//!   kernel-smoothed bootstrap with deliberately slow convergence, Gaussian
//!   copula) plus the shift wrappers and rejection-based conditional sampling.
//! * [`estimator`] and [`inference`]: influence-curve estimators, classical and
//!   influence-curve standard errors, the `sqrt(1 + m/n)` correction.
//! * [`debias`]: the shift calibration itself.
//! * [`study`]: the seeded Monte Carlo harness (coverage, bias, empirical SE,
//!   power-law convergence fits, type-1 error) and [`quality`] diagnostics.
//!
//! The `dsynth` command-line tool in this workspace drives the same library;
//! the book under `book/` walks through the method and the file formats.

pub mod config;
pub mod debias;
pub mod dgp;
pub mod error;
pub mod estimator;
pub mod generator;
pub mod inference;
pub mod io;
pub mod quality;
pub mod rng;
pub mod study;
pub mod table;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    //! Keeps the book's code blocks compiling and passing: each chapter is
    //! included as a doc-test module, so `cargo test --doc` runs the guide.
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-model.md")]
    mod data_model {}
    #[doc = include_str!("../../../book/src/generators.md")]
    mod generators {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/debiasing.md")]
    mod debiasing {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
