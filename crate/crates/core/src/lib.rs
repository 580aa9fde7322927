//! Mixed membership clustering of count data.
//!
//! - [`vb`]: coordinate-ascent variational Bayes for exponential-family mixed
//!   membership models, plus the generative simulator.
//! - [`mixture`]: finite Poisson mixture fitted by EM, with BIC.
//! - [`select`]: model sweeps, Monte Carlo and exact hold-out likelihood.
//! - [`evaluate`]: extent of membership, MAP profile mapping, uncertainty,
//!   cross-tabulation and ternary coordinates.
//! - [`io`] and [`cli`]: dataset files, result documents and the command line;
//!   [`fetch`] converts the 24-hour race workbook.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod expfam;
pub mod fetch;
pub mod io;
pub mod mixture;
pub mod sampling;
pub mod select;
pub mod special;
pub mod vb;

pub use data::CountMatrix;
pub use error::{Error, Result};
pub use expfam::{ConjugateFamily, ConjugatePrior, PoissonGamma};
