//! Heavy-tailed density estimation with semi-parametric marginals and a
//! noise-conditioned coupling-flow copula.

pub mod cli;
pub mod copula_flow;
pub mod data;
pub mod error;
pub mod eval;
pub mod marginal;
pub mod model;
mod model_file;
pub mod nn;
mod optim;
pub mod univariate;

pub use error::{Error, Result};
pub use model::{fit, CometModel, Mode, TrainConfig};
