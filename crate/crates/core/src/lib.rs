//! Profile-marginal-likelihood priors and the estimators they induce for
//! two-parameter families `(lambda, psi)` admitting a conditional
//! factorization.

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod families;
pub mod model;
pub mod optimize;
pub mod priors;
pub mod quadrature;
pub mod risk;
pub mod special;

pub use error::{Error, Result};
pub use model::{Dataset, Family, FamilyDescriptor, ParamPoint, PsiHat};
