//! Sampling families and the string-id registry used by configs.

pub mod binomial;
pub mod edm;
pub mod location_scale;
pub mod strata;
pub mod uniform;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Dataset, Family};

pub use binomial::{binomial_conditional_loglik, TwoBinomial};
pub use edm::{Edm, EdmKind};
pub use location_scale::{median_marginal_logpdf, Base, LocationScale};
pub use strata::{Strata, StrataSpec};
pub use uniform::{uniform_family_accessors, Uniform};

/// Family ids accepted by [`lookup`]; `exppower:<r>` and `strata:<inner>`
/// take an argument.
pub const FAMILY_IDS: &[&str] = &[
    "normal",
    "gamma",
    "invgauss",
    "two-binomial",
    "laplace",
    "exppower:<r>",
    "locscale:normal",
    "uniform",
    "strata:<inner>",
];

/// A family resolved from its id.
#[derive(Debug, Clone)]
pub enum Registered {
    Single(Arc<dyn Family>),
    Strata(Strata),
}

impl Registered {
    pub fn single(&self) -> Result<&Arc<dyn Family>> {
        match self {
            Registered::Single(f) => Ok(f),
            Registered::Strata(s) => Err(Error::Config(format!(
                "`{}` is stratified; this operation needs a single family",
                s.id()
            ))),
        }
    }
}

/// Resolve a family id. `data` supplies the design for `two-binomial`.
pub fn lookup(id: &str, data: Option<&Dataset>) -> Result<Registered> {
    if let Some(inner) = id.strip_prefix("strata:") {
        return match lookup(inner, data)? {
            Registered::Single(f) => Ok(Registered::Strata(Strata::new(f)?)),
            Registered::Strata(_) => Err(Error::Config("nested strata are not supported".into())),
        };
    }
    let fam: Arc<dyn Family> = match id {
        "normal" => Arc::new(Edm::normal()),
        "gamma" => Arc::new(Edm::gamma()),
        "invgauss" => Arc::new(Edm::inverse_gaussian()),
        "laplace" => Arc::new(LocationScale::laplace()),
        "locscale:normal" => Arc::new(LocationScale::new(Base::Normal)?),
        "uniform" => Arc::new(Uniform::default()),
        "two-binomial" => {
            let d = data.ok_or_else(|| {
                Error::Config("two-binomial needs data to fix the design".into())
            })?;
            Arc::new(TwoBinomial::from_data(d)?)
        }
        other => {
            if let Some(r) = other.strip_prefix("exppower:") {
                let r: f64 = r
                    .parse()
                    .map_err(|_| Error::Config(format!("bad exponential-power index `{r}`")))?;
                Arc::new(LocationScale::new(Base::ExpPower(r))?)
            } else {
                return Err(Error::Config(format!(
                    "unknown family `{other}`; known: {}",
                    FAMILY_IDS.join(", ")
                )));
            }
        }
    };
    Ok(Registered::Single(fam))
}
