//! Run configuration (JSON, schema version 1).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::OrderProtocol;
use crate::error::{Error, Result};
use crate::estimators::Estimand;
use crate::exec::Execution;
use crate::priors::PriorKind;
use crate::quadrature::QuadratureConfig;
use crate::risk::{Loss, RiskEstimator, StrataDesign};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    PriorEval,
    Estimate,
    OrderCheck,
    RiskSim,
    PredictorKl,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::PriorEval => "prior-eval",
            Command::Estimate => "estimate",
            Command::OrderCheck => "order-check",
            Command::RiskSim => "risk-sim",
            Command::PredictorKl => "predictor-kl",
        })
    }
}

/// Draw the dataset instead of reading it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub truth: [f64; 2],
    #[serde(default)]
    pub n: usize,
    /// Group sizes for `two-binomial`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<[u64; 2]>,
    /// Strata sharing ψ (and, in the generator, λ).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<StrataDesign>,
}

/// An explicit list of ψ values or an evenly spaced range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values(Vec<f64>),
    Range { from: f64, to: f64, points: usize },
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            GridSpec::Values(v) => Ok(v.clone()),
            GridSpec::Range { from, to, points } => {
                if *points == 0 || !(to >= from) {
                    return Err(Error::Config("psi_grid range needs from <= to and points >= 1".into()));
                }
                if *points == 1 {
                    return Ok(vec![*from]);
                }
                let step = (to - from) / (*points - 1) as f64;
                Ok((0..*points).map(|i| from + step * i as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderSection {
    pub truth: [f64; 2],
    pub ns: Vec<usize>,
    pub reps: usize,
    pub protocol: OrderProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    pub truth: [f64; 2],
    #[serde(default)]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<StrataDesign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<[u64; 2]>,
    pub reps: usize,
    pub estimators: Vec<RiskEstimator>,
    pub loss: Loss,
}

/// One run. Which optional fields are required depends on the subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub family: String,
    #[serde(default)]
    pub seed: u64,
    /// Prior for prior-eval and the posterior mean (default `mpml`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
    /// Prior for the posterior mode in `estimate` (default `pml`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_prior: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimand: Option<String>,
    /// CSV path, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution: Option<Execution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// `(λ, ψ)` points for prior-eval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_check: Option<OrderSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSection>,
}

fn require<T>(v: &Option<T>, field: &str, cmd: Command) -> Result<()> {
    if v.is_none() {
        return Err(Error::Config(format!("`{cmd}` needs the `{field}` field")));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The dataset path, resolved against the config file's directory.
    pub fn dataset_path(&self, base: &Path) -> Option<PathBuf> {
        self.dataset.as_ref().map(|d| if d.is_relative() { base.join(d) } else { d.clone() })
    }

    pub fn validate(&self, cmd: Command, base: &Path) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.dataset.is_some() && self.generator.is_some() {
            return Err(Error::Config("give either `dataset` or `generator`, not both".into()));
        }
        if let Some(p) = &self.prior {
            p.parse::<PriorKind>()?;
        }
        if let Some(p) = &self.mode_prior {
            p.parse::<PriorKind>()?;
        }
        if let Some(e) = &self.estimand {
            e.parse::<Estimand>()?;
        }
        if let Some(q) = &self.quadrature {
            q.validate()?;
        }
        if let Some(d) = self.dataset_path(base) {
            if !d.is_file() {
                return Err(Error::Config(format!("dataset `{}` does not exist", d.display())));
            }
        }
        match cmd {
            Command::PriorEval | Command::Estimate | Command::PredictorKl => {
                if self.dataset.is_none() && self.generator.is_none() {
                    return Err(Error::Config(format!("`{cmd}` needs `dataset` or `generator`")));
                }
                if cmd == Command::PriorEval {
                    require(&self.points, "points", cmd)?;
                }
                if cmd == Command::PredictorKl {
                    require(&self.psi_grid, "psi_grid", cmd)?;
                }
            }
            Command::OrderCheck => require(&self.order_check, "order_check", cmd)?,
            Command::RiskSim => require(&self.risk, "risk", cmd)?,
        }
        Ok(())
    }

    pub fn prior_kind(&self, default: PriorKind) -> Result<PriorKind> {
        self.prior.as_deref().map_or(Ok(default), str::parse)
    }

    pub fn mode_prior_kind(&self) -> Result<PriorKind> {
        self.mode_prior.as_deref().map_or(Ok(PriorKind::Pml), str::parse)
    }

    pub fn estimand(&self) -> Result<Estimand> {
        self.estimand.as_deref().unwrap_or("canonical").parse()
    }
}
