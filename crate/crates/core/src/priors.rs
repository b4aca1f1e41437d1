//! Unnormalized log-priors: PML, Jeffreys, MPML and their variants.
//!
//! All priors live in log space and may be improper. Data-dependent kinds
//! must be [`Prior::capture`]d on a dataset before evaluation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::families::Strata;
use crate::model::{Dataset, Family, ParamPoint};
use crate::special::ln_gamma;

/// Prior kinds, addressable by name from configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorKind {
    Pml,
    Jeffreys,
    Mpml,
    AsymptoticMpml,
    MarginalPml,
    MarginalMpml,
    StrataMpml,
    UniformFlat,
    StoredReference,
    Custom,
}

impl PriorKind {
    pub const NAMES: &'static [&'static str] = &[
        "pml",
        "jeffreys",
        "mpml",
        "ampml",
        "marginal-pml",
        "marginal-mpml",
        "strata-mpml",
        "flat",
        "reference",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PriorKind::Pml => "pml",
            PriorKind::Jeffreys => "jeffreys",
            PriorKind::Mpml => "mpml",
            PriorKind::AsymptoticMpml => "ampml",
            PriorKind::MarginalPml => "marginal-pml",
            PriorKind::MarginalMpml => "marginal-mpml",
            PriorKind::StrataMpml => "strata-mpml",
            PriorKind::UniformFlat => "flat",
            PriorKind::StoredReference => "reference",
            PriorKind::Custom => "custom",
        }
    }

    /// Whether evaluation needs a captured dataset.
    pub fn data_dependent(&self) -> bool {
        !matches!(
            self,
            PriorKind::UniformFlat | PriorKind::Jeffreys | PriorKind::Custom
        )
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for PriorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pml" => PriorKind::Pml,
            "jeffreys" => PriorKind::Jeffreys,
            "mpml" => PriorKind::Mpml,
            "ampml" => PriorKind::AsymptoticMpml,
            "marginal-pml" => PriorKind::MarginalPml,
            "marginal-mpml" => PriorKind::MarginalMpml,
            "strata-mpml" => PriorKind::StrataMpml,
            "flat" => PriorKind::UniformFlat,
            "reference" => PriorKind::StoredReference,
            other => {
                return Err(Error::Config(format!(
                    "unknown prior `{other}`; known: {}",
                    PriorKind::NAMES.join(", ")
                )))
            }
        })
    }
}

/// Data captured by a data-dependent prior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorContext {
    pub family_id: String,
    pub dataset_hash: u64,
    /// Ancillary value; NaN for stratified data.
    pub t: f64,
    pub n: usize,
}

/// `I_11 = g1(λ) g2(ψ)`, verified numerically; `g1` is stored through a
/// reference ψ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Factorization {
    pub psi_ref: f64,
    /// Largest relative residual of `I11(λ,ψ) I11(λ0,ψ0) = I11(λ,ψ0) I11(λ0,ψ)`.
    pub residual: f64,
}

/// Relative residual above which I_11 is declared non-factorable.
pub const FACTORIZATION_TOL: f64 = 1e-8;

type CustomFn = Arc<dyn Fn(ParamPoint) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Term {
    Kind(PriorKind),
    Custom(CustomFn),
    Product(Box<Prior>, Box<Prior>),
}

/// An evaluable, possibly data-dependent, unnormalized log-prior.
#[derive(Clone)]
pub struct Prior {
    term: Term,
    family: Arc<dyn Family>,
    data: Option<Arc<Dataset>>,
    context: Option<PriorContext>,
    factorization: Option<Factorization>,
    label: String,
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Prior")
            .field("label", &self.label)
            .field("family", &self.family.id())
            .field("context", &self.context)
            .finish()
    }
}

impl Prior {
    pub fn new(kind: PriorKind, family: Arc<dyn Family>) -> Result<Self> {
        if kind == PriorKind::Custom {
            return Err(Error::Config("use Prior::custom for custom priors".into()));
        }
        Ok(Prior {
            term: Term::Kind(kind),
            label: kind.name().to_string(),
            family,
            data: None,
            context: None,
            factorization: None,
        })
    }

    pub fn flat(family: Arc<dyn Family>) -> Self {
        Prior::new(PriorKind::UniformFlat, family).expect("flat prior")
    }

    /// A user-supplied log-prior.
    pub fn custom(
        family: Arc<dyn Family>,
        label: impl Into<String>,
        f: impl Fn(ParamPoint) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Prior {
            term: Term::Custom(Arc::new(f)),
            label: label.into(),
            family,
            data: None,
            context: None,
            factorization: None,
        }
    }

    /// `π_a · π_b`, evaluated as a sum of logs.
    pub fn product(a: Prior, b: Prior) -> Self {
        Prior {
            label: format!("{}*{}", a.label, b.label),
            family: a.family.clone(),
            data: a.data.clone().or_else(|| b.data.clone()),
            context: a.context.clone().or_else(|| b.context.clone()),
            factorization: None,
            term: Term::Product(Box::new(a), Box::new(b)),
        }
    }

    /// The kind, or `Custom` for custom and product priors.
    pub fn kind(&self) -> PriorKind {
        match &self.term {
            Term::Kind(k) => *k,
            _ => PriorKind::Custom,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> &Arc<dyn Family> {
        &self.family
    }

    pub fn context(&self) -> Option<&PriorContext> {
        self.context.as_ref()
    }

    pub fn factorization(&self) -> Option<&Factorization> {
        self.factorization.as_ref()
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.term, Term::Kind(PriorKind::UniformFlat))
    }

    /// Bind the prior to a dataset.
    pub fn capture(mut self, data: &Dataset) -> Result<Self> {
        self.family.validate(data)?;
        let stratified = data.stratum_labels().is_some();
        let t = match self.kind() {
            PriorKind::StrataMpml => f64::NAN,
            _ if stratified => f64::NAN,
            _ => self.family.ancillary(data)?,
        };
        self.context = Some(PriorContext {
            family_id: self.family.id().to_string(),
            dataset_hash: data.fingerprint(),
            t,
            n: data.n(),
        });
        self.data = Some(Arc::new(data.clone()));
        if let Term::Product(a, b) = self.term {
            self.term = Term::Product(Box::new(a.capture(data)?), Box::new(b.capture(data)?));
        }
        if self.kind() == PriorKind::AsymptoticMpml {
            let center = self.family.mle(data)?;
            self.factorization = Some(verify_factorization(self.family.as_ref(), center, data.n())?);
        }
        Ok(self)
    }

    /// This prior bound to `data`, reusing an existing capture of the same data.
    pub fn bind(&self, data: &Dataset) -> Result<std::borrow::Cow<'_, Prior>> {
        match &self.context {
            Some(c) if c.dataset_hash == data.fingerprint() && c.n == data.n() => {
                Ok(std::borrow::Cow::Borrowed(self))
            }
            _ => Ok(std::borrow::Cow::Owned(self.clone().capture(data)?)),
        }
    }

    fn captured(&self) -> Result<(&Dataset, &PriorContext)> {
        match (&self.data, &self.context) {
            (Some(d), Some(c)) => Ok((d, c)),
            _ => Err(Error::MissingContext(self.kind().name())),
        }
    }

    fn n_or_one(&self) -> usize {
        self.context.as_ref().map_or(1, |c| c.n)
    }

    /// Unnormalized log-prior at θ.
    pub fn log(&self, theta: ParamPoint) -> Result<f64> {
        let kind = match &self.term {
            Term::Custom(f) => {
                self.family.check_domain(theta)?;
                return Ok(f(theta));
            }
            Term::Product(a, b) => return Ok(a.log(theta)? + b.log(theta)?),
            Term::Kind(k) => *k,
        };
        self.family.check_domain(theta)?;
        match kind {
            PriorKind::UniformFlat => Ok(0.0),
            PriorKind::Jeffreys => jeffreys_log(self.family.as_ref(), theta, self.n_or_one()),
            PriorKind::Pml => self.pml_log(theta.psi),
            PriorKind::Mpml => {
                Ok(self.pml_log(theta.psi)? + jeffreys_log(self.family.as_ref(), theta, self.n_or_one())?)
            }
            PriorKind::AsymptoticMpml => {
                let (_, ctx) = self.captured()?;
                let fac = self.factorization.as_ref().ok_or(Error::MissingContext("ampml"))?;
                asymptotic_mpml_log(self.family.as_ref(), theta, ctx.n, fac.psi_ref)
            }
            PriorKind::MarginalPml => self.marginal_pml_log(theta.psi),
            PriorKind::MarginalMpml => Ok(self.marginal_pml_log(theta.psi)?
                + jeffreys_log(self.family.as_ref(), theta, self.n_or_one())?),
            PriorKind::StrataMpml => {
                let (data, _) = self.captured()?;
                let parts = match data.stratum_labels() {
                    Some(_) => data.split_strata()?,
                    None => vec![data.clone()],
                };
                if parts.len() != 1 {
                    return Err(Error::Config(
                        "strata MPML with several strata needs one λ per stratum; use log_strata".into(),
                    ));
                }
                self.log_strata(&[theta.lambda], theta.psi)
            }
            PriorKind::StoredReference => {
                stored_reference_log(self.family.id(), theta, self.context.as_ref().map(|c| c.n))
            }
            PriorKind::Custom => unreachable!("custom priors carry a closure"),
        }
    }

    /// PML in ψ alone: `-log pm(t | λ̃(ψ), ψ)`.
    pub fn pml_log(&self, psi: f64) -> Result<f64> {
        let (data, ctx) = self.captured()?;
        let lambda = self.family.pml_lambda(data, ctx.t, psi)?;
        let v = self
            .family
            .log_marginal_ancillary(data, ctx.t, ParamPoint::new(lambda, psi))?;
        Ok(-v)
    }

    /// The intermediate approximation `-(1/2) log I_11(t, ψ)`.
    pub fn asymptotic_pml_log(&self, psi: f64) -> Result<f64> {
        let (_, ctx) = self.captured()?;
        let i = self.family.fisher_info(ParamPoint::new(ctx.t, psi), ctx.n)?;
        Ok(-0.5 * i[0][0].ln())
    }

    /// Marginal-MLE variant: `-log pc(x | t, λ̂(ψ), ψ)`.
    pub fn marginal_pml_log(&self, psi: f64) -> Result<f64> {
        let (data, _) = self.captured()?;
        let d = self.family.marginal_variant_statistic(data)?;
        let lambda = self.family.profile_lambda(data, psi)?;
        let v = self.family.log_conditional(data, d, psi, Some(lambda))?;
        Ok(-v)
    }

    /// Strata MPML at per-stratum λ and common ψ.
    pub fn log_strata(&self, lambdas: &[f64], psi: f64) -> Result<f64> {
        let (data, _) = self.captured()?;
        let parts = match data.stratum_labels() {
            Some(_) => data.split_strata()?,
            None => vec![data.clone()],
        };
        Strata::new(self.family.clone())?.mpml_log(&parts, lambdas, psi)
    }
}

/// `(1/2) log det I(θ)` for an `n`-sample.
pub fn jeffreys_log(family: &dyn Family, theta: ParamPoint, n: usize) -> Result<f64> {
    Ok(0.5 * family.log_fisher_det(theta, n)?)
}

/// Check `I_11(λ,ψ) = g1(λ) g2(ψ)` on a grid of unconstrained offsets around
/// `center`.
pub fn verify_factorization(family: &dyn Family, center: ParamPoint, n: usize) -> Result<Factorization> {
    let dom = family.descriptor().domain;
    let (tl, tp) = (dom.lambda.default_transform(), dom.psi.default_transform());
    let (u0, v0) = (tl.to_unconstrained(center.lambda), tp.to_unconstrained(center.psi));
    let i11 = |l: f64, p: f64| -> Result<f64> { Ok(family.fisher_info(ParamPoint::new(l, p), n)?[0][0]) };
    let base = i11(center.lambda, center.psi)?;
    let offsets = [-1.0, -0.5, 0.5, 1.0];
    let mut residual: f64 = 0.0;
    for &a in &offsets {
        let l = tl.to_param(u0 + a);
        let along_l = i11(l, center.psi)?;
        for &b in &offsets {
            let p = tp.to_param(v0 + b);
            let lhs = i11(l, p)? * base;
            let rhs = along_l * i11(center.lambda, p)?;
            residual = residual.max(((lhs - rhs) / rhs).abs());
        }
    }
    if !(residual <= FACTORIZATION_TOL) {
        return Err(Error::NotFactorable { residual });
    }
    Ok(Factorization {
        psi_ref: center.psi,
        residual,
    })
}

/// `(1/2) log(g1(λ) I_22(λ,ψ))` with `g1(λ) = I_11(λ, ψ_ref)`.
pub fn asymptotic_mpml_log(family: &dyn Family, theta: ParamPoint, n: usize, psi_ref: f64) -> Result<f64> {
    let diag = |th: ParamPoint| -> Result<[f64; 2]> {
        family.log_fisher_diagonal(th, n)?.ok_or_else(|| {
            Error::capability(family.id(), "asymptotic MPML (non-diagonal information)")
        })
    };
    let g1 = diag(ParamPoint::new(theta.lambda, psi_ref))?[0];
    let i22 = diag(theta)?[1];
    Ok(0.5 * (g1 + i22))
}

/// Both readings of the gamma reference gap `f(ψ, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaGap {
    /// `log Γ(nψ) - (n - 1/2) ψ log(nψ) + nψ`
    pub printed: f64,
    /// `log Γ(nψ) - (nψ - 1/2) log(nψ) + nψ`, which tends to `(1/2) log 2π`.
    pub stirling: f64,
}

pub const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

pub fn gamma_reference_gap(psi: f64, n: usize) -> GammaGap {
    let n = n as f64;
    let m = n * psi;
    GammaGap {
        printed: ln_gamma(m) - (n - 0.5) * psi * m.ln() + m,
        stirling: ln_gamma(m) - (m - 0.5) * m.ln() + m,
    }
}

/// Closed-form reference priors, for comparison reports.
///
/// The gamma entry is `π_M exp f(ψ, n)` with the Stirling-consistent `f`,
/// and needs the sample size.
pub fn stored_reference_log(family_id: &str, theta: ParamPoint, n: Option<usize>) -> Result<f64> {
    match family_id {
        "normal" => Ok(-theta.psi.ln()),
        "invgauss" => Ok(-1.5 * theta.lambda.ln() - 0.5 * theta.psi.ln()),
        "gamma" => {
            let n = n.ok_or(Error::MissingContext("reference"))?;
            let fam = crate::families::Edm::gamma();
            let sp = fam.spec();
            let mpml = -sp.k(n as f64 * theta.psi) + jeffreys_log(&fam, theta, n)?;
            Ok(mpml + gamma_reference_gap(theta.psi, n).stirling)
        }
        other => Err(Error::Config(format!(
            "no stored reference prior for `{other}`; catalog: normal, invgauss, gamma"
        ))),
    }
}
