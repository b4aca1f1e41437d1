//! Point estimators: MLE, conditional MLE, posterior mode and posterior mean.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::families::uniform::{uniform_family_accessors, uniform_posterior_mean};
use crate::families::Strata;
use crate::model::{Dataset, Family, Interval, ParamPoint, PsiHat};
use crate::optimize::{maximize_1d, maximize_2d};
use crate::priors::{Prior, PriorKind};
use crate::quadrature::{
    integrate_1d_with, posterior_expectation, QuadratureConfig, MAX_COMPONENTS,
};

/// Tolerance for the posterior mode under the PML prior to coincide with
/// `(λ̂(ψ̂_CML), ψ̂_CML)`, relative to `max(1, |value|)`.
pub const MODE_CHECK_TOL: f64 = 1e-8;

/// Joint maximum likelihood estimate.
pub fn mle(family: &dyn Family, data: &Dataset) -> Result<ParamPoint> {
    family.validate(data)?;
    let m = family.mle(data)?;
    family.check_domain(m)?;
    Ok(m)
}

/// Conditional MLE of ψ given the ancillary.
pub fn conditional_mle(family: &dyn Family, data: &Dataset) -> Result<PsiHat> {
    if !family.descriptor().factorizable {
        return Err(Error::capability(family.id(), "conditional likelihood (factorization)"));
    }
    family.validate(data)?;
    family.conditional_mle(data)
}

/// Comparison of the PML posterior mode with the conditional MLE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalModeCheck {
    pub psi_cml: f64,
    pub lambda_at_cml: f64,
    pub psi_gap: f64,
    pub lambda_gap: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeEstimate {
    pub lambda: f64,
    pub psi: PsiHat,
    pub log_posterior: f64,
    pub multimodal: bool,
    pub start_spread: f64,
    pub gradient_norm: f64,
    pub conditional_check: Option<ConditionalModeCheck>,
}

impl ModeEstimate {
    pub fn point(&self) -> Result<ParamPoint> {
        Ok(ParamPoint::new(self.lambda, self.psi.interior()?))
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Priors that do not depend on λ; the mode then sits on the profile curve.
fn lambda_free(kind: PriorKind) -> bool {
    matches!(
        kind,
        PriorKind::Pml | PriorKind::UniformFlat | PriorKind::MarginalPml
    )
}

/// A point near the bulk of the likelihood, for starts and quadrature hints.
fn center(family: &dyn Family, data: &Dataset) -> Result<ParamPoint> {
    if let Ok(m) = family.mle(data) {
        if family.descriptor().domain.contains(m) {
            return Ok(m);
        }
    }
    let t = family.ancillary(data)?;
    let dom = family.descriptor().domain;
    let psi = if dom.psi.contains(1.0) { 1.0 } else { 0.5 * (dom.psi.lo + dom.psi.hi) };
    let p = ParamPoint::new(t, psi);
    family.check_domain(p)?;
    Ok(p)
}

/// Start spread in unconstrained coordinates from the Fisher information.
fn start_scales(family: &dyn Family, data: &Dataset, c: ParamPoint) -> [f64; 2] {
    let dom = family.descriptor().domain;
    let (tl, tp) = (dom.lambda.default_transform(), dom.psi.default_transform());
    let info = family.fisher_info(c, data.n()).ok();
    let scale = |i: Option<f64>, jac: f64| {
        let s = match i {
            Some(v) if v > 0.0 && v.is_finite() => 0.5 / v.sqrt() / jac.exp(),
            _ => 0.5,
        };
        s.clamp(1e-6, 5.0)
    };
    [
        scale(info.map(|m| m[0][0]), tl.log_jacobian(tl.to_unconstrained(c.lambda))),
        scale(info.map(|m| m[1][1]), tp.log_jacobian(tp.to_unconstrained(c.psi))),
    ]
}

/// argmax of `log_joint + prior`, from five deterministic starts, refined on
/// the profile curve. Under the PML prior on a factorizable family the
/// result is checked against the conditional MLE.
pub fn posterior_mode(family: &dyn Family, data: &Dataset, prior: &Prior) -> Result<ModeEstimate> {
    family.validate(data)?;
    let prior = prior.bind(data)?;
    if prior.is_flat() {
        let m = mle(family, data)?;
        return Ok(ModeEstimate {
            lambda: m.lambda,
            psi: PsiHat::Interior(m.psi),
            log_posterior: family.log_joint(data, m)?,
            multimodal: false,
            start_spread: 0.0,
            gradient_norm: 0.0,
            conditional_check: None,
        });
    }
    let check_cml = prior.kind() == PriorKind::Pml && family.descriptor().factorizable;
    let cml = if check_cml {
        Some(family.conditional_mle(data)?)
    } else {
        None
    };
    if let Some(PsiHat::Boundary(v)) = cml {
        // the conditional likelihood is monotone; so is the posterior in ψ
        return Ok(ModeEstimate {
            lambda: family.profile_lambda(data, v)?,
            psi: PsiHat::Boundary(v),
            log_posterior: f64::NAN,
            multimodal: false,
            start_spread: 0.0,
            gradient_norm: 0.0,
            conditional_check: None,
        });
    }

    let dom = family.descriptor().domain;
    let (tl, tp) = (dom.lambda.default_transform(), dom.psi.default_transform());
    let theta_of = |u: [f64; 2]| ParamPoint::new(tl.to_param(u[0]), tp.to_param(u[1]));
    let obj = |u: [f64; 2]| {
        let th = theta_of(u);
        match (family.log_joint(data, th), prior.log(th)) {
            (Ok(a), Ok(b)) if !(a + b).is_nan() => a + b,
            _ => f64::NEG_INFINITY,
        }
    };
    let c = center(family, data)?;
    let cu = [tl.to_unconstrained(c.lambda), tp.to_unconstrained(c.psi)];
    let d = start_scales(family, data, c);
    let starts = [
        cu,
        [cu[0] - d[0], cu[1] - d[1]],
        [cu[0] + d[0], cu[1] - d[1]],
        [cu[0] - d[0], cu[1] + d[1]],
        [cu[0] + d[0], cu[1] + d[1]],
    ];
    let free = lambda_free(prior.kind());
    let two_d = match maximize_2d(obj, &starts) {
        Ok(r) => Some(r),
        Err(e) if !free => return Err(e),
        Err(_) => None,
    };
    let (mut arg, mut value) = two_d.map_or((cu, obj(cu)), |r| (r.arg, r.value));

    // refine along the profile curve in ψ
    let inner = |v: f64, lam_start: f64| -> (f64, f64) {
        if free {
            let psi = tp.to_param(v);
            match family.profile_lambda(data, psi) {
                Ok(l) => {
                    let u = tl.to_unconstrained(l);
                    (u, obj([u, v]))
                }
                Err(_) => (lam_start, f64::NEG_INFINITY),
            }
        } else {
            match maximize_1d(|w| obj([w, v]), lam_start, d[0]) {
                Ok(m) => (m.arg, m.value),
                Err(_) => (lam_start, f64::NEG_INFINITY),
            }
        }
    };
    let lam0 = arg[0];
    if let Ok(m) = maximize_1d(|v| inner(v, lam0).1, arg[1], d[1]) {
        let (lu, val) = inner(m.arg, lam0);
        if val >= value - 1e-12 * value.abs().max(1.0) {
            arg = [lu, m.arg];
            value = val;
        }
    }
    let theta = theta_of(arg);
    family.check_domain(theta)?;
    let conditional_check = match cml {
        Some(PsiHat::Interior(psi_cml)) => {
            let lambda_at_cml = family.profile_lambda(data, psi_cml)?;
            let psi_gap = rel_gap(theta.psi, psi_cml);
            let lambda_gap = rel_gap(theta.lambda, lambda_at_cml);
            Some(ConditionalModeCheck {
                psi_cml,
                lambda_at_cml,
                psi_gap,
                lambda_gap,
                holds: psi_gap <= MODE_CHECK_TOL && lambda_gap <= MODE_CHECK_TOL,
            })
        }
        _ => None,
    };
    Ok(ModeEstimate {
        lambda: theta.lambda,
        psi: PsiHat::Interior(theta.psi),
        log_posterior: value,
        multimodal: two_d.is_some_and(|r| r.multimodal),
        start_spread: two_d.map_or(0.0, |r| r.start_spread),
        gradient_norm: two_d.map_or(f64::NAN, |r| r.gradient_norm),
        conditional_check,
    })
}

type EstimandMap = Arc<dyn Fn(ParamPoint) -> Result<[f64; 2]> + Send + Sync>;

/// Coordinates in which a posterior mean is taken.
#[derive(Clone)]
pub enum Estimand {
    /// Natural parameter of the exponential family.
    Canonical,
    /// `(λ, ψ)` as is.
    Raw,
    /// `(ψλ, ψ)`.
    ScaledLocation,
    Custom { label: String, map: EstimandMap },
}

impl fmt::Debug for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl Estimand {
    pub const NAMES: &'static [&'static str] = &["canonical", "raw", "scaled-location"];

    pub fn custom(
        label: impl Into<String>,
        map: impl Fn(ParamPoint) -> Result<[f64; 2]> + Send + Sync + 'static,
    ) -> Self {
        Estimand::Custom {
            label: label.into(),
            map: Arc::new(map),
        }
    }

    pub fn tag(&self) -> &str {
        match self {
            Estimand::Canonical => "canonical",
            Estimand::Raw => "raw",
            Estimand::ScaledLocation => "scaled-location",
            Estimand::Custom { label, .. } => label,
        }
    }

    pub fn eval(&self, family: &dyn Family, theta: ParamPoint) -> Result<[f64; 2]> {
        match self {
            Estimand::Canonical => family.canonical_of(theta),
            Estimand::Raw => Ok(theta.as_array()),
            Estimand::ScaledLocation => Ok([theta.psi * theta.lambda, theta.psi]),
            Estimand::Custom { map, .. } => map(theta),
        }
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Estimand::Canonical),
            "raw" => Ok(Estimand::Raw),
            "scaled-location" => Ok(Estimand::ScaledLocation),
            other => Err(Error::Config(format!(
                "unknown estimand `{other}`; known: {}",
                Estimand::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanMethod {
    Quadrature,
    ClosedForm,
    /// λ integrated analytically, ψ by 1-D quadrature.
    ProfiledQuadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorMean {
    pub estimand: String,
    pub value: [f64; 2],
    pub method: MeanMethod,
    pub log_normalizer: Option<f64>,
    pub error_estimate: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Posterior mean of the estimand.
pub fn posterior_mean(
    family: &dyn Family,
    data: &Dataset,
    prior: &Prior,
    estimand: &Estimand,
    cfg: &QuadratureConfig,
) -> Result<PosteriorMean> {
    family.validate(data)?;
    if family.support_depends_on_parameter() {
        return uniform_mean(family, data, prior, estimand, cfg);
    }
    let hint = center(family, data)?;
    let r = posterior_expectation(
        family,
        data,
        prior,
        2,
        |th| {
            let v = estimand.eval(family, th)?;
            let mut g = [0.0; MAX_COMPONENTS];
            g[..2].copy_from_slice(&v);
            Ok(g)
        },
        hint,
        cfg,
    )?;
    Ok(PosteriorMean {
        estimand: estimand.tag().to_string(),
        value: [r.means[0], r.means[1]],
        method: MeanMethod::Quadrature,
        log_normalizer: Some(r.log_value),
        error_estimate: r.error_estimate.max(r.means_error),
        converged: r.converged,
        evaluations: r.evaluations,
    })
}

/// Uniform family: λ is symmetric about the midrange given ψ, and the
/// λ-integral of the likelihood is `(ψ/2)^n (2/ψ - R)`.
fn uniform_mean(
    family: &dyn Family,
    data: &Dataset,
    prior: &Prior,
    estimand: &Estimand,
    cfg: &QuadratureConfig,
) -> Result<PosteriorMean> {
    let kind = prior.kind();
    if !matches!(
        kind,
        PriorKind::Pml | PriorKind::Mpml | PriorKind::UniformFlat | PriorKind::Jeffreys
    ) {
        return Err(Error::capability(family.id(), "posterior mean under a λ-dependent prior"));
    }
    let ((lo, hi), _) = uniform_family_accessors(data)?;
    let mid = 0.5 * (lo + hi);
    let r = hi - lo;
    let finish = |psi: f64, method, log_normalizer, error_estimate, converged, evaluations| {
        let value = match estimand {
            Estimand::Raw => [mid, psi],
            Estimand::ScaledLocation => [mid * psi, psi],
            _ => {
                return Err(Error::capability(
                    family.id(),
                    "posterior mean of this estimand (only raw and scaled-location)",
                ))
            }
        };
        Ok(PosteriorMean {
            estimand: estimand.tag().to_string(),
            value,
            method,
            log_normalizer,
            error_estimate,
            converged,
            evaluations,
        })
    };
    if matches!(kind, PriorKind::Pml | PriorKind::Mpml) {
        let p = uniform_posterior_mean(data)?;
        return finish(p.psi, MeanMethod::ClosedForm, None, 0.0, true, 0);
    }
    let prior = prior.bind(data)?;
    let n = data.n() as f64;
    let top = 2.0 / r;
    let res = integrate_1d_with(
        |psi| {
            let mut g = [0.0; MAX_COMPONENTS];
            g[0] = psi;
            let lp = prior.log(ParamPoint::new(mid, psi))?;
            Ok((n * (0.5 * psi).ln() + (2.0 / psi - r).ln() + lp, g))
        },
        1,
        Interval::new(0.0, top),
        None,
        "psi",
        Some(0.5 * top),
        cfg,
    )?;
    finish(
        res.means[0],
        MeanMethod::ProfiledQuadrature,
        Some(res.log_value),
        res.error_estimate.max(res.means_error),
        res.converged,
        res.evaluations,
    )
}

/// Exact values used as oracles and fast paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ClosedForm {
    Point([f64; 2]),
    Scalar(f64),
}

/// `(family, kind)` pairs in the closed-form catalog.
pub const CLOSED_FORMS: &[(&str, &str)] = &[
    ("normal", "mle"),
    ("normal", "cml"),
    ("normal", "post_mode_pml"),
    ("normal", "post_mean_canonical_mpml"),
    ("uniform", "mle"),
    ("uniform", "post_mean_psi_mpml"),
    ("uniform", "post_mean_scaled_mpml"),
];

/// Look up a closed form; `None` if the catalog has no entry.
pub fn closed_form(family_id: &str, data: &Dataset, kind: &str) -> Result<Option<ClosedForm>> {
    if !CLOSED_FORMS.contains(&(family_id, kind)) {
        return Ok(None);
    }
    let n = data.n() as f64;
    let out = match family_id {
        "normal" => {
            let s = data.summary();
            if !(s.ss > 0.0) {
                return Err(Error::DegenerateData("all observations are equal".into()));
            }
            let prec = (n - 1.0) / s.ss;
            match kind {
                "mle" => ClosedForm::Point([s.mean, n / s.ss]),
                "cml" => ClosedForm::Scalar(prec),
                "post_mode_pml" => ClosedForm::Point([s.mean, prec]),
                _ => ClosedForm::Point([s.mean * prec, prec]),
            }
        }
        _ => {
            let p = uniform_posterior_mean(data)?;
            match kind {
                "mle" => ClosedForm::Point(uniform_family_accessors(data)?.1.as_array()),
                "post_mean_psi_mpml" => ClosedForm::Scalar(p.psi),
                _ => ClosedForm::Point([p.lambda * p.psi, p.psi]),
            }
        }
    };
    Ok(Some(out))
}

/// What to compute in [`estimate`].
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub mode_prior: PriorKind,
    pub mean_prior: PriorKind,
    pub estimand: Estimand,
    pub quadrature: QuadratureConfig,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            mode_prior: PriorKind::Pml,
            mean_prior: PriorKind::Mpml,
            estimand: Estimand::Canonical,
            quadrature: QuadratureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub notes: Vec<String>,
    pub precision_failure: bool,
    /// Relative gap between the numeric posterior mean and its closed form.
    pub closed_form_gap: Option<f64>,
}

impl Diagnostics {
    fn record(&mut self, what: &str, e: &Error) {
        if matches!(e, Error::NonConvergence { .. } | Error::Numerical(_)) {
            self.precision_failure = true;
        }
        self.notes.push(format!("{what}: {e}"));
    }
}

/// The four estimators on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub family: String,
    pub n: usize,
    pub mle: Option<ParamPoint>,
    pub cml_psi: Option<PsiHat>,
    pub mode_prior: String,
    pub post_mode: Option<ModeEstimate>,
    pub mean_prior: String,
    pub estimand: String,
    pub post_mean: Option<PosteriorMean>,
    pub diagnostics: Diagnostics,
}

/// Run every estimator, collecting failures as diagnostics instead of
/// aborting.
pub fn estimate(family: Arc<dyn Family>, data: &Dataset, opts: &EstimateOptions) -> Result<EstimateReport> {
    family.validate(data)?;
    let f = family.as_ref();
    let mut diag = Diagnostics::default();
    let mle = mle(f, data).map_err(|e| diag.record("mle", &e)).ok();
    let cml_psi = conditional_mle(f, data)
        .map_err(|e| diag.record("conditional mle", &e))
        .ok();
    if let Some(PsiHat::Boundary(v)) = cml_psi {
        diag.notes.push(format!("conditional MLE of psi is on the boundary ({v})"));
    }

    let mode_prior = Prior::new(opts.mode_prior, family.clone())?;
    let post_mode = posterior_mode(f, data, &mode_prior)
        .map_err(|e| diag.record("posterior mode", &e))
        .ok();
    if let Some(m) = &post_mode {
        if m.multimodal {
            diag.precision_failure = true;
            diag.notes.push(format!(
                "posterior mode: starts disagree by {:.3e}; posterior may be multimodal",
                m.start_spread
            ));
        }
        if let Some(c) = m.conditional_check.filter(|c| !c.holds) {
            diag.precision_failure = true;
            diag.notes.push(format!(
                "posterior mode under PML differs from the conditional MLE (psi gap {:.3e}, lambda gap {:.3e})",
                c.psi_gap, c.lambda_gap
            ));
        }
    }

    let mean_prior = Prior::new(opts.mean_prior, family.clone())?;
    let post_mean = posterior_mean(f, data, &mean_prior, &opts.estimand, &opts.quadrature)
        .map_err(|e| diag.record("posterior mean", &e))
        .ok();
    if let Some(pm) = &post_mean {
        if !pm.converged {
            diag.precision_failure = true;
            diag.notes.push(format!(
                "posterior mean: quadrature did not reach tolerance (error {:.3e})",
                pm.error_estimate
            ));
        }
        let key = match (&opts.estimand, opts.mean_prior) {
            (Estimand::Canonical, PriorKind::Mpml) => Some("post_mean_canonical_mpml"),
            (Estimand::ScaledLocation, PriorKind::Mpml) => Some("post_mean_scaled_mpml"),
            _ => None,
        };
        if pm.method == MeanMethod::Quadrature {
            if let Some(Some(ClosedForm::Point(cf))) = key.map(|k| closed_form(f.id(), data, k).ok().flatten()) {
                let gap = rel_gap(pm.value[0], cf[0]).max(rel_gap(pm.value[1], cf[1]));
                diag.closed_form_gap = Some(gap);
                if gap > 1e-6 {
                    diag.precision_failure = true;
                    diag.notes.push(format!("posterior mean differs from its closed form by {gap:.3e}"));
                }
            }
        }
    }

    Ok(EstimateReport {
        family: f.id().to_string(),
        n: data.n(),
        mle,
        cml_psi,
        mode_prior: mode_prior.label().to_string(),
        post_mode,
        mean_prior: mean_prior.label().to_string(),
        estimand: opts.estimand.tag().to_string(),
        post_mean,
        diagnostics: diag,
    })
}

/// Estimates for stratified data with a common ψ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataEstimate {
    pub family: String,
    pub k: usize,
    pub sizes: Vec<usize>,
    pub lambdas_ml: Vec<f64>,
    pub psi_ml: f64,
    pub psi_cml: f64,
    pub psi_mode_pml: f64,
}

pub fn estimate_strata(strata: &Strata, parts: &[Dataset]) -> Result<StrataEstimate> {
    let spec = strata.spec(parts);
    let (lambdas_ml, psi_ml) = strata.mle(parts)?;
    let psi_cml = strata.conditional_mle(parts)?.interior()?;
    let (_, psi_mode_pml) = strata.posterior_mode_pml(parts)?;
    Ok(StrataEstimate {
        family: strata.id(),
        k: spec.k,
        sizes: spec.sizes,
        lambdas_ml,
        psi_ml,
        psi_cml,
        psi_mode_pml,
    })
}
