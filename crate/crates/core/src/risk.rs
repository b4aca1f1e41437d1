//! Monte-Carlo risk under KL loss, predictive-KL curves and the saddlepoint
//! residual.
//!
//! KL values are for an `n`-observation replicate (n × per-observation KL
//! under independent sampling).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{conditional_mle, mle, posterior_mean, posterior_mode, Estimand};
use crate::exec::{replicate_rng, Execution};
use crate::families::{lookup, Registered, Strata, TwoBinomial};
use crate::model::{Dataset, Family, ParamPoint};
use crate::priors::{Prior, PriorKind};
use crate::quadrature::{posterior_expectation, QuadratureConfig, MAX_COMPONENTS};

pub const KL_CONVENTION: &str = "KL divergences are for a same-size replicate: n times the per-observation KL";

/// KL(p(·|a) ‖ p(·|b)) for an `n`-observation replicate.
pub fn kl_divergence(family: &dyn Family, a: ParamPoint, b: ParamPoint, n: usize) -> Result<f64> {
    family.check_domain(a)?;
    family.check_domain(b)?;
    let v = family.kl(a, b, n)?;
    if v.is_nan() || v < 0.0 {
        return Err(Error::Numerical(format!("KL evaluated to {v}")));
    }
    Ok(v)
}

/// KL(pc(·|t,ψ_a) ‖ pc(·|t,ψ_b)) for a conditional density of the form
/// `ψ T(x) - A(ψ) + h(x)`.
pub fn conditional_kl(family: &dyn Family, data: &Dataset, psi_a: f64, psi_b: f64) -> Result<f64> {
    let (aa, da) = family.conditional_cumulant(data, psi_a)?;
    let (ab, _) = family.conditional_cumulant(data, psi_b)?;
    Ok(((psi_a - psi_b) * da - aa + ab).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlCurvePoint {
    pub psi: f64,
    pub expected_kl: f64,
}

/// `ψ' ↦ E_post[KL(pc(·|t,ψ'), pc(·|t,ψ))]` under the MPML posterior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlCurve {
    pub points: Vec<KlCurvePoint>,
    pub posterior_mean_psi: f64,
    pub psi_cml: f64,
    pub value_at_mean: f64,
    pub value_at_cml: f64,
    pub argmin: f64,
    pub min_index: usize,
    /// The grid minimum sits on an end point; the grid may not bracket the
    /// minimizer.
    pub boundary_min: bool,
    /// Largest spacing next to the grid minimizer.
    pub grid_step: f64,
}

pub fn conditional_predictive_kl_curve(
    family: &dyn Family,
    data: &Dataset,
    psi_grid: &[f64],
    cfg: &QuadratureConfig,
) -> Result<KlCurve> {
    if psi_grid.is_empty() {
        return Err(Error::InvalidData("empty ψ grid".into()));
    }
    if psi_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidData("ψ grid must be strictly increasing".into()));
    }
    let fam: Arc<dyn Family> = lookup(family.id(), Some(data))?.single()?.clone();
    let prior = Prior::new(PriorKind::Mpml, fam)?;
    let hint = mle(family, data)?;
    let r = posterior_expectation(
        family,
        data,
        &prior,
        2,
        |th| {
            let mut c = [0.0; MAX_COMPONENTS];
            c[0] = th.psi;
            c[1] = family.conditional_cumulant(data, th.psi)?.0;
            Ok(c)
        },
        hint,
        cfg,
    )?;
    if !r.converged {
        return Err(Error::NonConvergence {
            what: "posterior expectation for the predictive-KL curve".into(),
            gradient_norm: r.means_error,
        });
    }
    let (mean_psi, mean_a) = (r.means[0], r.means[1]);
    let value = |p: f64| -> Result<f64> {
        let (a, da) = family.conditional_cumulant(data, p)?;
        Ok((p - mean_psi) * da - a + mean_a)
    };
    let points = psi_grid
        .iter()
        .map(|&p| Ok(KlCurvePoint { psi: p, expected_kl: value(p)? }))
        .collect::<Result<Vec<_>>>()?;
    let min_index = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.expected_kl.total_cmp(&b.1.expected_kl))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let last = points.len() - 1;
    let left = if min_index > 0 { psi_grid[min_index] - psi_grid[min_index - 1] } else { 0.0 };
    let right = if min_index < last { psi_grid[min_index + 1] - psi_grid[min_index] } else { 0.0 };
    let psi_cml = conditional_mle(family, data)?.interior()?;
    Ok(KlCurve {
        argmin: psi_grid[min_index],
        boundary_min: points.len() > 1 && (min_index == 0 || min_index == last),
        grid_step: left.max(right),
        min_index,
        value_at_mean: value(mean_psi)?,
        value_at_cml: value(psi_cml)?,
        posterior_mean_psi: mean_psi,
        psi_cml,
        points,
    })
}

/// `E_post[KL(p(·|θ̂), p(·|θ)) - log{p(x|θ̂)/p(x|θ)}]`; zero for predictors
/// in the saddlepoint class.
pub fn saddlepoint_residual(
    family: &dyn Family,
    data: &Dataset,
    predictor: ParamPoint,
    prior: &Prior,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    family.check_domain(predictor)?;
    let n = data.n();
    let at_pred = family.log_joint(data, predictor)?;
    let r = posterior_expectation(
        family,
        data,
        prior,
        1,
        |th| {
            let mut c = [0.0; MAX_COMPONENTS];
            c[0] = family.kl(predictor, th, n)? - (at_pred - family.log_joint(data, th)?);
            Ok(c)
        },
        mle(family, data)?,
        cfg,
    )?;
    if !r.converged {
        return Err(Error::NonConvergence {
            what: "posterior expectation for the saddlepoint residual".into(),
            gradient_norm: r.means_error,
        });
    }
    Ok(r.means[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// KL(p(·|θ) ‖ p(·|θ̂)).
    KlPlugin,
    /// KL(pc(·|t,ψ) ‖ pc(·|t,ψ̂)) at the replicate's own `t`.
    KlConditional,
    SquaredError,
}

impl Loss {
    fn metrics(self) -> &'static [&'static str] {
        match self {
            Loss::KlPlugin => &["kl"],
            Loss::KlConditional => &["kl_conditional"],
            Loss::SquaredError => &["sq_lambda", "sq_psi"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskEstimator {
    /// (λ̂_ML, ψ̂_ML)
    Mle,
    /// (λ̂_ML, ψ̂_CML)
    Cml,
    /// Posterior mode under the PML prior.
    PmlMode,
    /// MPML posterior mean of the canonical parameter, mapped back; the raw
    /// parameter where the family has no canonical coordinates.
    MpmlMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrataDesign {
    pub k: usize,
    pub n_k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    /// A family id; `strata:<inner>` with `strata` set for a common ψ.
    pub family: String,
    /// True `(λ, ψ)`; every stratum shares `λ`.
    pub truth: [f64; 2],
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub strata: Option<StrataDesign>,
    /// Group sizes for `two-binomial`.
    #[serde(default)]
    pub design: Option<[u64; 2]>,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<RiskEstimator>,
    pub loss: Loss,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub execution: Execution,
}

pub const MIN_REPS: usize = 100;

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < MIN_REPS {
            return Err(Error::Config(format!("reps must be at least {MIN_REPS}, got {}", self.reps)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators listed".into()));
        }
        let stratified = self.family.starts_with("strata:");
        match (stratified, self.strata) {
            (true, None) => return Err(Error::Config("stratified family needs `strata`".into())),
            (false, Some(_)) => {
                return Err(Error::Config("`strata` is only valid with a strata: family".into()))
            }
            (true, Some(s)) => {
                if s.k == 0 || s.n_k < 2 {
                    return Err(Error::Config("strata need k >= 1 and n_k >= 2".into()));
                }
                if self.estimators.contains(&RiskEstimator::MpmlMean) {
                    return Err(Error::Config(
                        "mpml-mean is not available for stratified families".into(),
                    ));
                }
            }
            (false, None) => {
                if self.family != "two-binomial" && self.n < 2 {
                    return Err(Error::Config("n must be at least 2".into()));
                }
            }
        }
        if (self.family == "two-binomial") != self.design.is_some() {
            return Err(Error::Config("`design` is required for, and only for, two-binomial".into()));
        }
        self.quadrature.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRisk {
    pub estimator: RiskEstimator,
    pub losses: Vec<Summary>,
    /// Bias of λ̂ (averaged over strata), ψ̂ and 1/ψ̂.
    pub bias: Vec<Summary>,
    pub used: usize,
    pub boundary_events: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

/// `a - b` on replicates where both succeeded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedDifference {
    pub a: RiskEstimator,
    pub b: RiskEstimator,
    pub metric: String,
    pub pairs: usize,
    pub mean: f64,
    pub se: f64,
}

impl PairedDifference {
    /// Mean difference in paired standard errors.
    pub fn z(&self) -> f64 {
        self.mean / self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub family: String,
    pub truth: [f64; 2],
    pub n: usize,
    pub strata: Option<StrataDesign>,
    pub reps: usize,
    pub seed: u64,
    pub loss: Loss,
    pub convention: &'static str,
    pub estimators: Vec<EstimatorRisk>,
    pub paired: Vec<PairedDifference>,
}

impl RiskReport {
    pub fn estimator(&self, e: RiskEstimator) -> Option<&EstimatorRisk> {
        self.estimators.iter().find(|r| r.estimator == e)
    }

    pub fn paired(&self, a: RiskEstimator, b: RiskEstimator) -> Option<&PairedDifference> {
        self.paired.iter().find(|p| p.a == a && p.b == b)
    }
}

enum Outcome {
    Ok { losses: Vec<f64>, bias: [f64; 3] },
    Boundary,
    Failed(String),
}

fn classify(r: Result<(Vec<f64>, [f64; 3])>) -> Outcome {
    match r {
        Ok((losses, bias)) if losses.iter().chain(&bias).all(|v| v.is_finite()) => {
            Outcome::Ok { losses, bias }
        }
        Ok(_) => Outcome::Failed("non-finite loss".into()),
        Err(Error::Boundary { .. }) => Outcome::Boundary,
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

enum Model {
    Single(Arc<dyn Family>),
    Strata(Strata),
}

fn single_estimate(
    fam: &Arc<dyn Family>,
    data: &Dataset,
    e: RiskEstimator,
    q: &QuadratureConfig,
) -> Result<ParamPoint> {
    let f = fam.as_ref();
    match e {
        RiskEstimator::Mle => mle(f, data),
        RiskEstimator::Cml => Ok(ParamPoint::new(mle(f, data)?.lambda, conditional_mle(f, data)?.interior()?)),
        RiskEstimator::PmlMode => posterior_mode(f, data, &Prior::new(PriorKind::Pml, fam.clone())?)?.point(),
        RiskEstimator::MpmlMean => {
            let prior = Prior::new(PriorKind::Mpml, fam.clone())?;
            match posterior_mean(f, data, &prior, &Estimand::Canonical, q) {
                Ok(m) => f.from_canonical(m.value),
                Err(Error::Capability { .. }) => {
                    let m = posterior_mean(f, data, &prior, &Estimand::Raw, q)?;
                    Ok(ParamPoint::from_array(m.value))
                }
                Err(e) => Err(e),
            }
        }
    }
}

fn point_losses(
    f: &dyn Family,
    data: &Dataset,
    truth: ParamPoint,
    est: ParamPoint,
    loss: Loss,
) -> Result<(Vec<f64>, [f64; 3])> {
    f.check_domain(est)?;
    let losses = match loss {
        Loss::KlPlugin => vec![kl_divergence(f, truth, est, data.n())?],
        Loss::KlConditional => vec![conditional_kl(f, data, truth.psi, est.psi)?],
        Loss::SquaredError => vec![(est.lambda - truth.lambda).powi(2), (est.psi - truth.psi).powi(2)],
    };
    Ok((
        losses,
        [est.lambda - truth.lambda, est.psi - truth.psi, 1.0 / est.psi - 1.0 / truth.psi],
    ))
}

fn strata_losses(
    s: &Strata,
    parts: &[Dataset],
    truth: ParamPoint,
    e: RiskEstimator,
    loss: Loss,
) -> Result<(Vec<f64>, [f64; 3])> {
    let (lambdas, psi) = match e {
        RiskEstimator::Mle => s.mle(parts)?,
        RiskEstimator::Cml => {
            let psi = s.conditional_mle(parts)?.interior()?;
            (s.profile_lambdas(parts, psi)?, psi)
        }
        RiskEstimator::PmlMode => s.posterior_mode_pml(parts)?,
        RiskEstimator::MpmlMean => {
            return Err(Error::capability(&s.id(), "posterior-mean risk"));
        }
    };
    let inner = s.inner();
    let k = parts.len() as f64;
    let mut total = vec![0.0; loss.metrics().len()];
    let mut lambda_bias = 0.0;
    for (p, &l) in parts.iter().zip(&lambdas) {
        let (ls, b) = point_losses(inner, p, truth, ParamPoint::new(l, psi), loss)?;
        for (t, v) in total.iter_mut().zip(ls) {
            *t += v;
        }
        lambda_bias += b[0] / k;
    }
    if loss == Loss::SquaredError {
        // per-stratum λ errors are averaged; ψ is common
        total[0] /= k;
        total[1] /= k;
    }
    Ok((total, [lambda_bias, psi - truth.psi, 1.0 / psi - 1.0 / truth.psi]))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Seeded replications with common random numbers across estimators.
pub fn simulate_risk(cfg: &RiskConfig) -> Result<RiskReport> {
    cfg.validate()?;
    let truth = ParamPoint::from_array(cfg.truth);
    let model = match &cfg.design {
        Some([n, m]) => Model::Single(Arc::new(TwoBinomial::new(*n, *m)?)),
        None => match lookup(&cfg.family, None)? {
            Registered::Single(f) => Model::Single(f),
            Registered::Strata(s) => Model::Strata(s),
        },
    };
    let (family_id, n) = match &model {
        Model::Single(f) => {
            f.check_domain(truth)?;
            (f.id().to_string(), if cfg.design.is_some() { 1 } else { cfg.n })
        }
        Model::Strata(s) => {
            s.inner().check_domain(truth)?;
            let d = cfg.strata.expect("validated");
            (s.id(), d.k * d.n_k)
        }
    };
    let ests = &cfg.estimators;
    let outcomes: Vec<Vec<Outcome>> = cfg.execution.map(cfg.reps, |i| {
        let mut rng = replicate_rng(cfg.seed, 0, i as u32);
        match &model {
            Model::Single(f) => match f.sample(truth, cfg.n, &mut rng) {
                Ok(data) => ests
                    .iter()
                    .map(|&e| {
                        classify(
                            single_estimate(f, &data, e, &cfg.quadrature)
                                .and_then(|est| point_losses(f.as_ref(), &data, truth, est, cfg.loss)),
                        )
                    })
                    .collect(),
                Err(e) => ests.iter().map(|_| Outcome::Failed(e.to_string())).collect(),
            },
            Model::Strata(s) => {
                let d = cfg.strata.expect("validated");
                match s.sample(&vec![truth.lambda; d.k], truth.psi, &vec![d.n_k; d.k], &mut rng) {
                    Ok(parts) => ests
                        .iter()
                        .map(|&e| classify(strata_losses(s, &parts, truth, e, cfg.loss)))
                        .collect(),
                    Err(e) => ests.iter().map(|_| Outcome::Failed(e.to_string())).collect(),
                }
            }
        }
    });

    let metrics = cfg.loss.metrics();
    let mut estimators = Vec::with_capacity(ests.len());
    for (j, &e) in ests.iter().enumerate() {
        let mut losses: Vec<Vec<f64>> = vec![Vec::new(); metrics.len()];
        let mut bias: Vec<Vec<f64>> = vec![Vec::new(); 3];
        let (mut boundary, mut failures, mut first_failure) = (0, 0, None);
        for (i, rep) in outcomes.iter().enumerate() {
            match &rep[j] {
                Outcome::Ok { losses: l, bias: b } => {
                    for (acc, v) in losses.iter_mut().zip(l) {
                        acc.push(*v);
                    }
                    for (acc, v) in bias.iter_mut().zip(b) {
                        acc.push(*v);
                    }
                }
                Outcome::Boundary => boundary += 1,
                Outcome::Failed(msg) => {
                    failures += 1;
                    first_failure.get_or_insert_with(|| format!("replicate {i}: {msg}"));
                }
            }
        }
        let used = bias[0].len();
        let summarize = |names: &[&str], vals: &[Vec<f64>]| -> Vec<Summary> {
            names
                .iter()
                .zip(vals)
                .map(|(name, v)| {
                    let (mean, se) = if v.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(v) };
                    Summary { name: name.to_string(), mean, se }
                })
                .collect()
        };
        estimators.push(EstimatorRisk {
            estimator: e,
            losses: summarize(metrics, &losses),
            bias: summarize(&["lambda", "psi", "inv_psi"], &bias),
            used,
            boundary_events: boundary,
            failures,
            first_failure,
        });
    }

    let mut paired = Vec::new();
    for a in 0..ests.len() {
        for b in a + 1..ests.len() {
            for (m, name) in metrics.iter().enumerate() {
                let diffs: Vec<f64> = outcomes
                    .iter()
                    .filter_map(|rep| match (&rep[a], &rep[b]) {
                        (Outcome::Ok { losses: la, .. }, Outcome::Ok { losses: lb, .. }) => Some(la[m] - lb[m]),
                        _ => None,
                    })
                    .collect();
                let (mean, se) = if diffs.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&diffs) };
                paired.push(PairedDifference {
                    a: ests[a],
                    b: ests[b],
                    metric: name.to_string(),
                    pairs: diffs.len(),
                    mean,
                    se,
                });
            }
        }
    }

    Ok(RiskReport {
        family: family_id,
        truth: cfg.truth,
        n,
        strata: cfg.strata,
        reps: cfg.reps,
        seed: cfg.seed,
        loss: cfg.loss,
        convention: KL_CONVENTION,
        estimators,
        paired,
    })
}
