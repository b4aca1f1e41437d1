//! The sampling-family contract and the shared data types.

use std::sync::OnceLock;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A parameter point `(lambda, psi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamPoint {
    pub lambda: f64,
    pub psi: f64,
}

impl ParamPoint {
    pub fn new(lambda: f64, psi: f64) -> Self {
        ParamPoint { lambda, psi }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.lambda, self.psi]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        ParamPoint::new(a[0], a[1])
    }
}

/// An open interval `(lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    pub const POSITIVE: Interval = Interval {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }

    /// The natural unconstraining transform for this interval.
    pub fn default_transform(&self) -> Transform {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (false, false) => Transform::Identity,
            (true, false) => Transform::Log { shift: self.lo },
            (true, true) => Transform::Logit {
                lo: self.lo,
                hi: self.hi,
            },
            (false, true) => Transform::NegLog { shift: self.hi },
        }
    }
}

/// Map from an unconstrained coordinate `u` onto a parameter interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    Identity,
    /// `v = shift + e^u`
    Log { shift: f64 },
    /// `v = shift - e^u`
    NegLog { shift: f64 },
    /// `v = lo + (hi - lo) / (1 + e^{-u})`
    Logit { lo: f64, hi: f64 },
}

impl Transform {
    pub fn to_param(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => u,
            Transform::Log { shift } => shift + u.exp(),
            Transform::NegLog { shift } => shift - u.exp(),
            Transform::Logit { lo, hi } => lo + (hi - lo) * crate::special::logistic(u),
        }
    }

    pub fn to_unconstrained(&self, v: f64) -> f64 {
        match *self {
            Transform::Identity => v,
            Transform::Log { shift } => (v - shift).ln(),
            Transform::NegLog { shift } => (shift - v).ln(),
            Transform::Logit { lo, hi } => {
                let p = (v - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            }
        }
    }

    /// log |dv/du|
    pub fn log_jacobian(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::Log { .. } | Transform::NegLog { .. } => u,
            Transform::Logit { lo, hi } => {
                (hi - lo).ln() - crate::special::softplus(u) - crate::special::softplus(-u)
            }
        }
    }
}

/// The open parameter box of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Domain {
    pub lambda: Interval,
    pub psi: Interval,
}

impl Domain {
    pub fn contains(&self, theta: ParamPoint) -> bool {
        self.lambda.contains(theta.lambda) && self.psi.contains(theta.psi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AncillaryKind {
    ProfileMle,
    Median,
    Midrange,
    Sum,
}

/// Static description of a sampling family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyDescriptor {
    pub family_id: String,
    pub domain: Domain,
    pub ancillary_kind: AncillaryKind,
    /// `p(x|λ,ψ) = pm(t|λ,ψ) pc(x|t,ψ)` holds.
    pub factorizable: bool,
    /// The profile MLE of λ does not depend on ψ.
    pub estimation_orthogonal: bool,
    pub exponential_family: bool,
    /// Fisher information is defined classically.
    pub regular: bool,
    /// `p(x|λ,ψ) = pc(x|t,λ,ψ) pm(t|ψ)` is also available.
    pub marginal_variant: bool,
}

/// Cached sufficient summaries of a sample.
#[derive(Debug, Clone)]
pub struct Summary {
    pub n: usize,
    pub sum: f64,
    pub mean: f64,
    /// Σ (x_i - x̄)^2
    pub ss: f64,
    /// Σ log x_i (NaN if some x_i <= 0)
    pub sum_log: f64,
    /// Σ 1/x_i (NaN if some x_i <= 0)
    pub sum_inv: f64,
    pub sorted: Vec<f64>,
}

/// Observations with optional covariates and stratum labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Vec<f64>,
    z: Option<Vec<f64>>,
    strata: Option<Vec<usize>>,
    summary: OnceLock<Summary>,
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

impl Dataset {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 observations, got {}",
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("observation {i} is not finite")));
        }
        Ok(Dataset {
            x,
            z: None,
            strata: None,
            summary: OnceLock::new(),
        })
    }

    /// Attach a covariate vector; it must have non-zero spread.
    pub fn with_covariates(mut self, z: Vec<f64>) -> Result<Self> {
        if z.len() != self.x.len() {
            return Err(Error::InvalidData(format!(
                "covariate length {} differs from observation count {}",
                z.len(),
                self.x.len()
            )));
        }
        let zbar = z.iter().sum::<f64>() / z.len() as f64;
        let szz: f64 = z.iter().map(|v| (v - zbar).powi(2)).sum();
        if szz == 0.0 {
            return Err(Error::InvalidData(
                "covariate has zero variance (Σ(z_i - z̄)^2 = 0)".into(),
            ));
        }
        self.z = Some(z);
        Ok(self)
    }

    /// Attach stratum labels; every stratum needs at least two rows.
    pub fn with_strata(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.x.len() {
            return Err(Error::InvalidData(format!(
                "stratum column length {} differs from observation count {}",
                labels.len(),
                self.x.len()
            )));
        }
        let mut counts = std::collections::BTreeMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        if let Some((l, c)) = counts.iter().find(|(_, c)| **c < 2) {
            return Err(Error::InvalidData(format!(
                "stratum {l} has {c} observation(s); at least 2 required"
            )));
        }
        self.strata = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn covariates(&self) -> Option<&[f64]> {
        self.z.as_deref()
    }

    pub fn stratum_labels(&self) -> Option<&[usize]> {
        self.strata.as_deref()
    }

    /// Split into per-stratum datasets ordered by label.
    pub fn split_strata(&self) -> Result<Vec<Dataset>> {
        let labels = self
            .strata
            .as_ref()
            .ok_or_else(|| Error::InvalidData("dataset has no stratum column".into()))?;
        let mut groups: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for (&l, &v) in labels.iter().zip(&self.x) {
            groups.entry(l).or_default().push(v);
        }
        groups.into_values().map(Dataset::new).collect()
    }

    pub fn summary(&self) -> &Summary {
        self.summary.get_or_init(|| {
            let n = self.x.len();
            let sum = pairwise_sum(&self.x);
            let mean = sum / n as f64;
            let dev: Vec<f64> = self.x.iter().map(|v| (v - mean) * (v - mean)).collect();
            let positive = self.x.iter().all(|&v| v > 0.0);
            let (sum_log, sum_inv) = if positive {
                let logs: Vec<f64> = self.x.iter().map(|v| v.ln()).collect();
                let invs: Vec<f64> = self.x.iter().map(|v| 1.0 / v).collect();
                (pairwise_sum(&logs), pairwise_sum(&invs))
            } else {
                (f64::NAN, f64::NAN)
            };
            let mut sorted = self.x.clone();
            sorted.sort_by(f64::total_cmp);
            Summary {
                n,
                sum,
                mean,
                ss: pairwise_sum(&dev),
                sum_log,
                sum_inv,
                sorted,
            }
        })
    }

    /// Sample median; even `n` takes the midpoint of the two central values.
    pub fn median(&self) -> f64 {
        let s = &self.summary().sorted;
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    }

    pub fn midrange(&self) -> f64 {
        let s = &self.summary().sorted;
        0.5 * (s[0] + s[s.len() - 1])
    }

    pub fn range(&self) -> f64 {
        let s = &self.summary().sorted;
        s[s.len() - 1] - s[0]
    }

    /// FNV-1a hash of the raw bit patterns, for prior context tagging.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        self.x.iter().for_each(|&v| eat(v));
        if let Some(z) = &self.z {
            z.iter().for_each(|&v| eat(v));
        }
        h
    }
}

/// A conditional MLE of ψ, which may sit on the boundary of the parameter
/// space (two-binomial tables at the edge of the conditional support).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum PsiHat {
    Interior(f64),
    /// Signed infinite estimate.
    Boundary(f64),
}

impl PsiHat {
    pub fn value(&self) -> f64 {
        match *self {
            PsiHat::Interior(v) | PsiHat::Boundary(v) => v,
        }
    }

    pub fn interior(&self) -> Result<f64> {
        match *self {
            PsiHat::Interior(v) => Ok(v),
            PsiHat::Boundary(v) => Err(Error::Boundary {
                what: "conditional MLE of psi",
                value: v,
            }),
        }
    }
}

pub type Matrix2 = [[f64; 2]; 2];

/// A two-parameter sampling family.
///
/// Densities are exact, constants included, so that
/// `log_joint = log_marginal_ancillary + log_conditional` holds identically.
pub trait Family: Send + Sync + std::fmt::Debug {
    fn descriptor(&self) -> &FamilyDescriptor;

    fn id(&self) -> &str {
        &self.descriptor().family_id
    }

    /// Check that the data lie in the support and carry the required columns.
    fn validate(&self, data: &Dataset) -> Result<()>;

    fn check_domain(&self, theta: ParamPoint) -> Result<()> {
        if self.descriptor().domain.contains(theta) {
            Ok(())
        } else {
            Err(Error::Domain {
                family: self.id().to_string(),
                lambda: theta.lambda,
                psi: theta.psi,
            })
        }
    }

    fn log_joint(&self, data: &Dataset, theta: ParamPoint) -> Result<f64>;

    /// The support of `x` moves with the parameter; generic 2-D posterior
    /// quadrature does not apply.
    fn support_depends_on_parameter(&self) -> bool {
        false
    }

    fn ancillary(&self, data: &Dataset) -> Result<f64>;

    /// log pm(t|λ,ψ), a normalized density (or pmf) in `t`. `data` supplies
    /// the sample size and any design information.
    fn log_marginal_ancillary(&self, data: &Dataset, t: f64, theta: ParamPoint) -> Result<f64> {
        let _ = (data, t, theta);
        Err(Error::capability(self.id(), "marginal density of the ancillary"))
    }

    /// log pc(x|t,ψ); with `lambda = Some(_)` the marginal-MLE variant
    /// log pc(x|t,λ,ψ) is evaluated instead.
    fn log_conditional(
        &self,
        data: &Dataset,
        t: f64,
        psi: f64,
        lambda: Option<f64>,
    ) -> Result<f64> {
        let _ = (data, t, psi, lambda);
        Err(Error::capability(self.id(), "conditional density given the ancillary"))
    }

    /// log pm(t|ψ) of the marginal-MLE factorization.
    fn log_marginal_variant(&self, data: &Dataset, t: f64, psi: f64) -> Result<f64> {
        let _ = (data, t, psi);
        Err(Error::capability(self.id(), "marginal-MLE factorization"))
    }

    /// The statistic `t` of the marginal-MLE factorization.
    fn marginal_variant_statistic(&self, data: &Dataset) -> Result<f64> {
        let _ = data;
        Err(Error::capability(self.id(), "marginal-MLE factorization"))
    }

    /// argmax_λ log_joint at fixed ψ.
    fn profile_lambda(&self, data: &Dataset, psi: f64) -> Result<f64>;

    /// λ at which the marginal of `t` is evaluated for the PML prior.
    fn pml_lambda(&self, data: &Dataset, t: f64, psi: f64) -> Result<f64> {
        let _ = t;
        self.profile_lambda(data, psi)
    }

    fn fisher_info(&self, theta: ParamPoint, n: usize) -> Result<Matrix2> {
        let _ = (theta, n);
        Err(Error::capability(self.id(), "Fisher information"))
    }

    /// `(log I_11, log I_22)` when the information is diagonal, computed
    /// without underflow where the family can.
    fn log_fisher_diagonal(&self, theta: ParamPoint, n: usize) -> Result<Option<[f64; 2]>> {
        let i = self.fisher_info(theta, n)?;
        if i[0][1] != 0.0 || i[1][0] != 0.0 {
            return Ok(None);
        }
        Ok(Some([i[0][0].ln(), i[1][1].ln()]))
    }

    /// log det I(θ) for an `n`-sample.
    fn log_fisher_det(&self, theta: ParamPoint, n: usize) -> Result<f64> {
        let v = match self.log_fisher_diagonal(theta, n)? {
            Some([a, b]) => a + b,
            None => {
                let i = self.fisher_info(theta, n)?;
                (i[0][0] * i[1][1] - i[0][1] * i[1][0]).ln()
            }
        };
        if v.is_nan() || v == f64::INFINITY || v == f64::NEG_INFINITY {
            return Err(Error::Numerical(format!(
                "Fisher information is singular at ({}, {})",
                theta.lambda, theta.psi
            )));
        }
        Ok(v)
    }

    fn canonical_of(&self, theta: ParamPoint) -> Result<[f64; 2]> {
        let _ = theta;
        Err(Error::capability(self.id(), "canonical coordinates"))
    }

    fn from_canonical(&self, xi: [f64; 2]) -> Result<ParamPoint> {
        let _ = xi;
        Err(Error::capability(self.id(), "canonical coordinates"))
    }

    /// `(A(ψ), A'(ψ))` where `log pc = ψ T(x) - A(ψ) + h(x)`.
    fn conditional_cumulant(&self, data: &Dataset, psi: f64) -> Result<(f64, f64)> {
        let _ = (data, psi);
        Err(Error::capability(self.id(), "exponential-family conditional cumulant"))
    }

    fn mle(&self, data: &Dataset) -> Result<ParamPoint>;

    /// Conditional MLE of ψ. The default maximizes `log_conditional`
    /// numerically in the unconstrained ψ coordinate.
    fn conditional_mle(&self, data: &Dataset) -> Result<PsiHat> {
        let t = self.ancillary(data)?;
        let tr = self.descriptor().domain.psi.default_transform();
        let start = tr.to_unconstrained(self.mle(data)?.psi);
        let f = |u: f64| {
            self.log_conditional(data, t, tr.to_param(u), None)
                .unwrap_or(f64::NEG_INFINITY)
        };
        let m = crate::optimize::maximize_1d(f, start, 0.5)?;
        Ok(PsiHat::Interior(tr.to_param(m.arg)))
    }

    /// Draw a dataset of size `n` (for designed families, the design size).
    fn sample(&self, theta: ParamPoint, n: usize, rng: &mut dyn RngCore) -> Result<Dataset>;

    /// KL(p(·|a) ‖ p(·|b)) for an `n`-observation replicate.
    fn kl(&self, a: ParamPoint, b: ParamPoint, n: usize) -> Result<f64>;
}
