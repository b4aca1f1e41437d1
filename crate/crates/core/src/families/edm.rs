//! Exponential dispersion models
//! `p(x|λ,ψ) = exp[ψ Σ{x_i c(λ) - M(c(λ)) - N(x_i)}] Π a(x_i) exp{n k(ψ)}`.

use rand::RngCore;
use rand_distr::{Distribution, Gamma, InverseGaussian, Normal};

use crate::error::{Error, Result};
use crate::model::{
    AncillaryKind, Dataset, Domain, Family, FamilyDescriptor, Interval, Matrix2, ParamPoint,
    PsiHat,
};
use crate::optimize::solve_increasing;
use crate::special::{digamma, ln_gamma, trigamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdmKind {
    Normal,
    Gamma,
    InverseGaussian,
}

/// The ingredients `c, M, N, a, k` of one dispersion model.
#[derive(Debug, Clone, Copy)]
pub struct EdmSpec {
    pub kind: EdmKind,
}

impl EdmSpec {
    /// Canonical link η = c(λ).
    pub fn link(&self, lambda: f64) -> f64 {
        match self.kind {
            EdmKind::Normal => lambda,
            EdmKind::Gamma => -1.0 / lambda,
            EdmKind::InverseGaussian => -0.5 / (lambda * lambda),
        }
    }

    pub fn link_inverse(&self, eta: f64) -> f64 {
        match self.kind {
            EdmKind::Normal => eta,
            EdmKind::Gamma => -1.0 / eta,
            EdmKind::InverseGaussian => (-0.5 / eta).sqrt(),
        }
    }

    /// c'(λ)
    pub fn link_derivative(&self, lambda: f64) -> f64 {
        match self.kind {
            EdmKind::Normal => 1.0,
            EdmKind::Gamma => 1.0 / (lambda * lambda),
            EdmKind::InverseGaussian => 1.0 / (lambda * lambda * lambda),
        }
    }

    /// log c'(λ)
    pub fn log_link_derivative(&self, lambda: f64) -> f64 {
        match self.kind {
            EdmKind::Normal => 0.0,
            EdmKind::Gamma => -2.0 * lambda.ln(),
            EdmKind::InverseGaussian => -3.0 * lambda.ln(),
        }
    }

    /// Cumulant M(η).
    pub fn cumulant(&self, eta: f64) -> f64 {
        match self.kind {
            EdmKind::Normal => 0.5 * eta * eta,
            EdmKind::Gamma => -(-eta).ln(),
            EdmKind::InverseGaussian => -(-2.0 * eta).sqrt(),
        }
    }

    /// M'(η), the mean.
    pub fn cumulant_derivative(&self, eta: f64) -> f64 {
        match self.kind {
            EdmKind::Normal => eta,
            EdmKind::Gamma => -1.0 / eta,
            EdmKind::InverseGaussian => 1.0 / (-2.0 * eta).sqrt(),
        }
    }

    /// Convex conjugate N(x) = sup_η {xη - M(η)}.
    pub fn conjugate(&self, x: f64) -> f64 {
        match self.kind {
            EdmKind::Normal => 0.5 * x * x,
            EdmKind::Gamma => -1.0 - x.ln(),
            EdmKind::InverseGaussian => 0.5 / x,
        }
    }

    /// log a(x)
    pub fn log_carrier(&self, x: f64) -> f64 {
        match self.kind {
            EdmKind::Normal => -0.5 * LN_2PI,
            EdmKind::Gamma => -x.ln(),
            EdmKind::InverseGaussian => -0.5 * LN_2PI - 1.5 * x.ln(),
        }
    }

    /// Dispersion cumulant k(ψ).
    pub fn k(&self, psi: f64) -> f64 {
        match self.kind {
            EdmKind::Normal | EdmKind::InverseGaussian => 0.5 * psi.ln(),
            EdmKind::Gamma => psi * psi.ln() - psi - ln_gamma(psi),
        }
    }

    pub fn k1(&self, psi: f64) -> f64 {
        match self.kind {
            EdmKind::Normal | EdmKind::InverseGaussian => 0.5 / psi,
            EdmKind::Gamma => psi.ln() - digamma(psi),
        }
    }

    pub fn k2(&self, psi: f64) -> f64 {
        match self.kind {
            EdmKind::Normal | EdmKind::InverseGaussian => -0.5 / (psi * psi),
            EdmKind::Gamma => 1.0 / psi - trigamma(psi),
        }
    }

    fn in_support(&self, x: f64) -> bool {
        match self.kind {
            EdmKind::Normal => x.is_finite(),
            EdmKind::Gamma | EdmKind::InverseGaussian => x > 0.0 && x.is_finite(),
        }
    }
}

/// Normal, gamma or inverse Gaussian family with mean λ and dispersion ψ.
#[derive(Debug, Clone)]
pub struct Edm {
    spec: EdmSpec,
    desc: FamilyDescriptor,
}

impl Edm {
    pub fn new(kind: EdmKind) -> Self {
        let (id, lambda) = match kind {
            EdmKind::Normal => ("normal", Interval::REAL),
            EdmKind::Gamma => ("gamma", Interval::POSITIVE),
            EdmKind::InverseGaussian => ("invgauss", Interval::POSITIVE),
        };
        Edm {
            spec: EdmSpec { kind },
            desc: FamilyDescriptor {
                family_id: id.to_string(),
                domain: Domain {
                    lambda,
                    psi: Interval::POSITIVE,
                },
                ancillary_kind: AncillaryKind::ProfileMle,
                factorizable: true,
                estimation_orthogonal: true,
                exponential_family: true,
                regular: true,
                marginal_variant: matches!(kind, EdmKind::Normal | EdmKind::InverseGaussian),
            },
        }
    }

    pub fn normal() -> Self {
        Edm::new(EdmKind::Normal)
    }

    pub fn gamma() -> Self {
        Edm::new(EdmKind::Gamma)
    }

    pub fn inverse_gaussian() -> Self {
        Edm::new(EdmKind::InverseGaussian)
    }

    pub fn spec(&self) -> &EdmSpec {
        &self.spec
    }

    pub fn kind(&self) -> EdmKind {
        self.spec.kind
    }

    /// D = Σ N(x_i) - n N(x̄) ≥ 0, the statistic carrying ψ in pc.
    pub fn deviance(&self, data: &Dataset) -> f64 {
        let s = data.summary();
        let n = s.n as f64;
        match self.spec.kind {
            EdmKind::Normal => 0.5 * s.ss,
            EdmKind::Gamma => (n * s.mean.ln() - s.sum_log).max(0.0),
            EdmKind::InverseGaussian => (0.5 * s.sum_inv - 0.5 * n / s.mean).max(0.0),
        }
    }

    fn sum_conjugate(&self, data: &Dataset) -> f64 {
        let s = data.summary();
        let n = s.n as f64;
        match self.spec.kind {
            EdmKind::Normal => 0.5 * (s.ss + n * s.mean * s.mean),
            EdmKind::Gamma => -n - s.sum_log,
            EdmKind::InverseGaussian => 0.5 * s.sum_inv,
        }
    }

    fn sum_log_carrier(&self, data: &Dataset) -> f64 {
        let s = data.summary();
        let n = s.n as f64;
        match self.spec.kind {
            EdmKind::Normal => -0.5 * n * LN_2PI,
            EdmKind::Gamma => -s.sum_log,
            EdmKind::InverseGaussian => -0.5 * n * LN_2PI - 1.5 * s.sum_log,
        }
    }

    /// The two factors `(log pm(x̄|λ,ψ), log pc(x|x̄,ψ))`.
    pub fn factor_split(&self, data: &Dataset, theta: ParamPoint) -> Result<(f64, f64)> {
        self.validate(data)?;
        self.check_domain(theta)?;
        let t = data.summary().mean;
        Ok((
            self.log_pm(data.n(), t, theta),
            self.log_pc(data, theta.psi),
        ))
    }

    fn log_pm(&self, n: usize, t: f64, theta: ParamPoint) -> f64 {
        let sp = &self.spec;
        let n = n as f64;
        let eta = sp.link(theta.lambda);
        let npsi = n * theta.psi;
        npsi * (t * eta - sp.cumulant(eta) - sp.conjugate(t)) + sp.log_carrier(t) + sp.k(npsi)
    }

    fn log_pc(&self, data: &Dataset, psi: f64) -> f64 {
        let sp = &self.spec;
        let n = data.n() as f64;
        let t = data.summary().mean;
        -psi * self.deviance(data) + self.sum_log_carrier(data) - sp.log_carrier(t) + n * sp.k(psi)
            - sp.k(n * psi)
    }

    /// log-density of D ~ Gamma((n-1)/2, rate ψ), valid for normal and
    /// inverse Gaussian samples.
    fn log_deviance_density(&self, n: usize, d: f64, psi: f64) -> f64 {
        let a = 0.5 * (n as f64 - 1.0);
        a * psi.ln() + (a - 1.0) * d.ln() - psi * d - ln_gamma(a)
    }

    /// Posterior-free solve of `h(ψ) = target` for a decreasing `h` in log ψ.
    fn solve_decreasing_in_log(
        &self,
        h: impl Fn(f64) -> (f64, f64),
        target: f64,
    ) -> Result<f64> {
        // increasing function of u: target - h(e^u)
        let f = |u: f64| {
            let psi = u.exp();
            let (v, dv) = h(psi);
            (target - v, -dv * psi)
        };
        let (mut lo, mut hi) = (-1.0, 1.0);
        let mut guard = 0;
        while f(lo).0 > 0.0 {
            lo *= 2.0;
            guard += 1;
            if guard > 12 {
                return Err(Error::DegenerateData("psi estimate diverges to 0".into()));
            }
        }
        while f(hi).0 < 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 24 {
                return Err(Error::DegenerateData("psi estimate diverges to infinity".into()));
            }
        }
        Ok(solve_increasing(f, lo, hi)?.exp())
    }
}

impl Family for Edm {
    fn descriptor(&self) -> &FamilyDescriptor {
        &self.desc
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        if let Some(i) = data.values().iter().position(|&x| !self.spec.in_support(x)) {
            return Err(Error::InvalidData(format!(
                "observation {i} = {} is outside the support of `{}`",
                data.values()[i],
                self.id()
            )));
        }
        Ok(())
    }

    fn log_joint(&self, data: &Dataset, theta: ParamPoint) -> Result<f64> {
        self.check_domain(theta)?;
        self.validate(data)?;
        let sp = &self.spec;
        let s = data.summary();
        let n = s.n as f64;
        let eta = sp.link(theta.lambda);
        if !eta.is_finite() {
            // the likelihood vanishes at the edge of the link's range
            return Ok(f64::NEG_INFINITY);
        }
        Ok(theta.psi * (n * (s.mean * eta - sp.cumulant(eta)) - self.sum_conjugate(data))
            + self.sum_log_carrier(data)
            + n * sp.k(theta.psi))
    }

    fn ancillary(&self, data: &Dataset) -> Result<f64> {
        self.validate(data)?;
        Ok(data.summary().mean)
    }

    fn log_marginal_ancillary(&self, data: &Dataset, t: f64, theta: ParamPoint) -> Result<f64> {
        self.check_domain(theta)?;
        if !self.spec.in_support(t) {
            return Err(Error::InvalidData(format!("ancillary value {t} outside the support")));
        }
        Ok(self.log_pm(data.n(), t, theta))
    }

    fn log_conditional(
        &self,
        data: &Dataset,
        t: f64,
        psi: f64,
        lambda: Option<f64>,
    ) -> Result<f64> {
        self.validate(data)?;
        if !(psi > 0.0) {
            return Err(Error::Domain {
                family: self.id().to_string(),
                lambda: lambda.unwrap_or(f64::NAN),
                psi,
            });
        }
        match lambda {
            None => {
                let xbar = data.summary().mean;
                if (t - xbar).abs() > 1e-9 * xbar.abs().max(1.0) {
                    return Err(Error::InvalidData(format!(
                        "conditioning value {t} differs from the sample mean {xbar}"
                    )));
                }
                Ok(self.log_pc(data, psi))
            }
            Some(l) => {
                let joint = self.log_joint(data, ParamPoint::new(l, psi))?;
                Ok(joint - self.log_marginal_variant(data, t, psi)?)
            }
        }
    }

    fn log_marginal_variant(&self, data: &Dataset, t: f64, psi: f64) -> Result<f64> {
        if !self.desc.marginal_variant {
            return Err(Error::capability(self.id(), "marginal-MLE factorization"));
        }
        if !(t > 0.0) {
            return Err(Error::DegenerateData("deviance statistic is zero".into()));
        }
        Ok(self.log_deviance_density(data.n(), t, psi))
    }

    fn marginal_variant_statistic(&self, data: &Dataset) -> Result<f64> {
        if !self.desc.marginal_variant {
            return Err(Error::capability(self.id(), "marginal-MLE factorization"));
        }
        self.validate(data)?;
        Ok(self.deviance(data))
    }

    fn profile_lambda(&self, data: &Dataset, _psi: f64) -> Result<f64> {
        self.ancillary(data)
    }

    fn fisher_info(&self, theta: ParamPoint, n: usize) -> Result<Matrix2> {
        self.check_domain(theta)?;
        let n = n as f64;
        let i11 = n * theta.psi * self.spec.link_derivative(theta.lambda);
        let i22 = -n * self.spec.k2(theta.psi);
        Ok([[i11, 0.0], [0.0, i22]])
    }

    fn log_fisher_diagonal(&self, theta: ParamPoint, n: usize) -> Result<Option<[f64; 2]>> {
        self.check_domain(theta)?;
        let n = n as f64;
        Ok(Some([
            (n * theta.psi).ln() + self.spec.log_link_derivative(theta.lambda),
            (-n * self.spec.k2(theta.psi)).ln(),
        ]))
    }

    fn canonical_of(&self, theta: ParamPoint) -> Result<[f64; 2]> {
        self.check_domain(theta)?;
        Ok([theta.psi * self.spec.link(theta.lambda), theta.psi])
    }

    fn from_canonical(&self, xi: [f64; 2]) -> Result<ParamPoint> {
        let p = ParamPoint::new(self.spec.link_inverse(xi[0] / xi[1]), xi[1]);
        self.check_domain(p)?;
        Ok(p)
    }

    fn conditional_cumulant(&self, data: &Dataset, psi: f64) -> Result<(f64, f64)> {
        let sp = &self.spec;
        let n = data.n() as f64;
        Ok((
            sp.k(n * psi) - n * sp.k(psi),
            n * sp.k1(n * psi) - n * sp.k1(psi),
        ))
    }

    fn mle(&self, data: &Dataset) -> Result<ParamPoint> {
        self.validate(data)?;
        let n = data.n() as f64;
        let d = self.deviance(data);
        if !(d > 0.0) {
            return Err(Error::DegenerateData("all observations are equal".into()));
        }
        let psi = match self.spec.kind {
            EdmKind::Normal | EdmKind::InverseGaussian => 0.5 * n / d,
            // log ψ - digamma(ψ) = D/n
            EdmKind::Gamma => {
                self.solve_decreasing_in_log(|p| (self.spec.k1(p), self.spec.k2(p)), d / n)?
            }
        };
        Ok(ParamPoint::new(data.summary().mean, psi))
    }

    fn conditional_mle(&self, data: &Dataset) -> Result<PsiHat> {
        self.validate(data)?;
        let n = data.n() as f64;
        let d = self.deviance(data);
        if !(d > 0.0) {
            return Err(Error::DegenerateData("all observations are equal".into()));
        }
        let psi = match self.spec.kind {
            EdmKind::Normal | EdmKind::InverseGaussian => 0.5 * (n - 1.0) / d,
            // n k'(ψ) - n k'(nψ) = D
            EdmKind::Gamma => {
                let sp = self.spec;
                self.solve_decreasing_in_log(
                    |p| {
                        (
                            n * (sp.k1(p) - sp.k1(n * p)),
                            n * (sp.k2(p) - n * sp.k2(n * p)),
                        )
                    },
                    d,
                )?
            }
        };
        Ok(PsiHat::Interior(psi))
    }

    fn sample(&self, theta: ParamPoint, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        self.check_domain(theta)?;
        let (l, p) = (theta.lambda, theta.psi);
        let x: Vec<f64> = match self.spec.kind {
            EdmKind::Normal => {
                let d = Normal::new(l, 1.0 / p.sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            EdmKind::Gamma => {
                let d = Gamma::new(p, l / p).map_err(|e| Error::Numerical(e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            EdmKind::InverseGaussian => {
                let d = InverseGaussian::new(l, p).map_err(|e| Error::Numerical(e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
        };
        Dataset::new(x)
    }

    fn kl(&self, a: ParamPoint, b: ParamPoint, n: usize) -> Result<f64> {
        self.check_domain(a)?;
        self.check_domain(b)?;
        if a == b {
            return Ok(0.0);
        }
        let per = match self.spec.kind {
            EdmKind::Normal => {
                let r = b.psi / a.psi;
                0.5 * (r - r.ln() - 1.0 + b.psi * (a.lambda - b.lambda).powi(2))
            }
            EdmKind::Gamma => {
                // shape α = ψ, rate β = ψ/λ
                let (aa, ab) = (a.psi, b.psi);
                let (ba, bb) = (a.psi / a.lambda, b.psi / b.lambda);
                (aa - ab) * digamma(aa) - ln_gamma(aa) + ln_gamma(ab) + ab * (ba.ln() - bb.ln())
                    + aa * (bb - ba) / ba
            }
            EdmKind::InverseGaussian => {
                let r = b.psi / a.psi;
                0.5 * (r - r.ln() - 1.0)
                    + b.psi * (a.lambda - b.lambda).powi(2) / (2.0 * a.lambda * b.lambda * b.lambda)
            }
        };
        Ok(n as f64 * per.max(0.0))
    }
}
