//! Two independent binomials `x ~ Bi(n, p)`, `y ~ Bi(m, q)` in the
//! canonical-link form `logit p = α + ψ`, `logit q = α`, reparametrized as
//! `λ = np + mq` (the mean of `t = x + y`) and the log odds ratio ψ.

use rand::RngCore;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::model::{
    AncillaryKind, Dataset, Domain, Family, FamilyDescriptor, Interval, Matrix2, ParamPoint,
    PsiHat,
};
use crate::optimize::solve_increasing;
use crate::special::{ln_choose, log_sum_exp, logistic, softplus};

/// Counts of one 2×2 table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Table {
    pub x: u64,
    pub n: u64,
    pub y: u64,
    pub m: u64,
}

impl Table {
    pub fn t(&self) -> u64 {
        self.x + self.y
    }

    /// Conditional support of `x` given `t`.
    pub fn support(&self) -> (u64, u64) {
        let t = self.t();
        (t.saturating_sub(self.m), self.n.min(t))
    }
}

fn conditional_terms(n: u64, m: u64, t: u64, psi: f64) -> (u64, Vec<f64>) {
    let lo = t.saturating_sub(m);
    let hi = n.min(t);
    let terms = (lo..=hi)
        .map(|u| ln_choose(n, u) + ln_choose(m, t - u) + psi * u as f64)
        .collect();
    (lo, terms)
}

/// log P(X = x | X + Y = x + y) under log odds ratio ψ (noncentral
/// hypergeometric), normalized by log-sum-exp over the support.
pub fn binomial_conditional_loglik(x: u64, n: u64, y: u64, m: u64, psi: f64) -> Result<f64> {
    if x > n || y > m {
        return Err(Error::InvalidData(format!(
            "counts out of range: x={x} of {n}, y={y} of {m}"
        )));
    }
    let t = x + y;
    let (_, terms) = conditional_terms(n, m, t, psi);
    if terms.is_empty() {
        return Err(Error::InvalidData("empty conditional support".into()));
    }
    Ok(ln_choose(n, x) + ln_choose(m, y) + psi * x as f64 - log_sum_exp(&terms))
}

/// `(A(ψ), E[X|t], Var[X|t])` for the conditional distribution.
fn conditional_moments(n: u64, m: u64, t: u64, psi: f64) -> (f64, f64, f64) {
    let (lo, terms) = conditional_terms(n, m, t, psi);
    let a = log_sum_exp(&terms);
    let (mut m1, mut m2) = (0.0, 0.0);
    for (i, l) in terms.iter().enumerate() {
        let w = (l - a).exp();
        let u = (lo + i as u64) as f64;
        m1 += w * u;
        m2 += w * u * u;
    }
    (a, m1, (m2 - m1 * m1).max(0.0))
}

/// Two-binomial family with a fixed design `(n, m)`.
#[derive(Debug, Clone)]
pub struct TwoBinomial {
    n: u64,
    m: u64,
    desc: FamilyDescriptor,
}

impl TwoBinomial {
    pub fn new(n: u64, m: u64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidData("both binomial groups need trials".into()));
        }
        Ok(TwoBinomial {
            n,
            m,
            desc: FamilyDescriptor {
                family_id: "two-binomial".into(),
                domain: Domain {
                    lambda: Interval::new(0.0, (n + m) as f64),
                    psi: Interval::REAL,
                },
                ancillary_kind: AncillaryKind::Sum,
                factorizable: true,
                estimation_orthogonal: true,
                exponential_family: true,
                regular: true,
                marginal_variant: false,
            },
        })
    }

    /// Infer the design from 0/1 responses with a 0/1 group covariate
    /// (`z = 1` marks the first group).
    pub fn from_data(data: &Dataset) -> Result<Self> {
        let z = data
            .covariates()
            .ok_or_else(|| Error::InvalidData("two-binomial data need a `z` column".into()))?;
        let n = z.iter().filter(|&&v| v == 1.0).count() as u64;
        let m = z.iter().filter(|&&v| v == 0.0).count() as u64;
        TwoBinomial::new(n, m)
    }

    pub fn design(&self) -> (u64, u64) {
        (self.n, self.m)
    }

    /// Build Bernoulli rows for the given counts.
    pub fn dataset(&self, x: u64, y: u64) -> Result<Dataset> {
        if x > self.n || y > self.m {
            return Err(Error::InvalidData("counts exceed the design".into()));
        }
        let mut v = Vec::with_capacity((self.n + self.m) as usize);
        let mut z = Vec::with_capacity(v.capacity());
        for i in 0..self.n {
            v.push(if i < x { 1.0 } else { 0.0 });
            z.push(1.0);
        }
        for j in 0..self.m {
            v.push(if j < y { 1.0 } else { 0.0 });
            z.push(0.0);
        }
        Dataset::new(v)?.with_covariates(z)
    }

    pub fn table(&self, data: &Dataset) -> Result<Table> {
        self.validate(data)?;
        let z = data.covariates().unwrap_or(&[]);
        let (mut x, mut y) = (0u64, 0u64);
        for (&v, &g) in data.values().iter().zip(z) {
            if v == 1.0 {
                if g == 1.0 {
                    x += 1;
                } else {
                    y += 1;
                }
            }
        }
        Ok(Table {
            x,
            n: self.n,
            y,
            m: self.m,
        })
    }

    /// α solving `n σ(α + ψ) + m σ(α) = λ`.
    pub fn alpha(&self, lambda: f64, psi: f64) -> Result<f64> {
        let (n, m) = (self.n as f64, self.m as f64);
        let f = |a: f64| {
            let p = logistic(a + psi);
            let q = logistic(a);
            (n * p + m * q - lambda, n * p * (1.0 - p) + m * q * (1.0 - q))
        };
        let (mut lo, mut hi) = (-1.0, 1.0);
        for _ in 0..200 {
            if f(lo).0 < 0.0 {
                break;
            }
            lo *= 2.0;
        }
        for _ in 0..200 {
            if f(hi).0 > 0.0 {
                break;
            }
            hi *= 2.0;
        }
        solve_increasing(f, lo, hi)
    }

    fn probabilities(&self, theta: ParamPoint) -> Result<(f64, f64, f64)> {
        self.check_domain(theta)?;
        let a = self.alpha(theta.lambda, theta.psi)?;
        Ok((a, logistic(a + theta.psi), logistic(a)))
    }

    fn log_pm_alpha(&self, t: u64, alpha: f64, psi: f64) -> f64 {
        let (_, terms) = conditional_terms(self.n, self.m, t, psi);
        alpha * t as f64 + log_sum_exp(&terms)
            - self.n as f64 * softplus(alpha + psi)
            - self.m as f64 * softplus(alpha)
    }

    fn t_from(&self, t: f64) -> Result<u64> {
        if t < 0.0 || t.fract() != 0.0 || t > (self.n + self.m) as f64 {
            return Err(Error::InvalidData(format!("t = {t} is not a valid total")));
        }
        Ok(t as u64)
    }
}

fn bernoulli_kl(a: f64, b: f64) -> f64 {
    let term = |p: f64, q: f64| if p == 0.0 { 0.0 } else { p * (p / q).ln() };
    term(a, b) + term(1.0 - a, 1.0 - b)
}

impl Family for TwoBinomial {
    fn descriptor(&self) -> &FamilyDescriptor {
        &self.desc
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        let z = data
            .covariates()
            .ok_or_else(|| Error::InvalidData("two-binomial data need a `z` column".into()))?;
        if data.values().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidData("two-binomial responses must be 0 or 1".into()));
        }
        if z.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidData("two-binomial group covariate must be 0 or 1".into()));
        }
        let n = z.iter().filter(|&&v| v == 1.0).count() as u64;
        if n != self.n || z.len() as u64 - n != self.m {
            return Err(Error::InvalidData(format!(
                "design ({n}, {}) differs from the family design ({}, {})",
                z.len() as u64 - n,
                self.n,
                self.m
            )));
        }
        Ok(())
    }

    fn log_joint(&self, data: &Dataset, theta: ParamPoint) -> Result<f64> {
        let tab = self.table(data)?;
        let (a, _, _) = self.probabilities(theta)?;
        Ok(ln_choose(tab.n, tab.x) + ln_choose(tab.m, tab.y) + a * tab.t() as f64
            + theta.psi * tab.x as f64
            - tab.n as f64 * softplus(a + theta.psi)
            - tab.m as f64 * softplus(a))
    }

    fn ancillary(&self, data: &Dataset) -> Result<f64> {
        Ok(self.table(data)?.t() as f64)
    }

    fn log_marginal_ancillary(&self, _data: &Dataset, t: f64, theta: ParamPoint) -> Result<f64> {
        let t = self.t_from(t)?;
        let (a, _, _) = self.probabilities(theta)?;
        Ok(self.log_pm_alpha(t, a, theta.psi))
    }

    fn log_conditional(
        &self,
        data: &Dataset,
        t: f64,
        psi: f64,
        lambda: Option<f64>,
    ) -> Result<f64> {
        if lambda.is_some() {
            return Err(Error::capability(self.id(), "marginal-MLE factorization"));
        }
        let tab = self.table(data)?;
        if self.t_from(t)? != tab.t() {
            return Err(Error::InvalidData(format!(
                "conditioning value {t} differs from the observed total {}",
                tab.t()
            )));
        }
        binomial_conditional_loglik(tab.x, tab.n, tab.y, tab.m, psi)
    }

    fn profile_lambda(&self, data: &Dataset, _psi: f64) -> Result<f64> {
        let t = self.table(data)?.t();
        if t == 0 || t == self.n + self.m {
            return Err(Error::Boundary {
                what: "profile MLE of lambda",
                value: t as f64,
            });
        }
        Ok(t as f64)
    }

    fn fisher_info(&self, theta: ParamPoint, _n: usize) -> Result<Matrix2> {
        let (_, p, q) = self.probabilities(theta)?;
        let vp = self.n as f64 * p * (1.0 - p);
        let vq = self.m as f64 * q * (1.0 - q);
        Ok([[1.0 / (vp + vq), 0.0], [0.0, vp * vq / (vp + vq)]])
    }

    fn canonical_of(&self, theta: ParamPoint) -> Result<[f64; 2]> {
        let (a, _, _) = self.probabilities(theta)?;
        Ok([a, theta.psi])
    }

    fn from_canonical(&self, xi: [f64; 2]) -> Result<ParamPoint> {
        let lambda = self.n as f64 * logistic(xi[0] + xi[1]) + self.m as f64 * logistic(xi[0]);
        let p = ParamPoint::new(lambda, xi[1]);
        self.check_domain(p)?;
        Ok(p)
    }

    fn conditional_cumulant(&self, data: &Dataset, psi: f64) -> Result<(f64, f64)> {
        let tab = self.table(data)?;
        let (a, mean, _) = conditional_moments(self.n, self.m, tab.t(), psi);
        Ok((a, mean))
    }

    fn mle(&self, data: &Dataset) -> Result<ParamPoint> {
        let tab = self.table(data)?;
        let lambda = self.profile_lambda(data, 0.0)?;
        let (x, n, y, m) = (tab.x as f64, tab.n as f64, tab.y as f64, tab.m as f64);
        if tab.x == 0 || tab.x == tab.n || tab.y == 0 || tab.y == tab.m {
            let value = if (tab.x == tab.n || tab.y == 0) && !(tab.x == 0 || tab.y == tab.m) {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            return Err(Error::Boundary {
                what: "MLE of the log odds ratio",
                value,
            });
        }
        Ok(ParamPoint::new(lambda, (x * (m - y) / ((n - x) * y)).ln()))
    }

    fn conditional_mle(&self, data: &Dataset) -> Result<PsiHat> {
        let tab = self.table(data)?;
        let (lo, hi) = tab.support();
        if tab.x == lo {
            return Ok(PsiHat::Boundary(f64::NEG_INFINITY));
        }
        if tab.x == hi {
            return Ok(PsiHat::Boundary(f64::INFINITY));
        }
        let target = tab.x as f64;
        let f = |psi: f64| {
            let (_, mean, var) = conditional_moments(tab.n, tab.m, tab.t(), psi);
            (mean - target, var)
        };
        let (mut a, mut b) = (-1.0, 1.0);
        while f(a).0 > 0.0 {
            a *= 2.0;
        }
        while f(b).0 < 0.0 {
            b *= 2.0;
        }
        Ok(PsiHat::Interior(solve_increasing(f, a, b)?))
    }

    fn sample(&self, theta: ParamPoint, _n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        let (_, p, q) = self.probabilities(theta)?;
        let bx = Binomial::new(self.n, p).map_err(|e| Error::Numerical(e.to_string()))?;
        let by = Binomial::new(self.m, q).map_err(|e| Error::Numerical(e.to_string()))?;
        let x = bx.sample(rng);
        let y = by.sample(rng);
        self.dataset(x, y)
    }

    fn kl(&self, a: ParamPoint, b: ParamPoint, _n: usize) -> Result<f64> {
        if a == b {
            self.check_domain(a)?;
            return Ok(0.0);
        }
        let (_, pa, qa) = self.probabilities(a)?;
        let (_, pb, qb) = self.probabilities(b)?;
        Ok((self.n as f64 * bernoulli_kl(pa, pb) + self.m as f64 * bernoulli_kl(qa, qb)).max(0.0))
    }
}
