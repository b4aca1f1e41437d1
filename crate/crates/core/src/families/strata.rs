//! K strata sharing a common ψ, each with its own λ_k.

use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dataset, Family, ParamPoint, PsiHat};
use crate::optimize::maximize_1d;

/// Shape of a stratified dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrataSpec {
    pub k: usize,
    pub sizes: Vec<usize>,
    pub inner_id: String,
}

/// Stratified wrapper around a factorizable inner family.
#[derive(Debug, Clone)]
pub struct Strata {
    inner: Arc<dyn Family>,
}

impl Strata {
    pub fn new(inner: Arc<dyn Family>) -> Result<Self> {
        let d = inner.descriptor();
        if !d.factorizable {
            return Err(Error::capability(&d.family_id, "stratification (factorization)"));
        }
        Ok(Strata { inner })
    }

    pub fn inner(&self) -> &dyn Family {
        self.inner.as_ref()
    }

    pub fn id(&self) -> String {
        format!("strata:{}", self.inner.id())
    }

    pub fn spec(&self, parts: &[Dataset]) -> StrataSpec {
        StrataSpec {
            k: parts.len(),
            sizes: parts.iter().map(Dataset::n).collect(),
            inner_id: self.inner.id().to_string(),
        }
    }

    pub fn validate(&self, parts: &[Dataset]) -> Result<()> {
        if parts.is_empty() {
            return Err(Error::InvalidData("no strata".into()));
        }
        parts.iter().try_for_each(|p| self.inner.validate(p))
    }

    fn check_len(&self, parts: &[Dataset], lambdas: &[f64]) -> Result<()> {
        if parts.len() != lambdas.len() {
            return Err(Error::InvalidData(format!(
                "{} strata but {} stratum parameters",
                parts.len(),
                lambdas.len()
            )));
        }
        Ok(())
    }

    /// Σ_k log p(x_k | λ_k, ψ).
    pub fn log_joint(&self, parts: &[Dataset], lambdas: &[f64], psi: f64) -> Result<f64> {
        self.check_len(parts, lambdas)?;
        parts
            .iter()
            .zip(lambdas)
            .map(|(p, &l)| self.inner.log_joint(p, ParamPoint::new(l, psi)))
            .sum()
    }

    pub fn profile_lambdas(&self, parts: &[Dataset], psi: f64) -> Result<Vec<f64>> {
        parts.iter().map(|p| self.inner.profile_lambda(p, psi)).collect()
    }

    fn psi_start(&self, parts: &[Dataset]) -> f64 {
        let logs: Vec<f64> = parts
            .iter()
            .filter_map(|p| self.inner.mle(p).ok())
            .map(|m| m.psi.ln())
            .filter(|v| v.is_finite())
            .collect();
        if logs.is_empty() {
            0.0
        } else {
            logs.iter().sum::<f64>() / logs.len() as f64
        }
    }

    fn maximize_log_psi(&self, parts: &[Dataset], f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        let g = |u: f64| f(u.exp()).unwrap_or(f64::NEG_INFINITY);
        Ok(maximize_1d(g, self.psi_start(parts), 0.5)?.arg.exp())
    }

    /// Joint MLE `(λ̂_k, ψ̂_ML)`.
    pub fn mle(&self, parts: &[Dataset]) -> Result<(Vec<f64>, f64)> {
        self.validate(parts)?;
        let psi = self.maximize_log_psi(parts, |psi| {
            let l = self.profile_lambdas(parts, psi)?;
            self.log_joint(parts, &l, psi)
        })?;
        Ok((self.profile_lambdas(parts, psi)?, psi))
    }

    /// Σ_k log pc(x_k | t_k, ψ).
    pub fn log_conditional(&self, parts: &[Dataset], psi: f64) -> Result<f64> {
        parts
            .iter()
            .map(|p| self.inner.log_conditional(p, self.inner.ancillary(p)?, psi, None))
            .sum()
    }

    /// Conditional MLE of the common ψ.
    pub fn conditional_mle(&self, parts: &[Dataset]) -> Result<PsiHat> {
        self.validate(parts)?;
        let psi = self.maximize_log_psi(parts, |psi| self.log_conditional(parts, psi))?;
        Ok(PsiHat::Interior(psi))
    }

    /// Σ_k -log pm(t_k | λ̃_k(ψ), ψ).
    pub fn pml_log(&self, parts: &[Dataset], psi: f64) -> Result<f64> {
        let mut s = 0.0;
        for p in parts {
            let t = self.inner.ancillary(p)?;
            let l = self.inner.pml_lambda(p, t, psi)?;
            s -= self.inner.log_marginal_ancillary(p, t, ParamPoint::new(l, psi))?;
        }
        Ok(s)
    }

    /// Σ_k [PML_k + (1/2) log det I_k(λ_k, ψ)].
    pub fn mpml_log(&self, parts: &[Dataset], lambdas: &[f64], psi: f64) -> Result<f64> {
        self.check_len(parts, lambdas)?;
        let mut s = self.pml_log(parts, psi)?;
        for (p, &l) in parts.iter().zip(lambdas) {
            s += 0.5 * self.inner.log_fisher_det(ParamPoint::new(l, psi), p.n())?;
        }
        Ok(s)
    }

    /// Posterior mode under the strata PML prior: λ_k at the profile values,
    /// ψ maximizing the joint plus prior.
    pub fn posterior_mode_pml(&self, parts: &[Dataset]) -> Result<(Vec<f64>, f64)> {
        self.validate(parts)?;
        let psi = self.maximize_log_psi(parts, |psi| {
            let l = self.profile_lambdas(parts, psi)?;
            Ok(self.log_joint(parts, &l, psi)? + self.pml_log(parts, psi)?)
        })?;
        Ok((self.profile_lambdas(parts, psi)?, psi))
    }

    pub fn sample(
        &self,
        lambdas: &[f64],
        psi: f64,
        sizes: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Dataset>> {
        if lambdas.len() != sizes.len() {
            return Err(Error::InvalidData("strata sizes and parameters differ in length".into()));
        }
        lambdas
            .iter()
            .zip(sizes)
            .map(|(&l, &n)| self.inner.sample(ParamPoint::new(l, psi), n, rng))
            .collect()
    }
}
