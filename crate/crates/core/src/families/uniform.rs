//! Uniform location-scale family `U(λ - 1/ψ, λ + 1/ψ)`.
//!
//! The support depends on the parameter, so nothing here goes through the
//! generic 2-D quadrature; λ is integrated out analytically.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::model::{
    AncillaryKind, Dataset, Domain, Family, FamilyDescriptor, Interval, Matrix2, ParamPoint,
};
use crate::quadrature::{integrate_1d_with, QuadratureConfig, MAX_COMPONENTS};

#[derive(Debug, Clone)]
pub struct Uniform {
    desc: FamilyDescriptor,
}

impl Default for Uniform {
    fn default() -> Self {
        Uniform {
            desc: FamilyDescriptor {
                family_id: "uniform".into(),
                domain: Domain {
                    lambda: Interval::REAL,
                    psi: Interval::POSITIVE,
                },
                ancillary_kind: AncillaryKind::Midrange,
                factorizable: false,
                estimation_orthogonal: true,
                exponential_family: false,
                regular: false,
                marginal_variant: false,
            },
        }
    }
}

/// Sufficient statistic `(x_(1), x_(n))` and the MLE `(midrange, 2/R)`.
pub fn uniform_family_accessors(data: &Dataset) -> Result<((f64, f64), ParamPoint)> {
    let s = &data.summary().sorted;
    let (lo, hi) = (s[0], s[s.len() - 1]);
    if hi <= lo {
        return Err(Error::DegenerateData("uniform sample has zero range".into()));
    }
    Ok(((lo, hi), ParamPoint::new(0.5 * (lo + hi), 2.0 / (hi - lo))))
}

/// Posterior mean of `(ψλ, ψ)` under `π ∝ 1/ψ`, reported as `(λ, ψ)`:
/// `ψ̂ = 2(n-1)/((n+1)R)`, `λ̂ = midrange`.
pub fn uniform_posterior_mean(data: &Dataset) -> Result<ParamPoint> {
    let ((lo, hi), _) = uniform_family_accessors(data)?;
    let n = data.n() as f64;
    Ok(ParamPoint::new(
        0.5 * (lo + hi),
        2.0 * (n - 1.0) / ((n + 1.0) * (hi - lo)),
    ))
}

/// Numeric cross-check of the posterior mean of ψ. After integrating λ over
/// its feasible interval the posterior is `ψ^{n-1}(2/ψ - R)` on `(0, 2/R)`.
pub fn uniform_posterior_mean_numeric(data: &Dataset, cfg: &QuadratureConfig) -> Result<f64> {
    let ((lo, hi), _) = uniform_family_accessors(data)?;
    let r = hi - lo;
    let n = data.n() as f64;
    let top = 2.0 / r;
    let res = integrate_1d_with(
        |psi| {
            let mut g = [0.0; MAX_COMPONENTS];
            g[0] = psi;
            Ok(((n - 1.0) * psi.ln() + (2.0 / psi - r).ln(), g))
        },
        1,
        Interval::new(0.0, top),
        None,
        "psi",
        Some(0.5 * top),
        cfg,
    )?;
    Ok(res.means[0])
}

impl Family for Uniform {
    fn descriptor(&self) -> &FamilyDescriptor {
        &self.desc
    }

    fn validate(&self, _data: &Dataset) -> Result<()> {
        Ok(())
    }

    fn log_joint(&self, data: &Dataset, theta: ParamPoint) -> Result<f64> {
        self.check_domain(theta)?;
        let s = &data.summary().sorted;
        let half = 1.0 / theta.psi;
        if s[0] <= theta.lambda - half || s[s.len() - 1] >= theta.lambda + half {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(data.n() as f64 * (0.5 * theta.psi).ln())
    }

    fn support_depends_on_parameter(&self) -> bool {
        true
    }

    fn ancillary(&self, data: &Dataset) -> Result<f64> {
        Ok(data.midrange())
    }

    /// Density of the midrange, `ψ(n/2)(1 - ψ|t-λ|)^{n-1}` on its support.
    fn log_marginal_ancillary(&self, data: &Dataset, t: f64, theta: ParamPoint) -> Result<f64> {
        self.check_domain(theta)?;
        let n = data.n() as f64;
        let u = 1.0 - theta.psi * (t - theta.lambda).abs();
        if u <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(theta.psi.ln() + (0.5 * n).ln() + (n - 1.0) * u.ln())
    }

    /// The midrange for every ψ.
    fn profile_lambda(&self, data: &Dataset, _psi: f64) -> Result<f64> {
        Ok(data.midrange())
    }

    /// Formal information `n diag(ψ^2, 1/ψ^2)` from the scale structure.
    fn fisher_info(&self, theta: ParamPoint, n: usize) -> Result<Matrix2> {
        self.check_domain(theta)?;
        let n = n as f64;
        let p2 = theta.psi * theta.psi;
        Ok([[n * p2, 0.0], [0.0, n / p2]])
    }

    fn mle(&self, data: &Dataset) -> Result<ParamPoint> {
        Ok(uniform_family_accessors(data)?.1)
    }

    fn sample(&self, theta: ParamPoint, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        self.check_domain(theta)?;
        let half = 1.0 / theta.psi;
        Dataset::new(
            (0..n)
                .map(|_| theta.lambda + half * (2.0 * rng.random::<f64>() - 1.0))
                .collect(),
        )
    }

    fn kl(&self, a: ParamPoint, b: ParamPoint, n: usize) -> Result<f64> {
        self.check_domain(a)?;
        self.check_domain(b)?;
        let (ha, hb) = (1.0 / a.psi, 1.0 / b.psi);
        if a.lambda - ha < b.lambda - hb || a.lambda + ha > b.lambda + hb {
            return Ok(f64::INFINITY);
        }
        Ok(n as f64 * (a.psi / b.psi).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Dataset {
        Dataset::new(vec![0.0, 0.2, 1.0]).unwrap()
    }

    #[test]
    fn accessors_on_small_sample() {
        let ((lo, hi), m) = uniform_family_accessors(&data()).unwrap();
        assert_eq!((lo, hi), (0.0, 1.0));
        assert_eq!(m.lambda, 0.5);
        assert_eq!(1.0 / m.psi, 0.5);
        assert_eq!(Uniform::default().ancillary(&data()).unwrap(), 0.5);
    }

    #[test]
    fn posterior_mean_closed_form_and_numeric() {
        let p = uniform_posterior_mean(&data()).unwrap();
        assert!((p.psi - 1.0).abs() < 1e-15);
        let cfg = QuadratureConfig::default();
        let q = uniform_posterior_mean_numeric(&data(), &cfg).unwrap();
        assert!((q - 1.0).abs() < 1e-8, "{q}");
        let d = Dataset::new(vec![0.3, -0.8, 0.1, 0.5, 0.45, -0.2]).unwrap();
        let (a, b) = (
            uniform_posterior_mean(&d).unwrap().psi,
            uniform_posterior_mean_numeric(&d, &cfg).unwrap(),
        );
        assert!((a - b).abs() < 1e-8 * a);
    }

    #[test]
    fn midrange_density_integrates_to_one() {
        let fam = Uniform::default();
        let th = ParamPoint::new(0.2, 2.0);
        let d = data();
        let m = 4000;
        let h = 1.0 / th.psi;
        let mut s = 0.0;
        for i in 0..m {
            let t = th.lambda - h + (i as f64 + 0.5) * 2.0 * h / m as f64;
            s += fam.log_marginal_ancillary(&d, t, th).unwrap().exp() * 2.0 * h / m as f64;
        }
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn support_is_enforced() {
        let fam = Uniform::default();
        assert_eq!(
            fam.log_joint(&data(), ParamPoint::new(0.5, 2.5)).unwrap(),
            f64::NEG_INFINITY
        );
        let v = fam.log_joint(&data(), ParamPoint::new(0.5, 1.5)).unwrap();
        assert!((v - 3.0 * 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(
            fam.kl(ParamPoint::new(0.0, 1.0), ParamPoint::new(0.0, 2.0), 1).unwrap(),
            f64::INFINITY
        );
        assert!((fam.kl(ParamPoint::new(0.0, 2.0), ParamPoint::new(0.0, 1.0), 1).unwrap() - 2f64.ln()).abs() < 1e-15);
    }
}
