//! Symmetric location-scale families `p(x|λ,ψ) = s g(s(x - λ))`, `s = ψ^{1/p}`,
//! with the sample median as ancillary statistic.
//!
//! The exponential-power member of index `r` is written in rate form
//! `exp(-ψ|x-λ|^r)`, so `s = ψ^{1/r}` and the base density is
//! `g_r(z) = exp(-|z|^r) / (2 Γ(1 + 1/r))`. The Laplace family is `r = 1`.
//! The normal base uses `s = ψ` directly.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    AncillaryKind, Dataset, Domain, Family, FamilyDescriptor, Interval, Matrix2, ParamPoint,
};
use crate::optimize::solve_increasing;
use crate::quadrature::{integrate_1d, integrate_1d_with, QuadratureConfig, MAX_COMPONENTS};
use crate::special::{erfc, ln_gamma, log_sum_exp};

const LN_2: f64 = std::f64::consts::LN_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Base density of a location-scale family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Base {
    Laplace,
    /// Exponential power of index `r > 1`.
    ExpPower(f64),
    /// Standard normal density in scale form.
    Normal,
}

/// Base density `g`, its cdf `G` and the scale exponent.
#[derive(Debug, Clone, Copy)]
pub struct LocationScaleSpec {
    pub base: Base,
}

impl LocationScaleSpec {
    /// Exponent `p` with `s = ψ^{1/p}`.
    pub fn power(&self) -> f64 {
        match self.base {
            Base::Laplace => 1.0,
            Base::ExpPower(r) => r,
            Base::Normal => 1.0,
        }
    }

    pub fn scale(&self, psi: f64) -> f64 {
        match self.base {
            Base::Laplace | Base::Normal => psi,
            Base::ExpPower(r) => psi.powf(1.0 / r),
        }
    }

    pub fn log_scale(&self, psi: f64) -> f64 {
        psi.ln() / self.power()
    }

    /// log g(z)
    pub fn log_g(&self, z: f64) -> f64 {
        match self.base {
            Base::Laplace => -z.abs() - LN_2,
            Base::ExpPower(r) => -z.abs().powf(r) - LN_2 - ln_gamma(1.0 + 1.0 / r),
            Base::Normal => -0.5 * z * z - 0.5 * LN_2PI,
        }
    }

    /// log G(z), accurate in the lower tail.
    pub fn log_cdf(&self, z: f64) -> f64 {
        if z > 0.0 {
            return (-self.log_upper_tail(z).exp()).ln_1p();
        }
        self.log_upper_tail(-z)
    }

    /// log(1 - G(z)) for z ≥ 0, without underflow far out.
    fn log_upper_tail(&self, z: f64) -> f64 {
        match self.base {
            Base::Laplace => -z - LN_2,
            Base::ExpPower(r) => {
                let a = 1.0 / r;
                let x = z.powf(r);
                let q = upper_gamma_q(a, x);
                if q > 1e-280 {
                    return (0.5 * q).ln();
                }
                let c = 1.0 + (a - 1.0) / x + (a - 1.0) * (a - 2.0) / (x * x);
                -LN_2 + (a - 1.0) * x.ln() - x - ln_gamma(a) + c.ln()
            }
            Base::Normal => {
                if z < 30.0 {
                    return (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln();
                }
                let w = 1.0 / (z * z);
                -0.5 * z * z - z.ln() - 0.5 * LN_2PI + (1.0 - w + 3.0 * w * w - 15.0 * w * w * w).ln()
            }
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.log_cdf(z).exp()
    }

    /// `(J1, J2)` with `I_λλ = s^2 J1` and `I_ψψ = J2 / (p ψ)^2` per observation,
    /// from the covariance of the score.
    pub fn score_constants(&self) -> (f64, f64) {
        match self.base {
            Base::Laplace => (1.0, 1.0),
            Base::ExpPower(r) => (
                r * r * (ln_gamma((2.0 * r - 1.0) / r) - ln_gamma(1.0 / r)).exp(),
                r,
            ),
            Base::Normal => (1.0, 2.0),
        }
    }

    fn sample_z(&self, rng: &mut dyn RngCore) -> f64 {
        match self.base {
            Base::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Base::ExpPower(r) => {
                let g = Gamma::new(1.0 / r, 1.0).expect("valid gamma shape");
                let a: f64 = g.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * a.powf(1.0 / r)
            }
            Base::Normal => StandardNormal.sample(rng),
        }
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`, with the endpoints handled.
fn upper_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x == f64::INFINITY {
        0.0
    } else {
        statrs::function::gamma::checked_gamma_ur(a, x).unwrap_or(f64::NAN)
    }
}

/// log-density of the sample median at `t_med` for a sample of size `n`.
///
/// Odd `n = 2m+1`: the order-statistic density
/// `n!/(m!)^2 G(z)^m G(-z)^m s g(z)`. Even `n = 2m`: density of the midpoint
/// of the two central order statistics, reduced to a 1-D integral.
pub fn median_marginal_logpdf(
    spec: &LocationScaleSpec,
    t_med: f64,
    theta: ParamPoint,
    n: usize,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidData("median marginal needs n ≥ 2".into()));
    }
    let s = spec.scale(theta.psi);
    let log_s = spec.log_scale(theta.psi);
    let z = s * (t_med - theta.lambda);
    if n % 2 == 1 {
        let m = (n / 2) as f64;
        return Ok(ln_gamma(n as f64 + 1.0) - 2.0 * ln_gamma(m + 1.0)
            + m * spec.log_cdf(z)
            + m * spec.log_cdf(-z)
            + log_s
            + spec.log_g(z));
    }
    let m = (n / 2) as f64;
    // g is log-concave, so the integrand never exceeds its value at u = 0;
    // far out the density is below the range of f64
    let bound = (m - 1.0) * (spec.log_cdf(z) + spec.log_cdf(-z)) + 2.0 * spec.log_g(z);
    if bound < -1e5 {
        return Ok(f64::NEG_INFINITY);
    }
    let log_k = LN_2 + ln_gamma(n as f64 + 1.0) - 2.0 * ln_gamma(m);
    let cfg = QuadratureConfig {
        rel_tol: 1e-11,
        ..QuadratureConfig::default()
    };
    let f = |u: f64| {
        Ok((m - 1.0) * spec.log_cdf(z - u)
            + spec.log_g(z - u)
            + spec.log_g(z + u)
            + (m - 1.0) * spec.log_cdf(-z - u))
    };
    // g has a kink at 0, so the integrand has one at u = |z|
    let a = z.abs();
    let outer = integrate_1d(
        f,
        Interval::new(a, f64::INFINITY),
        "median half-gap",
        Some(a + 1.0 / m.sqrt()),
        &cfg,
    )?
    .log_value;
    let total = if a > 1e-13 {
        let near = integrate_1d(f, Interval::new(0.0, a), "median half-gap", Some(0.5 * a), &cfg)?;
        log_sum_exp(&[near.log_value, outer])
    } else {
        outer
    };
    Ok(log_k + total + log_s)
}

/// Location-scale family with median ancillary.
#[derive(Debug, Clone)]
pub struct LocationScale {
    spec: LocationScaleSpec,
    desc: FamilyDescriptor,
}

impl LocationScale {
    pub fn new(base: Base) -> Result<Self> {
        let id = match base {
            Base::Laplace => "laplace".to_string(),
            Base::ExpPower(r) => {
                if !(r > 1.0) || !r.is_finite() {
                    return Err(Error::Config(format!(
                        "exponential-power index must exceed 1, got {r}"
                    )));
                }
                format!("exppower:{r}")
            }
            Base::Normal => "locscale:normal".to_string(),
        };
        Ok(LocationScale {
            spec: LocationScaleSpec { base },
            desc: FamilyDescriptor {
                family_id: id,
                domain: Domain {
                    lambda: Interval::REAL,
                    psi: Interval::POSITIVE,
                },
                ancillary_kind: AncillaryKind::Median,
                factorizable: false,
                estimation_orthogonal: true,
                exponential_family: false,
                regular: !matches!(base, Base::Laplace),
                marginal_variant: false,
            },
        })
    }

    pub fn laplace() -> Self {
        LocationScale::new(Base::Laplace).expect("valid base")
    }

    pub fn spec(&self) -> &LocationScaleSpec {
        &self.spec
    }

    fn log_density(&self, x: f64, theta: ParamPoint) -> f64 {
        let s = self.spec.scale(theta.psi);
        self.spec.log_scale(theta.psi) + self.spec.log_g(s * (x - theta.lambda))
    }

    fn sum_abs_power(&self, data: &Dataset, lambda: f64, r: f64) -> f64 {
        data.values().iter().map(|x| (x - lambda).abs().powf(r)).sum()
    }
}

impl Family for LocationScale {
    fn descriptor(&self) -> &FamilyDescriptor {
        &self.desc
    }

    fn validate(&self, _data: &Dataset) -> Result<()> {
        Ok(())
    }

    fn log_joint(&self, data: &Dataset, theta: ParamPoint) -> Result<f64> {
        self.check_domain(theta)?;
        Ok(data.values().iter().map(|&x| self.log_density(x, theta)).sum())
    }

    fn ancillary(&self, data: &Dataset) -> Result<f64> {
        Ok(data.median())
    }

    fn log_marginal_ancillary(&self, data: &Dataset, t: f64, theta: ParamPoint) -> Result<f64> {
        self.check_domain(theta)?;
        median_marginal_logpdf(&self.spec, t, theta, data.n())
    }

    fn profile_lambda(&self, data: &Dataset, _psi: f64) -> Result<f64> {
        match self.spec.base {
            // the limit r -> 1 of the exponential-power MLE: midpoint for even n
            Base::Laplace => Ok(data.median()),
            Base::Normal => Ok(data.summary().mean),
            Base::ExpPower(r) => {
                let s = &data.summary().sorted;
                let (lo, hi) = (s[0], s[s.len() - 1]);
                if lo == hi {
                    return Ok(lo);
                }
                // Σ r|x-λ|^{r-1} sgn(λ-x) is increasing in λ
                let score = |l: f64| {
                    let mut v = 0.0;
                    let mut d = 0.0;
                    for &x in s {
                        let a = (l - x).abs();
                        v += r * a.powf(r - 1.0) * (l - x).signum();
                        d += r * (r - 1.0) * a.powf(r - 2.0);
                    }
                    (v, d)
                };
                solve_increasing(score, lo, hi)
            }
        }
    }

    /// The marginal of the median is evaluated at `λ = t`.
    fn pml_lambda(&self, _data: &Dataset, t: f64, _psi: f64) -> Result<f64> {
        Ok(t)
    }

    fn fisher_info(&self, theta: ParamPoint, n: usize) -> Result<Matrix2> {
        self.check_domain(theta)?;
        let (j1, j2) = self.spec.score_constants();
        let s = self.spec.scale(theta.psi);
        let p = self.spec.power();
        let n = n as f64;
        Ok([
            [n * s * s * j1, 0.0],
            [0.0, n * j2 / (p * theta.psi).powi(2)],
        ])
    }

    fn mle(&self, data: &Dataset) -> Result<ParamPoint> {
        let lambda = self.profile_lambda(data, 1.0)?;
        let n = data.n() as f64;
        let psi = match self.spec.base {
            Base::Laplace => n / self.sum_abs_power(data, lambda, 1.0),
            Base::ExpPower(r) => n / (r * self.sum_abs_power(data, lambda, r)),
            Base::Normal => (n / self.sum_abs_power(data, lambda, 2.0)).sqrt(),
        };
        if !psi.is_finite() {
            return Err(Error::DegenerateData("all observations are equal".into()));
        }
        Ok(ParamPoint::new(lambda, psi))
    }

    fn sample(&self, theta: ParamPoint, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        self.check_domain(theta)?;
        let s = self.spec.scale(theta.psi);
        Dataset::new((0..n).map(|_| theta.lambda + self.spec.sample_z(rng) / s).collect())
    }

    fn kl(&self, a: ParamPoint, b: ParamPoint, n: usize) -> Result<f64> {
        self.check_domain(a)?;
        self.check_domain(b)?;
        if a == b {
            return Ok(0.0);
        }
        let (sa, sb) = (self.spec.scale(a.psi), self.spec.scale(b.psi));
        let per = match self.spec.base {
            Base::Laplace => {
                let d = (a.lambda - b.lambda).abs();
                (sa / sb).ln() + sb * d + (sb / sa) * (-sa * d).exp() - 1.0
            }
            Base::Normal => {
                let r = sb * sb / (sa * sa);
                0.5 * (r - r.ln() - 1.0 + sb * sb * (a.lambda - b.lambda).powi(2))
            }
            Base::ExpPower(_) => {
                let cfg = QuadratureConfig::default();
                let r = integrate_1d_with(
                    |x| {
                        let la = self.log_density(x, a);
                        let mut g = [0.0; MAX_COMPONENTS];
                        g[0] = la - self.log_density(x, b);
                        Ok((la, g))
                    },
                    1,
                    Interval::REAL,
                    None,
                    "x",
                    Some(a.lambda),
                    &cfg,
                )?;
                r.means[0]
            }
        };
        Ok(n as f64 * per.max(0.0))
    }
}
