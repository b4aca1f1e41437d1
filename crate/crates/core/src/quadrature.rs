//! Adaptive Gauss–Kronrod integration of `exp(f)` for log-integrands `f`,
//! on transformed coordinates, with propriety checks on the tails.
//!
//! Every integral is taken over an open interval mapped onto the real line.
//! The integrand is centred at its mode, split into unit-curvature panels,
//! and extended outwards with doubling panels until the tail mass is
//! negligible. A tail whose panel mass does not decay makes the integral
//! improper and is reported as such.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Tail};
use crate::model::{Dataset, Domain, Family, Interval, ParamPoint, Transform};
use crate::priors::Prior;
use crate::optimize::{fd_derivatives, maximize_1d};

/// Maximum number of estimand components carried through an integral.
pub const MAX_COMPONENTS: usize = 4;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_TAIL_PANELS: usize = 48;
const CORE_HALF_WIDTH: f64 = 6.0;
const CORE_PANELS: usize = 8;
/// Transformed coordinates beyond this sit at exp/logit saturation.
const SATURATION: f64 = 600.0;

/// Tolerances and coordinate transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Maximum bisection depth of any panel.
    pub max_depth: usize,
    /// Override for the λ transform.
    pub lambda_transform: Option<Transform>,
    /// Override for the ψ transform.
    pub psi_transform: Option<Transform>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_depth: 30,
            lambda_transform: None,
            psi_transform: None,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::Config("quadrature tolerances must be positive".into()));
        }
        if self.max_depth < 4 {
            return Err(Error::Config("quadrature max_depth must be at least 4".into()));
        }
        Ok(())
    }

    fn max_panels(&self) -> usize {
        64 * self.max_depth.max(4)
    }
}

/// Values of the estimand at one node; only the first `k` entries are used.
pub type Components = [f64; MAX_COMPONENTS];

/// Result of integrating `w(θ) = exp(f(θ))` together with `∫ g_k w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Integral {
    /// log ∫ w
    pub log_value: f64,
    /// ∫ g_k w / ∫ w
    pub means: Components,
    pub components: usize,
    /// Estimated relative error of ∫ w (≈ absolute error of `log_value`).
    pub error_estimate: f64,
    /// Worst estimated error of the `means`, relative to ∫|g_k| w / ∫ w.
    pub means_error: f64,
    pub converged: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
struct Panel {
    a: f64,
    b: f64,
    depth: usize,
    /// Kronrod estimates of ∫w and ∫g_k w (shifted units)
    value: [f64; MAX_COMPONENTS + 1],
    abs_value: [f64; MAX_COMPONENTS + 1],
    error: [f64; MAX_COMPONENTS + 1],
}

struct Integrator<'a, F> {
    f: &'a F,
    k: usize,
    shift: f64,
    evaluations: usize,
}

/// One log-integrand evaluation: `(log w, g)`.
type NodeValue = (f64, Components);

impl<'a, F> Integrator<'a, F>
where
    F: Fn(f64) -> Result<NodeValue>,
{
    fn panel(&mut self, a: f64, b: f64, depth: usize) -> Result<Panel> {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut kron = [0.0; MAX_COMPONENTS + 1];
        let mut gauss = [0.0; MAX_COMPONENTS + 1];
        let mut absk = [0.0; MAX_COMPONENTS + 1];
        for i in 0..15 {
            let (x, wk, wg) = if i < 7 {
                (c - h * XGK[i], WGK[i], if i % 2 == 1 { WG[i / 2] } else { 0.0 })
            } else if i == 7 {
                (c, WGK[7], WG[3])
            } else {
                let j = 14 - i;
                (c + h * XGK[j], WGK[j], if j % 2 == 1 { WG[j / 2] } else { 0.0 })
            };
            let (lw, g) = (self.f)(x)?;
            self.evaluations += 1;
            if lw.is_nan() || lw == f64::INFINITY {
                return Err(Error::Numerical(format!(
                    "log-integrand is {lw} at transformed coordinate {x}"
                )));
            }
            let e = lw - self.shift;
            if e > 600.0 {
                return Err(Error::Numerical(
                    "integrand exceeds its located mode by e^600; mode search failed".into(),
                ));
            }
            let w = e.exp();
            if w == 0.0 {
                continue;
            }
            for m in 0..=self.k {
                let v = if m == 0 { w } else { w * g[m - 1] };
                kron[m] += wk * v;
                gauss[m] += wg * v;
                absk[m] += wk * v.abs();
            }
        }
        let mut p = Panel {
            a,
            b,
            depth,
            value: [0.0; MAX_COMPONENTS + 1],
            abs_value: [0.0; MAX_COMPONENTS + 1],
            error: [0.0; MAX_COMPONENTS + 1],
        };
        for m in 0..=self.k {
            p.value[m] = kron[m] * h;
            p.abs_value[m] = absk[m] * h;
            p.error[m] = ((kron[m] - gauss[m]) * h).abs();
        }
        Ok(p)
    }
}

/// Deterministic pairwise sum of a slice.
fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => tree_sum(&v[..n / 2]) + tree_sum(&v[n / 2..]),
    }
}

fn totals(panels: &mut [Panel], k: usize) -> ([f64; MAX_COMPONENTS + 1], [f64; MAX_COMPONENTS + 1], [f64; MAX_COMPONENTS + 1]) {
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut val = [0.0; MAX_COMPONENTS + 1];
    let mut abs = [0.0; MAX_COMPONENTS + 1];
    let mut err = [0.0; MAX_COMPONENTS + 1];
    for m in 0..=k {
        val[m] = tree_sum(&panels.iter().map(|p| p.value[m]).collect::<Vec<_>>());
        abs[m] = tree_sum(&panels.iter().map(|p| p.abs_value[m]).collect::<Vec<_>>());
        err[m] = tree_sum(&panels.iter().map(|p| p.error[m]).collect::<Vec<_>>());
    }
    (val, abs, err)
}

/// Locate the mode of `g` on the real line and a local scale.
fn locate_mode<F>(g: &F, u0: f64, coordinate: &'static str) -> Result<(f64, f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let start = if g(u0).is_finite() {
        u0
    } else {
        // walk outwards until a finite value appears
        let mut found = None;
        let mut step = 0.5;
        for _ in 0..60 {
            for cand in [u0 + step, u0 - step] {
                if g(cand).is_finite() {
                    found = Some(cand);
                    break;
                }
            }
            if found.is_some() {
                break;
            }
            step *= 1.5;
        }
        found.ok_or_else(|| {
            Error::Numerical(format!("log-integrand over {coordinate} is nowhere finite"))
        })?
    };
    let m = match maximize_1d(g, start, 0.5) {
        Ok(m) => m,
        Err(_) => {
            let tail = if g(start + 1.0) > g(start - 1.0) {
                Tail::Upper
            } else {
                Tail::Lower
            };
            return Err(Error::Improper { coordinate, tail });
        }
    };
    let (_, _, h2) = fd_derivatives(g, m.arg, 1e-3 * m.arg.abs().max(1.0));
    let mut sigma = if h2 < 0.0 && h2.is_finite() {
        1.0 / (-h2).sqrt()
    } else {
        f64::NAN
    };
    // a curvature taken from round-off on a flat top is not a scale
    let drop = |h: f64| m.value - g(m.arg + h).max(g(m.arg - h));
    if sigma.is_finite() && !(drop(sigma) >= 0.05) {
        sigma = f64::NAN;
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        // scale at which the log-integrand drops by 1/2
        let mut h = 1e-3 * m.arg.abs().max(1.0);
        sigma = h;
        for _ in 0..200 {
            if m.value - g(m.arg + h) >= 0.5 || m.value - g(m.arg - h) >= 0.5 {
                sigma = h;
                break;
            }
            h *= 2.0;
            sigma = h;
        }
    }
    Ok((m.arg, m.value, sigma))
}

/// Closed-form remainder of a tail on which the log-integrand is linear in
/// the transformed coordinate (a power law in the parameter), from `edge`
/// outwards. `None` if the tail is not in its linear regime; an impropriety
/// error if the integrand or a moment does not decay.
fn power_tail<F>(
    lw: &F,
    edge: f64,
    dir: f64,
    shift: f64,
    k: usize,
    coordinate: &'static str,
    tail: Tail,
) -> Result<Option<Panel>>
where
    F: Fn(f64) -> Result<NodeValue>,
{
    let (l0, g0) = lw(edge)?;
    let (l1, g1) = lw(edge - dir)?;
    let (l2, g2) = lw(edge - 2.0 * dir)?;
    if !(l0.is_finite() && l1.is_finite() && l2.is_finite()) {
        return Ok(None);
    }
    let s = l0 - l1;
    let curvature = (l0 - l1) - (l1 - l2);
    if curvature.abs() > 1e-3 * s.abs().max(1e-3) {
        return Ok(None);
    }
    if s >= 0.0 {
        return Err(Error::Improper { coordinate, tail });
    }
    let (lo, hi) = if dir < 0.0 { (f64::NEG_INFINITY, edge) } else { (edge, f64::INFINITY) };
    let mut p = Panel {
        a: lo,
        b: hi,
        depth: usize::MAX,
        value: [0.0; MAX_COMPONENTS + 1],
        abs_value: [0.0; MAX_COMPONENTS + 1],
        error: [0.0; MAX_COMPONENTS + 1],
    };
    let base = (l0 - shift).exp();
    // relative size of the quadratic term of the log-integrand
    let rel = (curvature.abs() / (s * s)).max(1e-15);
    p.value[0] = base / -s;
    p.abs_value[0] = p.value[0];
    p.error[0] = rel * p.value[0];
    for m in 1..=k {
        let (a, b, c) = (g0[m - 1], g1[m - 1], g2[m - 1]);
        if a == 0.0 && b == 0.0 && c == 0.0 {
            continue;
        }
        let (la, lb, lc) = (a.abs().ln(), b.abs().ln(), c.abs().ln());
        let sm = s + (la - lb);
        let clean = a != 0.0
            && b != 0.0
            && c != 0.0
            && a.signum() == b.signum()
            && b.signum() == c.signum()
            && ((la - lb) - (lb - lc)).abs() <= 1e-3 * sm.abs().max(1e-3);
        if !clean {
            // not a power law (e.g. rounding noise): hold g at its edge value
            // and charge the whole remainder as error
            p.value[m] = a * p.value[0];
            p.abs_value[m] = a.abs().max(b.abs()).max(c.abs()) * p.value[0];
            p.error[m] = p.abs_value[m];
            continue;
        }
        if sm >= 0.0 {
            return Err(Error::Improper { coordinate, tail });
        }
        p.value[m] = a * base / -sm;
        p.abs_value[m] = p.value[m].abs();
        p.error[m] = rel * p.abs_value[m];
    }
    Ok(Some(p))
}

/// Integrate `exp(f(v))` (and `g(v) exp(f(v))`) over `domain`.
///
/// `f` receives the parameter value `v`, not the transformed coordinate.
/// `hint` is a point near the bulk of the mass.
pub fn integrate_1d_with<F>(
    f: F,
    k: usize,
    domain: Interval,
    transform: Option<Transform>,
    coordinate: &'static str,
    hint: Option<f64>,
    cfg: &QuadratureConfig,
) -> Result<Integral>
where
    F: Fn(f64) -> Result<NodeValue>,
{
    assert!(k <= MAX_COMPONENTS);
    let tr = transform.unwrap_or_else(|| domain.default_transform());
    let lw = |u: f64| -> Result<NodeValue> {
        let v = tr.to_param(u);
        if !domain.contains(v) {
            return Ok((f64::NEG_INFINITY, [0.0; MAX_COMPONENTS]));
        }
        let (l, g) = f(v)?;
        Ok((l + tr.log_jacobian(u), g))
    };
    let scalar = |u: f64| match lw(u) {
        Ok((l, _)) if !l.is_nan() => l,
        _ => f64::NEG_INFINITY,
    };
    let u0 = hint
        .filter(|h| domain.contains(*h))
        .map(|h| tr.to_unconstrained(h))
        .unwrap_or(0.0);
    let (mode, peak, sigma) = locate_mode(&scalar, u0, coordinate)?;
    if tr != Transform::Identity && mode.abs() > SATURATION {
        // the maximizer ran to the edge of floating-point range
        let tail = if mode < 0.0 { Tail::Lower } else { Tail::Upper };
        return Err(Error::Improper { coordinate, tail });
    }

    let mut integ = Integrator {
        f: &lw,
        k,
        shift: peak,
        evaluations: 0,
    };
    let mut panels = Vec::with_capacity(64);
    let core_lo = mode - CORE_HALF_WIDTH * sigma;
    let width = 2.0 * CORE_HALF_WIDTH * sigma / CORE_PANELS as f64;
    for i in 0..CORE_PANELS {
        let a = core_lo + i as f64 * width;
        panels.push(integ.panel(a, a + width, 0)?);
    }
    let core_mass: f64 = panels.iter().map(|p| p.value[0]).sum();
    let stop = 1e-3 * cfg.rel_tol * core_mass;

    for (tail, dir, start) in [
        (Tail::Lower, -1.0, core_lo),
        (Tail::Upper, 1.0, core_lo + CORE_PANELS as f64 * width),
    ] {
        let mut edge = start;
        let mut w = sigma;
        let mut done = false;
        let mut prev_mass = f64::INFINITY;
        for _ in 0..MAX_TAIL_PANELS {
            let mut next = edge + dir * w;
            if tr != Transform::Identity && next.abs() > SATURATION {
                next = dir * SATURATION;
            }
            let v = tr.to_param(next);
            if next == edge || !v.is_finite() || !domain.contains(v) || v == tr.to_param(edge) {
                // the coordinate saturates in floating point before the
                // tail is exhausted
                match power_tail(&lw, edge, dir, peak, k, coordinate, tail)? {
                    Some(p) => {
                        panels.push(p);
                        done = true;
                    }
                    None => {
                        done = prev_mass.is_finite()
                            && prev_mass <= cfg.rel_tol.sqrt() * core_mass;
                    }
                }
                break;
            }
            let (a, b) = if dir < 0.0 { (next, edge) } else { (edge, next) };
            let p = integ.panel(a, b, 0)?;
            let mass = p.value[0];
            panels.push(p);
            if mass <= stop {
                done = true;
                break;
            }
            prev_mass = mass;
            edge = next;
            w *= 2.0;
        }
        if !done {
            return Err(Error::Improper { coordinate, tail });
        }
    }

    // global adaptive refinement
    let converged = loop {
        let (val, abs, err) = totals(&mut panels, k);
        let tol0 = (cfg.rel_tol * val[0]).max(cfg.abs_tol * (-peak).exp().min(f64::MAX));
        let mut ok = err[0] <= tol0;
        for m in 1..=k {
            ok &= err[m] <= cfg.rel_tol * abs[m] || err[m] <= cfg.abs_tol * val[0];
        }
        if ok {
            break true;
        }
        if panels.len() >= cfg.max_panels() {
            break false;
        }
        // worst splittable panel, by normalized error
        let score = |p: &Panel| {
            let mut s = p.error[0] / val[0].max(f64::MIN_POSITIVE);
            for m in 1..=k {
                if abs[m] > 0.0 {
                    s = s.max(p.error[m] / abs[m]);
                }
            }
            s
        };
        let pick = panels
            .iter()
            .enumerate()
            .max_by(|(_, p), (_, q)| score(p).total_cmp(&score(q)))
            .map(|(i, _)| i);
        // the dominant error cannot be reduced by splitting
        let Some(i) = pick.filter(|&i| panels[i].depth < cfg.max_depth) else { break false };
        let p = panels.swap_remove(i);
        let mid = 0.5 * (p.a + p.b);
        panels.push(integ.panel(p.a, mid, p.depth + 1)?);
        panels.push(integ.panel(mid, p.b, p.depth + 1)?);
    };

    let (val, abs, err) = totals(&mut panels, k);
    if !(val[0] > 0.0) {
        return Err(Error::Numerical(format!("integral over {coordinate} vanished")));
    }
    let mut means = [0.0; MAX_COMPONENTS];
    let mut means_error: f64 = 0.0;
    for m in 1..=k {
        means[m - 1] = val[m] / val[0];
        if abs[m] > 0.0 {
            means_error = means_error.max(err[m] / abs[m]);
        }
    }
    Ok(Integral {
        log_value: peak + val[0].ln(),
        means,
        components: k,
        error_estimate: err[0] / val[0],
        means_error,
        converged,
        evaluations: integ.evaluations,
    })
}

/// log ∫ exp(f(v)) dv over `domain`.
pub fn integrate_1d<F>(
    f: F,
    domain: Interval,
    coordinate: &'static str,
    hint: Option<f64>,
    cfg: &QuadratureConfig,
) -> Result<Integral>
where
    F: Fn(f64) -> Result<f64>,
{
    integrate_1d_with(
        |v| Ok((f(v)?, [0.0; MAX_COMPONENTS])),
        0,
        domain,
        None,
        coordinate,
        hint,
        cfg,
    )
}

/// Nested 2-D integral of `exp(f(θ))` and `g(θ) exp(f(θ))`; inner over λ,
/// outer over ψ. `f` returns `(log w, g)`.
pub fn integrate_2d<F>(
    f: F,
    k: usize,
    domain: Domain,
    hint: ParamPoint,
    cfg: &QuadratureConfig,
) -> Result<Integral>
where
    F: Fn(ParamPoint) -> Result<NodeValue>,
{
    let inner_cfg = QuadratureConfig {
        rel_tol: cfg.rel_tol * 0.1,
        ..*cfg
    };
    // (log inner value, inner error, inner converged) per outer node
    let nodes = std::cell::RefCell::new(Vec::<(f64, f64, bool)>::new());
    let evals = std::cell::Cell::new(0usize);
    let outer = |psi: f64| -> Result<NodeValue> {
        let inner = integrate_1d_with(
            |lambda| f(ParamPoint::new(lambda, psi)),
            k,
            domain.lambda,
            cfg.lambda_transform,
            "lambda",
            Some(hint.lambda),
            &inner_cfg,
        )?;
        evals.set(evals.get() + inner.evaluations);
        nodes.borrow_mut().push((
            inner.log_value,
            inner.error_estimate.max(inner.means_error),
            inner.converged,
        ));
        Ok((inner.log_value, inner.means))
    };
    let mut res = integrate_1d_with(
        outer,
        k,
        domain.psi,
        cfg.psi_transform,
        "psi",
        Some(hint.psi),
        cfg,
    )?;
    // inner errors count in proportion to the outer mass where they occur
    let nodes = nodes.into_inner();
    let top = nodes.iter().map(|n| n.0).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den, mut ok) = (0.0, 0.0, true);
    for &(lv, err, conv) in &nodes {
        let w = (lv - top).exp();
        num += w * err;
        den += w;
        ok &= conv || w * err <= cfg.rel_tol;
    }
    let err = if den > 0.0 { num / den } else { 0.0 };
    res.converged &= ok;
    res.evaluations += evals.get();
    res.error_estimate += err;
    res.means_error += err;
    Ok(res)
}

/// Self-normalized importance-sampling estimate of a posterior mean, with a
/// Gaussian proposal in transformed coordinates. Diagnostic only; never on
/// the contract path.
pub fn importance_sampling_mean<F>(
    f: F,
    k: usize,
    domain: Domain,
    center: ParamPoint,
    scale: [f64; 2],
    draws: usize,
    seed: u64,
) -> Result<Components>
where
    F: Fn(ParamPoint) -> Result<NodeValue>,
{
    let tl = domain.lambda.default_transform();
    let tp = domain.psi.default_transform();
    let c = [tl.to_unconstrained(center.lambda), tp.to_unconstrained(center.psi)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(draws);
    let mut vals = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        let u = [c[0] + scale[0] * z[0], c[1] + scale[1] * z[1]];
        let theta = ParamPoint::new(tl.to_param(u[0]), tp.to_param(u[1]));
        let (lw, g) = f(theta)?;
        let lq = -0.5 * (z[0] * z[0] + z[1] * z[1]);
        logs.push(lw + tl.log_jacobian(u[0]) + tp.log_jacobian(u[1]) - lq);
        vals.push(g);
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total = tree_sum(&w);
    let mut out = [0.0; MAX_COMPONENTS];
    for j in 0..k {
        let terms: Vec<f64> = w.iter().zip(&vals).map(|(w, g)| w * g[j]).collect();
        out[j] = tree_sum(&terms) / total;
    }
    Ok(out)
}

/// `E_post[g]` under `exp(log_joint + prior)`, by nested quadrature.
///
/// The prior is bound to `data` if it is not already. `hint` should sit near
/// the posterior bulk (the MLE is usually fine).
pub fn posterior_expectation<G>(
    family: &dyn Family,
    data: &Dataset,
    prior: &Prior,
    k: usize,
    g: G,
    hint: ParamPoint,
    cfg: &QuadratureConfig,
) -> Result<Integral>
where
    G: Fn(ParamPoint) -> Result<Components>,
{
    if family.support_depends_on_parameter() {
        return Err(Error::capability(
            family.id(),
            "2-D posterior quadrature (parameter-dependent support)",
        ));
    }
    cfg.validate()?;
    let prior = prior.bind(data)?;
    let domain = family.descriptor().domain;
    integrate_2d(
        |theta| {
            let lw = family.log_joint(data, theta)? + prior.log(theta)?;
            if lw == f64::NEG_INFINITY {
                return Ok((lw, [0.0; MAX_COMPONENTS]));
            }
            Ok((lw, g(theta)?))
        },
        k,
        domain,
        hint,
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_gamma;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn standard_normal_density_integrates_to_one() {
        let r = integrate_1d(
            |x| Ok(-0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()),
            Interval::REAL,
            "x",
            None,
            &cfg(),
        )
        .unwrap();
        assert!(r.log_value.abs() < 1e-10, "{}", r.log_value);
        assert!(r.converged);
    }

    #[test]
    fn exponential_under_log_transform() {
        let r = integrate_1d(|p| Ok(-p), Interval::POSITIVE, "psi", None, &cfg()).unwrap();
        assert!(r.log_value.abs() < 1e-10);
    }

    #[test]
    fn gamma_kernel_gives_log_gamma() {
        let a = 3.5;
        let r = integrate_1d(|p: f64| Ok((a - 1.0) * p.ln() - p), Interval::POSITIVE, "psi", None, &cfg())
            .unwrap();
        assert!((r.log_value - ln_gamma(a)).abs() < 1e-10);
        assert!((r.log_value - 1.200_973_602_347_074_3).abs() < 1e-9);
    }

    #[test]
    fn constant_shift_is_exact() {
        let base = integrate_1d(|p: f64| Ok(2.0 * p.ln() - 3.0 * p), Interval::POSITIVE, "psi", None, &cfg())
            .unwrap();
        let c = 1234.5;
        let shifted =
            integrate_1d(|p: f64| Ok(2.0 * p.ln() - 3.0 * p + c), Interval::POSITIVE, "psi", None, &cfg())
                .unwrap();
        assert!((shifted.log_value - base.log_value - c).abs() < 1e-10);
    }

    #[test]
    fn divergent_tails_are_named() {
        // ∫_0^∞ ψ^{-3/2} e^{-ψ} diverges at 0
        let e = integrate_1d(|p: f64| Ok(-1.5 * p.ln() - p), Interval::POSITIVE, "psi", None, &cfg())
            .unwrap_err();
        assert!(matches!(e, Error::Improper { coordinate: "psi", tail: Tail::Lower }), "{e}");
        // ∫_1^∞ ψ^{-1/2}-like growth at the upper end
        let e = integrate_1d(|p: f64| Ok(-0.5 * p.ln()), Interval::POSITIVE, "psi", Some(1.0), &cfg())
            .unwrap_err();
        assert!(matches!(e, Error::Improper { .. }), "{e}");
    }

    #[test]
    fn bounded_interval_with_logit() {
        // ∫_0^2 x^2 dx = 8/3
        let r = integrate_1d(|x: f64| Ok(2.0 * x.ln()), Interval::new(0.0, 2.0), "x", Some(1.0), &cfg())
            .unwrap();
        assert!((r.log_value - (8.0f64 / 3.0).ln()).abs() < 1e-9);
    }

    #[test]
    fn means_of_gamma_distribution() {
        // Gamma(3, 2): mean 1.5, E[1/ψ] = 1
        let r = integrate_1d_with(
            |p: f64| Ok((2.0 * p.ln() - 2.0 * p, [p, 1.0 / p, 0.0, 0.0])),
            2,
            Interval::POSITIVE,
            None,
            "psi",
            None,
            &cfg(),
        )
        .unwrap();
        assert!((r.means[0] - 1.5).abs() < 1e-9);
        assert!((r.means[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn depth_doubling_is_within_error() {
        let f = |p: f64| Ok(0.3 * p.ln() - p * p + (5.0 * p).sin());
        let shallow = QuadratureConfig { max_depth: 8, ..cfg() };
        let deep = QuadratureConfig { max_depth: 16, ..cfg() };
        let a = integrate_1d(f, Interval::POSITIVE, "psi", None, &shallow).unwrap();
        let b = integrate_1d(f, Interval::POSITIVE, "psi", None, &deep).unwrap();
        assert!((a.log_value - b.log_value).abs() <= a.error_estimate.max(1e-15));
    }

    #[test]
    fn two_dimensional_normal_gamma() {
        // w = ψ^{a-1} e^{-bψ} · sqrt(ψ) e^{-ψ(λ-m)^2/2}; marginal ψ ~ Gamma(a+1/2-1/2...) check via closed form
        let (a, b, m) = (3.0, 2.0, 0.7);
        let r = integrate_2d(
            |t: ParamPoint| {
                let l = (a - 1.0) * t.psi.ln() - b * t.psi + 0.5 * t.psi.ln()
                    - 0.5 * t.psi * (t.lambda - m).powi(2);
                Ok((l, [t.lambda, t.psi, t.psi * t.lambda, 0.0]))
            },
            3,
            Domain {
                lambda: Interval::REAL,
                psi: Interval::POSITIVE,
            },
            ParamPoint::new(0.0, 1.0),
            &cfg(),
        )
        .unwrap();
        // ∫ over λ gives sqrt(2π); ψ-part Γ(a)/b^a
        let want = 0.5 * (2.0 * std::f64::consts::PI).ln() + ln_gamma(a) - a * b.ln();
        assert!((r.log_value - want).abs() < 1e-9, "{} vs {want}", r.log_value);
        assert!((r.means[0] - m).abs() < 1e-9);
        assert!((r.means[1] - a / b).abs() < 1e-9);
        assert!((r.means[2] - m * a / b).abs() < 1e-9);
        assert!(r.converged);
    }

    #[test]
    fn importance_sampling_is_rough_but_close() {
        let g = importance_sampling_mean(
            |t: ParamPoint| {
                let l = 2.0 * t.psi.ln() - 3.0 * t.psi - 0.5 * t.psi * t.lambda * t.lambda;
                Ok((l, [t.lambda, t.psi, 0.0, 0.0]))
            },
            2,
            Domain {
                lambda: Interval::REAL,
                psi: Interval::POSITIVE,
            },
            ParamPoint::new(0.0, 1.0),
            [1.5, 0.7],
            20_000,
            11,
        )
        .unwrap();
        assert!(g[0].abs() < 0.05);
        assert!((g[1] - 2.5 / 3.0).abs() < 0.05);
    }
}
