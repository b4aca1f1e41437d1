//! Scalar and two-dimensional maximizers.
//!
//! All routines work on unconstrained coordinates; callers map bounded
//! parameters through a [`Transform`](crate::model::Transform) first.

use crate::error::{Error, Result};

const GOLDEN: f64 = 1.618_033_988_749_895;

/// Result of a one-dimensional maximization.
#[derive(Debug, Clone, Copy)]
pub struct Max1d {
    pub arg: f64,
    pub value: f64,
    pub gradient: f64,
    pub iterations: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Value, first and second derivative by five-point central differences.
pub fn fd_derivatives(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64, f64) {
    let f0 = f(x);
    let fp1 = f(x + h);
    let fm1 = f(x - h);
    let fp2 = f(x + 2.0 * h);
    let fm2 = f(x - 2.0 * h);
    let g = (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h);
    let hess = (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h);
    (f0, g, hess)
}

fn fd_step(x: f64) -> f64 {
    2e-3 * x.abs().max(1.0)
}

/// Bracket a maximum of `f` starting from `x0`, expanding geometrically.
/// Returns `(a, b, c)` with `a < b < c` and `f(b) >= max(f(a), f(c))`.
pub fn bracket_max(f: &impl Fn(f64) -> f64, x0: f64, step: f64) -> Result<(f64, f64, f64)> {
    let mut step = if step > 0.0 { step } else { 1.0 };
    let f0 = sanitize(f(x0));
    let mut a = x0;
    let mut fa = f0;
    let mut b = x0 + step;
    let mut fb = sanitize(f(b));
    if fb < fa || (fb == fa && fb == f64::NEG_INFINITY) {
        // go left instead
        step = -step;
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    // invariant: fb >= fa, searching in direction of step
    let mut c = b + GOLDEN * step;
    let mut fc = sanitize(f(c));
    let mut expansions = 0;
    while fc >= fb {
        if fc == f64::NEG_INFINITY && fb == f64::NEG_INFINITY {
            return Err(Error::NonConvergence {
                what: "no finite objective value found while bracketing".into(),
                gradient_norm: f64::NAN,
            });
        }
        expansions += 1;
        if expansions > 120 || !c.is_finite() {
            return Err(Error::NonConvergence {
                what: "objective increases without bound; no interior maximum".into(),
                gradient_norm: f64::NAN,
            });
        }
        a = b;
        b = c;
        fb = fc;
        step *= GOLDEN;
        c = b + GOLDEN * step;
        fc = sanitize(f(c));
    }
    let _ = fa;
    if a > c {
        std::mem::swap(&mut a, &mut c);
    }
    Ok((a, b, c))
}

/// Maximize `f` by safeguarded Newton iteration on finite-difference
/// derivatives, with bisection of the bracket as fallback.
///
/// Converges when the gradient is at most `1e-10 max(1, |f|)` or the bracket
/// shrinks below `1e-12` relative width.
pub fn maximize_1d(f: impl Fn(f64) -> f64, x0: f64, step: f64) -> Result<Max1d> {
    let f = |x: f64| sanitize(f(x));
    let (a, b, c) = bracket_max(&f, x0, step)?;
    match maximize_in_bracket(|x| fd_derivatives(&f, x, fd_step(x).min((c - a) * 0.05)), a, b, c) {
        Ok(m) => Ok(m),
        // kinked maxima defeat the derivative test; fall back to Brent
        Err(_) => {
            let (x, v) = brent_minimize(|x| -f(x), a, c, 1e-10);
            Ok(Max1d {
                arg: x,
                value: -v,
                gradient: fd_derivatives(&f, x, fd_step(x)).1,
                iterations: 200,
            })
        }
    }
}

/// Same as [`maximize_1d`] but with caller-supplied `(value, first, second)`
/// derivatives.
pub fn maximize_1d_with(
    fgh: impl Fn(f64) -> (f64, f64, f64),
    x0: f64,
    step: f64,
) -> Result<Max1d> {
    let f = |x: f64| sanitize(fgh(x).0);
    let (a, b, c) = bracket_max(&f, x0, step)?;
    maximize_in_bracket(fgh, a, b, c)
}

fn maximize_in_bracket(
    fgh: impl Fn(f64) -> (f64, f64, f64),
    mut lo: f64,
    mut x: f64,
    mut hi: f64,
) -> Result<Max1d> {
    let mut last_g = f64::NAN;
    for it in 0..200 {
        let (fx, g, h) = fgh(x);
        last_g = g;
        let scale = fx.abs().max(1.0);
        if g.abs() <= 1e-10 * scale {
            return Ok(Max1d {
                arg: x,
                value: fx,
                gradient: g,
                iterations: it,
            });
        }
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-12 * x.abs().max(1.0) {
            return Ok(Max1d {
                arg: x,
                value: fx,
                gradient: g,
                iterations: it,
            });
        }
        let newton = if h < 0.0 { x - g / h } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(Max1d {
                arg: next,
                value: fgh(next).0,
                gradient: g,
                iterations: it,
            });
        }
        x = next;
    }
    Err(Error::NonConvergence {
        what: "1-D Newton iteration limit".into(),
        gradient_norm: last_g.abs(),
    })
}

/// Brent's derivative-free minimizer on `[lo, hi]`.
pub fn brent_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let cgold = 0.381_966_011_250_105;
    let mut x = a + cgold * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut parabolic = false;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                parabolic = true;
            }
        }
        if !parabolic {
            e = if x < m { b - x } else { a - x };
            d = cgold * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Root of an increasing function on `[lo, hi]` by Newton steps safeguarded
/// with bisection. `fd` returns `(value, derivative)`.
pub fn solve_increasing(fd: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..300 {
        let (v, d) = fd(x);
        if v == 0.0 {
            return Ok(x);
        }
        if v > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - v / d;
        let next = if d > 0.0 && d.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 2.0 * f64::EPSILON * x.abs().max(1e-300) || hi - lo <= f64::EPSILON * x.abs() {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NonConvergence {
        what: "monotone root solve".into(),
        gradient_norm: fd(x).0.abs(),
    })
}

/// Result of a multi-start two-dimensional maximization.
#[derive(Debug, Clone, Copy)]
pub struct Max2d {
    pub arg: [f64; 2],
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Largest objective gap between converged starts.
    pub start_spread: f64,
    pub multimodal: bool,
}

fn grad_hess_2d(f: &impl Fn([f64; 2]) -> f64, x: [f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let f0 = f(x);
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    let steps = [fd_step(x[0]), fd_step(x[1])];
    for i in 0..2 {
        let e = |d: f64| {
            let mut y = x;
            y[i] += d;
            f(y)
        };
        let hi = steps[i];
        let (p1, m1, p2, m2) = (e(hi), e(-hi), e(2.0 * hi), e(-2.0 * hi));
        g[i] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * hi);
        h[i][i] = (-p2 + 16.0 * p1 - 30.0 * f0 + 16.0 * m1 - m2) / (12.0 * hi * hi);
    }
    let (h0, h1) = (steps[0], steps[1]);
    let ev = |a: f64, b: f64| f([x[0] + a, x[1] + b]);
    let cross = (ev(h0, h1) - ev(h0, -h1) - ev(-h0, h1) + ev(-h0, -h1)) / (4.0 * h0 * h1);
    h[0][1] = cross;
    h[1][0] = cross;
    (f0, g, h)
}

fn newton_2d(f: &impl Fn([f64; 2]) -> f64, start: [f64; 2]) -> Option<(Max2d, bool)> {
    let mut x = start;
    let mut fx = sanitize(f(x));
    if !fx.is_finite() {
        return None;
    }
    let mut gnorm = f64::INFINITY;
    for it in 0..300 {
        let (f0, g, h) = grad_hess_2d(f, x);
        fx = f0;
        gnorm = g[0].abs().max(g[1].abs());
        if gnorm <= 1e-10 * fx.abs().max(1.0) {
            return Some((
                Max2d {
                    arg: x,
                    value: fx,
                    gradient_norm: gnorm,
                    iterations: it,
                    start_spread: 0.0,
                    multimodal: false,
                },
                true,
            ));
        }
        // Newton direction on -H, regularized until negative definite.
        let mut mu = 0.0;
        let dir = loop {
            let a = h[0][0] - mu;
            let d = h[1][1] - mu;
            let b = h[0][1];
            let det = a * d - b * b;
            if a < 0.0 && det > 0.0 {
                // solve H p = -g
                let p0 = (-g[0] * d + g[1] * b) / det;
                let p1 = (-g[1] * a + g[0] * b) / det;
                break [p0, p1];
            }
            mu = if mu == 0.0 {
                1e-6 * (h[0][0].abs() + h[1][1].abs()).max(1.0)
            } else {
                mu * 10.0
            };
            if mu > 1e12 {
                break [g[0] * 1e-3, g[1] * 1e-3];
            }
        };
        let slope = g[0] * dir[0] + g[1] * dir[1];
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let y = [x[0] + t * dir[0], x[1] + t * dir[1]];
            let fy = sanitize(f(y));
            if fy >= fx + 1e-4 * t * slope.min(0.0).abs().min(slope.abs()) * 0.0 && fy >= fx - 1e-14 * fx.abs().max(1.0) {
                let step = (t * dir[0]).abs().max((t * dir[1]).abs());
                x = y;
                accepted = true;
                if step <= 1e-13 * x[0].abs().max(x[1].abs()).max(1.0) {
                    let fin = sanitize(f(x));
                    return Some((
                        Max2d {
                            arg: x,
                            value: fin,
                            gradient_norm: gnorm,
                            iterations: it,
                            start_spread: 0.0,
                            multimodal: false,
                        },
                        true,
                    ));
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // cannot improve: at a maximum to within round-off
            return Some((
                Max2d {
                    arg: x,
                    value: fx,
                    gradient_norm: gnorm,
                    iterations: it,
                    start_spread: 0.0,
                    multimodal: false,
                },
                gnorm <= 1e-7 * fx.abs().max(1.0),
            ));
        }
    }
    Some((
        Max2d {
            arg: x,
            value: fx,
            gradient_norm: gnorm,
            iterations: 300,
            start_spread: 0.0,
            multimodal: false,
        },
        false,
    ))
}

/// Multi-start damped Newton maximization of a smooth function of two
/// unconstrained coordinates. Starts that disagree in objective by more than
/// `1e-6` set [`Max2d::multimodal`].
pub fn maximize_2d(f: impl Fn([f64; 2]) -> f64, starts: &[[f64; 2]]) -> Result<Max2d> {
    let mut best: Option<Max2d> = None;
    let mut values = Vec::new();
    let mut worst_grad = 0.0f64;
    for &s in starts {
        if let Some((res, converged)) = newton_2d(&f, s) {
            if !converged {
                worst_grad = worst_grad.max(res.gradient_norm);
                continue;
            }
            values.push(res.value);
            if best.map_or(true, |b| res.value > b.value) {
                best = Some(res);
            }
        }
    }
    let mut best = best.ok_or_else(|| Error::NonConvergence {
        what: "2-D Newton: no start converged".into(),
        gradient_norm: worst_grad,
    })?;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    best.start_spread = hi - lo;
    best.multimodal = best.start_spread > 1e-6;
    Ok(best)
}
