//! BFGS with a strong-Wolfe line search, for smooth unconstrained minimization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `‖∇f‖∞` falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers `f` by less than `f_tol · (1 + |f|)`.
    pub f_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            grad_tol: 1e-8,
            f_tol: 1e-14,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BfgsStatus {
    GradientTolerance,
    FunctionTolerance,
    /// No step satisfying the Wolfe conditions was found from the final point, even after
    /// resetting the curvature estimate. Usually means the iterate sits at the precision floor.
    LineSearchStalled,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: BfgsStatus,
}

impl BfgsResult {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

struct Probe {
    alpha: f64,
    f: f64,
    dg: f64,
    x: DVector<f64>,
    g: DVector<f64>,
}

/// Minimizes `f`, which returns the value and writes the gradient into its second argument.
/// Non-finite values are treated as infeasible and shrink the line search.
pub fn minimize<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    minimize_from(f, x0, None, opts)
}

/// Like [`minimize`], starting from the inverse-Hessian approximation `h0` when given.
pub fn minimize_from<F>(
    mut f: F,
    x0: &[f64],
    h0: Option<DMatrix<f64>>,
    opts: &BfgsOptions,
) -> Result<BfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &DVector<f64>, evals: &mut usize| -> (f64, DVector<f64>) {
        *evals += 1;
        let mut g = vec![0.0; n];
        let v = f(x.as_slice(), &mut g);
        let g = DVector::from_vec(g);
        if v.is_finite() && g.iter().all(|c| c.is_finite()) {
            (v, g)
        } else {
            (f64::INFINITY, g)
        }
    };

    let mut x = DVector::from_column_slice(x0);
    let (mut fx, mut gx) = eval(&x, &mut evals);
    if !fx.is_finite() {
        return Err(Error::Optimizer {
            message: "objective is not finite at the starting point".into(),
            iterations: 0,
            grad_norm: f64::NAN,
            last_step: 0.0,
        });
    }
    let (mut h, mut fresh_h) = match h0 {
        Some(h) if h.shape() == (n, n) && h.iter().all(|v| v.is_finite()) => (h, false),
        _ => (DMatrix::<f64>::identity(n, n), true),
    };
    let mut status = BfgsStatus::MaxIterations;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it;
        if gx.amax() < opts.grad_tol {
            status = BfgsStatus::GradientTolerance;
            break;
        }
        let mut d = -(&h * &gx);
        let mut dg0 = d.dot(&gx);
        if !(dg0 < 0.0) {
            h = DMatrix::identity(n, n);
            fresh_h = true;
            d = -gx.clone();
            dg0 = d.dot(&gx);
        }
        let alpha0 = if fresh_h {
            (1.0 / gx.norm()).min(1.0)
        } else {
            1.0
        };
        let probe = match line_search(&mut eval, &mut evals, &x, fx, dg0, &d, alpha0, opts) {
            Some(p) => p,
            None if !fresh_h => {
                h = DMatrix::identity(n, n);
                fresh_h = true;
                continue;
            }
            None => {
                status = BfgsStatus::LineSearchStalled;
                break;
            }
        };
        let s = &probe.x - &x;
        let y = &probe.g - &gx;
        let df = fx - probe.f;
        x = probe.x;
        gx = probe.g;
        fx = probe.f;
        iterations = it + 1;

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh_h {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh_h = false;
        }
        if df.abs() <= opts.f_tol * (1.0 + fx.abs()) {
            status = if gx.amax() < opts.grad_tol {
                BfgsStatus::GradientTolerance
            } else {
                BfgsStatus::FunctionTolerance
            };
            break;
        }
    }
    if status == BfgsStatus::MaxIterations && gx.amax() < opts.grad_tol {
        status = BfgsStatus::GradientTolerance;
    }
    Ok(BfgsResult {
        x: x.as_slice().to_vec(),
        f: fx,
        grad: gx.as_slice().to_vec(),
        iterations,
        evaluations: evals,
        status,
    })
}

#[allow(clippy::too_many_arguments)]
fn line_search<E>(
    eval: &mut E,
    evals: &mut usize,
    x: &DVector<f64>,
    f0: f64,
    dg0: f64,
    d: &DVector<f64>,
    alpha0: f64,
    opts: &BfgsOptions,
) -> Option<Probe>
where
    E: FnMut(&DVector<f64>, &mut usize) -> (f64, DVector<f64>),
{
    let mut at = |alpha: f64, evals: &mut usize| {
        let xn = x + d * alpha;
        let (f, g) = eval(&xn, evals);
        let dg = if f.is_finite() { g.dot(d) } else { f64::NAN };
        Probe {
            alpha,
            f,
            dg,
            x: xn,
            g,
        }
    };

    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        dg: dg0,
        x: x.clone(),
        g: DVector::zeros(0),
    };
    let mut alpha = alpha0;
    let mut budget = opts.max_line_search;
    let mut first = true;
    while budget > 0 {
        budget -= 1;
        let cur = at(alpha, evals);
        if !cur.f.is_finite() {
            // infeasible: pull back towards the last good point
            alpha = prev.alpha + 0.25 * (alpha - prev.alpha);
            if alpha - prev.alpha < 1e-16 {
                return None;
            }
            continue;
        }
        if cur.f > f0 + opts.c1 * alpha * dg0 || (!first && cur.f >= prev.f) {
            return zoom(&mut at, evals, prev, cur, f0, dg0, opts, budget);
        }
        if cur.dg.abs() <= -opts.c2 * dg0 {
            return Some(cur);
        }
        if cur.dg >= 0.0 {
            return zoom(&mut at, evals, cur, prev, f0, dg0, opts, budget);
        }
        first = false;
        alpha *= 2.0;
        prev = cur;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<A>(
    at: &mut A,
    evals: &mut usize,
    mut lo: Probe,
    mut hi: Probe,
    f0: f64,
    dg0: f64,
    opts: &BfgsOptions,
    mut budget: usize,
) -> Option<Probe>
where
    A: FnMut(f64, &mut usize) -> Probe,
{
    while budget > 0 {
        budget -= 1;
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        if b - a < 1e-16 * b.max(1.0) {
            break;
        }
        let mut alpha = interpolate(&lo, &hi);
        let margin = 0.1 * (b - a);
        if !(alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (a + b);
        }
        let cur = at(alpha, evals);
        if !cur.f.is_finite() || cur.f > f0 + opts.c1 * alpha * dg0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.dg.abs() <= -opts.c2 * dg0 {
                return Some(cur);
            }
            if cur.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Accept the best sufficient-decrease point if the curvature condition never held.
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

/// Minimizer of the cubic through two probes, falling back to the quadratic.
fn interpolate(p: &Probe, q: &Probe) -> f64 {
    if !(q.f.is_finite() && q.dg.is_finite()) {
        let a = p.alpha;
        let b = q.alpha;
        return 0.5 * (a + b);
    }
    let d1 = p.dg + q.dg - 3.0 * (p.f - q.f) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.dg * q.dg;
    if disc >= 0.0 {
        let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
        let alpha = q.alpha - (q.alpha - p.alpha) * (q.dg + d2 - d1) / (q.dg - p.dg + 2.0 * d2);
        if alpha.is_finite() {
            return alpha;
        }
    }
    let h = q.alpha - p.alpha;
    let denom = 2.0 * (q.f - p.f - p.dg * h);
    if denom > 0.0 {
        p.alpha - p.dg * h * h / denom
    } else {
        0.5 * (p.alpha + q.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &BfgsOptions::default()).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-6);
        assert!(r.iterations < 100, "{}", r.iterations);
    }

    #[test]
    fn quadratic_converges_on_gradient() {
        let q = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..x.len() {
                let w = (i + 1) as f64;
                g[i] = 2.0 * w * (x[i] - 1.0);
                f += w * (x[i] - 1.0).powi(2);
            }
            f
        };
        let r = minimize(q, &[0.0; 6], &BfgsOptions::default()).unwrap();
        assert_eq!(r.status, BfgsStatus::GradientTolerance);
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn respects_infeasible_region() {
        // f = x − ln x on x > 0, minimum at 1; the first full step lands at x < 0
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] <= 0.0 {
                return f64::INFINITY;
            }
            g[0] = 1.0 - 1.0 / x[0];
            x[0] - x[0].ln()
        };
        let r = minimize(f, &[0.05], &BfgsOptions::default()).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64], _: &mut [f64]| f64::NAN;
        assert!(minimize(f, &[0.0], &BfgsOptions::default()).is_err());
    }
}
